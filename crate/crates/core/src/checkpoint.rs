//! Binary model checkpoints.
//!
//! Layout: the magic `PETECKPT`, a little-endian `u64` header length, a UTF-8
//! JSON header `{format_version, dtype, config, tensors: [{name, shape,
//! offset}]}`, the payload of little-endian parameter values in manifest
//! order, and a trailing little-endian `u64` payload length.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ModelConfig, ModelError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PETECKPT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint holds {found} values, expected {expected}")]
    DtypeMismatch { found: String, expected: &'static str },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("inconsistent manifest at tensor {name}: {reason}")]
    Manifest { name: String, reason: String },
    #[error("checkpoint does not match the expected model at tensor {name}: {reason}")]
    ConfigMismatch { name: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub dtype: String,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

/// Serializes a model to bytes.
pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut payload = Vec::with_capacity(model.params().scalar_count() * T::BYTES);
    let mut tensors = Vec::with_capacity(model.params().len());
    for p in model.params().iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset: payload.len(),
        });
        for &v in p.tensor.data() {
            v.write_le(&mut payload);
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        config: model.config().clone(),
        tensors,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + payload.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out
}

fn read_u64(bytes: &[u8]) -> u64 {
    u64::from_le_bytes(bytes.try_into().expect("8 bytes"))
}

/// Parses the header without decoding tensors.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    split(bytes).map(|(h, _)| h)
}

fn split(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated(format!("{} bytes is shorter than the preamble", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = read_u64(&bytes[8..16]) as usize;
    let rest = &bytes[16..];
    if rest.len() < header_len.saturating_add(8) {
        return Err(CheckpointError::Truncated(format!(
            "header of {header_len} bytes and trailer do not fit in {} remaining bytes",
            rest.len()
        )));
    }
    let value: serde_json::Value =
        serde_json::from_slice(&rest[..header_len]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CheckpointError::Header("missing format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(CheckpointError::VersionMismatch {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(value).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let body = &rest[header_len..];
    let (payload, trailer) = body.split_at(body.len() - 8);
    let declared = read_u64(trailer);
    if declared != payload.len() as u64 {
        return Err(CheckpointError::Truncated(format!(
            "trailer declares {declared} payload bytes, found {}",
            payload.len()
        )));
    }
    Ok((header, payload))
}

/// Decodes a model, checking version, dtype, trailer and manifest.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let (header, payload) = split(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(CheckpointError::DtypeMismatch {
            found: header.dtype,
            expected: T::DTYPE,
        });
    }
    let mut expected_offset = 0usize;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let bad = |reason: String| CheckpointError::Manifest {
            name: entry.name.clone(),
            reason,
        };
        if entry.offset != expected_offset {
            return Err(bad(format!("offset {} is not contiguous (expected {expected_offset})", entry.offset)));
        }
        let numel: usize = entry.shape.iter().product();
        let end = entry.offset + numel * T::BYTES;
        if end > payload.len() {
            return Err(bad(format!("ends at byte {end}, payload has {}", payload.len())));
        }
        let data = payload[entry.offset..end].chunks_exact(T::BYTES).map(T::read_le).collect();
        let tensor = Tensor::new(entry.shape.clone(), data).map_err(|e| bad(e.to_string()))?;
        tensors.push((entry.name.clone(), tensor));
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(CheckpointError::Manifest {
            name: header.tensors.last().map(|e| e.name.clone()).unwrap_or_default(),
            reason: format!("manifest covers {expected_offset} of {} payload bytes", payload.len()),
        });
    }
    Ok(Model::from_parts(header.config, tensors)?)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    from_bytes(&bytes)
}

/// Loads a checkpoint that must match `expected` tensor by tensor.
pub fn load_checkpoint_as<T: Scalar>(path: &Path, expected: &ModelConfig) -> Result<Model<T>> {
    let model = load_checkpoint::<T>(path)?;
    let reference = Model::<T>::build(expected.clone())?;
    let mut ours = model.params().iter();
    for want in reference.params().iter() {
        match ours.next() {
            Some(have) if have.name == want.name && have.tensor.shape() == want.tensor.shape() => {}
            Some(have) => {
                return Err(CheckpointError::ConfigMismatch {
                    name: want.name.clone(),
                    reason: format!(
                        "expected shape {:?}, checkpoint has {} with shape {:?}",
                        want.tensor.shape(),
                        have.name,
                        have.tensor.shape()
                    ),
                })
            }
            None => {
                return Err(CheckpointError::ConfigMismatch {
                    name: want.name.clone(),
                    reason: "missing from checkpoint".into(),
                })
            }
        }
    }
    if let Some(extra) = ours.next() {
        return Err(CheckpointError::ConfigMismatch {
            name: extra.name.clone(),
            reason: "not present in the expected model".into(),
        });
    }
    if model.config() != expected {
        return Err(CheckpointError::ConfigMismatch {
            name: "config".into(),
            reason: "tensor shapes agree but hyper-parameters differ".into(),
        });
    }
    Ok(model)
}
