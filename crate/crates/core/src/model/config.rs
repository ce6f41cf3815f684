use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Which embedding head feeds the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// Fourier base vector refined by a residual GeGLU block.
    Fourier,
    /// Conventional `V × d` lookup table.
    Learned,
}

impl FromStr for EmbeddingKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fourier" => Ok(Self::Fourier),
            "learned" => Ok(Self::Learned),
            other => Err(ModelError::InvalidConfig(format!(
                "unknown embedding kind {other:?} (expected fourier or learned)"
            ))),
        }
    }
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fourier => "fourier",
            Self::Learned => "learned",
        })
    }
}

/// Exact rational expansion factor of a feed-forward block, e.g. `4` or `1/4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FfnFactor(Ratio<u32>);

impl FfnFactor {
    pub fn new(numer: u32, denom: u32) -> Result<Self, ModelError> {
        if numer == 0 || denom == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "ffn factor {numer}/{denom} must be positive"
            )));
        }
        Ok(Self(Ratio::new(numer, denom)))
    }

    pub fn ratio(&self) -> Ratio<u32> {
        self.0
    }

    /// Hidden width `round(d · factor)`, halves rounding up.
    pub fn hidden(&self, d: usize) -> usize {
        let (n, k) = (*self.0.numer() as usize, *self.0.denom() as usize);
        (2 * d * n + k) / (2 * k)
    }
}

impl FromStr for FfnFactor {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidConfig(format!("invalid ffn factor {s:?} (expected e.g. 4 or 1/4)"));
        let r: Ratio<u32> = s.trim().parse().map_err(|_| bad())?;
        Self::new(*r.numer(), *r.denom()).map_err(|_| bad())
    }
}

impl TryFrom<String> for FfnFactor {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FfnFactor> for String {
    fn from(f: FfnFactor) -> String {
        f.to_string()
    }
}

impl fmt::Display for FfnFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Encoder hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Expansion of the per-layer GeGLU feed-forward block.
    pub ffn_factor: FfnFactor,
    /// Expansion of the GeGLU block refining the Fourier base vector.
    pub head_ffn_factor: FfnFactor,
    /// Final `d × d` projection of the pooled sentence vector.
    pub pool_proj: bool,
    pub embedding_kind: EmbeddingKind,
    pub vocab_size: usize,
    pub dropout_p: f64,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 1,
            n_heads: 1,
            d_model: 256,
            ffn_factor: FfnFactor::new(4, 1).unwrap(),
            head_ffn_factor: FfnFactor::new(1, 4).unwrap(),
            pool_proj: true,
            embedding_kind: EmbeddingKind::Fourier,
            vocab_size: 30522,
            dropout_p: 0.0,
            max_seq_len: 128,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.n_layers == 0 || self.n_heads == 0 {
            return bad("layers and heads must be positive".into());
        }
        if self.d_model == 0 || self.d_model % (2 * self.n_heads) != 0 {
            return bad(format!(
                "d_model {} must be divisible by 2 x heads ({}) so every head has an even rotary width",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout_p));
        }
        if self.embedding_kind == EmbeddingKind::Fourier && self.dropout_p > 0.0 {
            return bad(format!(
                "dropout {} is not allowed with the fourier embedding; dropout disrupts the continuous id mapping and is used for the learned baseline only",
                self.dropout_p
            ));
        }
        if self.ffn_hidden() == 0 || self.head_hidden() == 0 {
            return bad("feed-forward hidden width rounds to zero".into());
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ffn_hidden(&self) -> usize {
        self.ffn_factor.hidden(self.d_model)
    }

    pub fn head_hidden(&self) -> usize {
        self.head_ffn_factor.hidden(self.d_model)
    }
}
