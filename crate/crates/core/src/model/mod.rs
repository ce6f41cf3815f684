//! Minimal transformer encoder with interchangeable embedding heads.
//!
//! Layout per layer is pre-norm: `x + Attn(RMSNorm(x))` followed by
//! `x + GeGLU(RMSNorm(x))`. Attention uses pairwise rotary positions.
//! Sentence vectors are the final-normed token states averaged over valid
//! positions, optionally followed by a `d × d` projection.
//!
//! The Fourier head computes `E(p) = GeGLU(T(p)) + T(p)` where `T(p)` is the
//! deterministic base vector from [`crate::fourier`]; the learned head is a
//! plain table lookup.

mod config;
mod layers;

pub use config::{EmbeddingKind, FfnFactor, ModelConfig};
pub use layers::{
    attention_block, embedding_forward, encode, geglu_ffn, rmsnorm, rotary_apply, AttentionParams, Dropout,
    FfnParams, RMS_EPS, ROTARY_BASE,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::fourier::EmbeddingError;
use crate::ids::{GridShapeError, TokenGrid};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Grid(#[from] GridShapeError),
    #[error("batch row {0} has no valid tokens")]
    EmptyRow(usize),
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SeqTooLong { len: usize, max: usize },
    #[error("mask has {got} entries, ids have {expected}")]
    MaskShape { expected: usize, got: usize },
    #[error("parameter {name}: {reason}")]
    Param { name: String, reason: String },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Initial temperature `1/0.07`, stored as its log.
pub fn initial_logit_scale() -> f64 {
    (1.0f64 / 0.07).ln()
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Whether decoupled weight decay applies (matrices only).
    pub decay: bool,
}

/// Ordered parameter list; order is the checkpoint and optimizer order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>, decay: bool) -> usize {
        self.params.push(Param {
            name: name.into(),
            tensor,
            decay,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.params[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total number of scalars across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FfnIdx {
    pub norm: usize,
    pub w_a: usize,
    pub w_b: usize,
    pub w_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum EmbedIdx {
    Fourier(FfnIdx),
    Learned { table: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerIdx {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ffn: FfnIdx,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub embed: EmbedIdx,
    pub layers: Vec<LayerIdx>,
    pub final_norm: usize,
    pub pool_proj: Option<usize>,
    pub logit_scale: usize,
}

/// Encoder parameters together with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    cfg: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

/// Parameters registered on a [`Graph`] for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps handles already registered on a graph, one per parameter in
    /// canonical order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, param_index: usize) -> Var {
        self.vars[param_index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
    normal: Normal<f64>,
    std: f64,
}

impl Init<'_> {
    /// Normal(0, std) truncated at ±2 std by rejection.
    fn sample(&mut self) -> f64 {
        loop {
            let v = self.normal.sample(self.rng);
            if v.abs() <= 2.0 * self.std {
                return v;
            }
        }
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize) -> Tensor<T> {
        let data = (0..rows * cols).map(|_| T::lit(self.sample())).collect();
        Tensor::new([rows, cols], data).expect("sized buffer")
    }
}

const INIT_STD: f64 = 0.02;

impl<T: Scalar> Model<T> {
    /// Allocates and initialises every parameter deterministically from
    /// `cfg.seed`: matrices ~ truncated Normal(0, 0.02), RMSNorm gains = 1,
    /// log temperature = ln(1/0.07).
    pub fn build(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init = Init {
            rng: &mut rng,
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
            std: INIT_STD,
        };
        let mut params = ParamStore::new();
        let d = cfg.d_model;
        let ones = |n: usize| Tensor::full([n], T::one());

        let ffn = |prefix: &str, hidden: usize, params: &mut ParamStore<T>, init: &mut Init| FfnIdx {
            norm: params.push(format!("{prefix}.norm"), ones(d), false),
            w_a: params.push(format!("{prefix}.w_a"), init.matrix(d, hidden), true),
            w_b: params.push(format!("{prefix}.w_b"), init.matrix(d, hidden), true),
            w_out: params.push(format!("{prefix}.w_out"), init.matrix(hidden, d), true),
        };

        let embed = match cfg.embedding_kind {
            EmbeddingKind::Fourier => EmbedIdx::Fourier(ffn("embed.head", cfg.head_hidden(), &mut params, &mut init)),
            EmbeddingKind::Learned => EmbedIdx::Learned {
                table: params.push("embed.table", init.matrix(cfg.vocab_size, d), true),
            },
        };
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("layers.{l}");
            let attn_norm = params.push(format!("{p}.attn.norm"), ones(d), false);
            let wq = params.push(format!("{p}.attn.wq"), init.matrix(d, d), true);
            let wk = params.push(format!("{p}.attn.wk"), init.matrix(d, d), true);
            let wv = params.push(format!("{p}.attn.wv"), init.matrix(d, d), true);
            let wo = params.push(format!("{p}.attn.wo"), init.matrix(d, d), true);
            let ffn = ffn(&format!("{p}.ffn"), cfg.ffn_hidden(), &mut params, &mut init);
            layers.push(LayerIdx {
                attn_norm,
                wq,
                wk,
                wv,
                wo,
                ffn,
            });
        }
        let final_norm = params.push("final_norm", ones(d), false);
        let pool_proj = cfg
            .pool_proj
            .then(|| params.push("pool_proj", init.matrix(d, d), true));
        let logit_scale = params.push("logit_scale", Tensor::scalar(T::lit(initial_logit_scale())), false);

        Ok(Self {
            cfg,
            params,
            layout: Layout {
                embed,
                layers,
                final_norm,
                pool_proj,
                logit_scale,
            },
        })
    }

    /// Rebuilds a model from a configuration and externally supplied
    /// parameter values in canonical order.
    pub fn from_parts(cfg: ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut model = Self::build(cfg)?;
        if tensors.len() != model.params.len() {
            return Err(ModelError::Param {
                name: tensors
                    .get(model.params.len())
                    .map(|(n, _)| n.clone())
                    .unwrap_or_else(|| model.params.get(tensors.len()).name.clone()),
                reason: format!("expected {} tensors, found {}", model.params.len(), tensors.len()),
            });
        }
        for (slot, (name, t)) in model.params.iter_mut().zip(tensors) {
            if slot.name != name || slot.tensor.shape() != t.shape() {
                return Err(ModelError::Param {
                    name: slot.name.clone(),
                    reason: format!("expected {} with shape {:?}, found {name} with shape {:?}", slot.name, slot.tensor.shape(), t.shape()),
                });
            }
            slot.tensor = t;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn logit_scale_index(&self) -> usize {
        self.layout.logit_scale
    }

    pub fn logit_scale(&self) -> T {
        self.params.get(self.layout.logit_scale).tensor.data()[0]
    }

    /// Registers every parameter on `graph`, as differentiable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let t = p.tensor.clone();
                if trainable {
                    graph.param(t)
                } else {
                    graph.constant(t)
                }
            })
            .collect();
        Bound { vars }
    }

    /// Inference-mode sentence vectors `[B, d]`.
    pub fn encode_batch(&self, ids: &TokenGrid, mask: &[u8]) -> Result<Tensor<T>> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph, false);
        let out = encode(&mut graph, self, &bound, ids, mask, None)?;
        Ok(graph.value(out).clone())
    }
}

/// Closed-form parameter counts per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub embedding_table: usize,
    pub embedding_head: usize,
    pub attention: usize,
    pub ffn: usize,
    pub norms: usize,
    pub pool_proj: usize,
    pub logit_scale: usize,
    pub total: usize,
}

/// Exact parameter count of [`Model::build`] for `cfg`, without allocating.
pub fn param_count(cfg: &ModelConfig) -> ParamCount {
    let d = cfg.d_model;
    let geglu = |hidden: usize| 3 * d * hidden;
    let (embedding_table, embedding_head, head_norm) = match cfg.embedding_kind {
        EmbeddingKind::Learned => (cfg.vocab_size * d, 0, 0),
        EmbeddingKind::Fourier => (0, geglu(cfg.head_hidden()) + d, d),
    };
    let attention = cfg.n_layers * 4 * d * d;
    let ffn = cfg.n_layers * geglu(cfg.ffn_hidden());
    // two gains per layer plus the final norm; the head gain is counted in
    // the head and repeated here for the norm breakdown.
    let norms = cfg.n_layers * 2 * d + d + head_norm;
    let pool_proj = if cfg.pool_proj { d * d } else { 0 };
    let logit_scale = 1;
    let total = embedding_table + embedding_head + attention + ffn + (norms - head_norm) + pool_proj + logit_scale;
    ParamCount {
        embedding_table,
        embedding_head,
        attention,
        ffn,
        norms,
        pool_proj,
        logit_scale,
        total,
    }
}
