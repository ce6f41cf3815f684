//! Contrastive training: symmetric InfoNCE, AdamW, warm-up schedule and the
//! step loop with metrics and checkpoints.

mod loss;
mod optim;
mod run;
#[cfg(test)]
mod tests;

pub use loss::{info_nce_loss, retrieval_hits};
pub use optim::{clip_grad_norm, lr_schedule, AdamConfig, AdamW};
pub use run::{
    batch_gradients, logit_scale_bounds, retrieval_accuracy, smoothed_tail, train_loop, MetricRecord, TrainOutcome,
    TrainOutputs, METRICS_HEADER,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::data::DataError;
use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    InvalidInput(String),
    #[error("non-finite gradient in parameter {param} at element {index}")]
    NonFiniteGradient { param: String, index: usize },
    #[error("training halted at step {step}: {reason}; last good checkpoint: {}", .last_good.as_deref().unwrap_or("none"))]
    NonFiniteLoss {
        step: usize,
        reason: String,
        last_good: Option<String>,
    },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Optimisation hyper-parameters. Defaults are the full-scale settings; desk
/// runs override steps, batch size and learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub log_every: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            total_steps: 122_700,
            peak_lr: 2e-5,
            warmup_steps: 1000,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            log_every: 100,
            checkpoint_every: 0,
            grad_clip: Some(1.0),
            max_len: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size {} must be at least 2", self.batch_size));
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if self.warmup_steps > self.total_steps {
            return bad(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr {} must be positive", self.peak_lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} {b} must lie in (0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps {} must be positive", self.adam_eps));
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip {c} must be positive"));
            }
        }
        if self.max_len < 3 {
            return bad(format!("max_len {} must be at least 3", self.max_len));
        }
        Ok(())
    }
}
