use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{info_nce_loss, retrieval_hits};
use super::optim::{clip_grad_norm, lr_schedule, AdamConfig, AdamW};
use super::{Result, TrainConfig, TrainError};
use crate::checkpoint::save_checkpoint;
use crate::data::{make_batches, Batch, SentencePair, Vocab};
use crate::model::{encode, Dropout, Model};
use crate::scalar::Scalar;
use crate::tensor::{Graph, TensorError};

/// Lower and upper clamp of the log temperature.
pub fn logit_scale_bounds() -> (f64, f64) {
    ((1.0f64 / 100.0).ln(), 100.0f64.ln())
}

/// One logged row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub elapsed_seconds: f64,
}

pub const METRICS_HEADER: &str = "step,loss,lr,elapsed_seconds";

impl MetricRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{:.6}", self.step, self.loss, self.lr, self.elapsed_seconds)
    }
}

/// Where a run writes its side outputs; both are optional.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub checkpoint_dir: Option<PathBuf>,
    pub metrics_csv: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    /// Logged rows at step 1, every `log_every` steps and the final step.
    pub metrics: Vec<MetricRecord>,
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

/// Mean of the last `window` values.
pub fn smoothed_tail(values: &[f64], window: usize) -> f64 {
    let w = window.clamp(1, values.len().max(1));
    let tail = &values[values.len().saturating_sub(w)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

/// Streams batches for `steps` updates, reshuffling each epoch with a seed
/// derived from the run seed, through a bounded queue of capacity 2.
fn spawn_batches<'s>(
    scope: &'s std::thread::Scope<'s, '_>,
    pairs: &'s [SentencePair],
    vocab: &'s Vocab,
    cfg: &'s TrainConfig,
) -> Receiver<Result<Batch>> {
    let (tx, rx) = sync_channel(2);
    scope.spawn(move || {
        let mut sent = 0usize;
        let mut epoch = 0u64;
        while sent < cfg.total_steps {
            let seed = cfg.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let batches = match make_batches(pairs, cfg.batch_size, cfg.max_len, vocab, seed) {
                Ok(b) if b.is_empty() => Err(TrainError::InvalidInput(format!(
                    "{} pairs cannot fill one batch of {}",
                    pairs.len(),
                    cfg.batch_size
                ))),
                other => other.map_err(TrainError::from),
            };
            let batches = match batches {
                Ok(b) => b,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            };
            for b in batches.into_iter().take(cfg.total_steps - sent) {
                if tx.send(Ok(b)).is_err() {
                    return;
                }
                sent += 1;
            }
            epoch += 1;
        }
    });
    rx
}

fn is_non_finite(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Tensor(TensorError::NonFinite { .. })
            | TrainError::Model(crate::model::ModelError::Tensor(TensorError::NonFinite { .. }))
    )
}

/// Loss and gradients of one batch. Gradients follow parameter order.
pub fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    batch: &Batch,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Vec<T>>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let p = model.config().dropout_p;
    let (ea, eb) = match dropout_rng {
        Some(rng) if p > 0.0 => {
            let ea = encode(&mut g, model, &bound, &batch.ids_a, &batch.mask_a, Some(Dropout { p, rng: &mut *rng }))?;
            let eb = encode(&mut g, model, &bound, &batch.ids_b, &batch.mask_b, Some(Dropout { p, rng }))?;
            (ea, eb)
        }
        _ => (
            encode(&mut g, model, &bound, &batch.ids_a, &batch.mask_a, None)?,
            encode(&mut g, model, &bound, &batch.ids_b, &batch.mask_b, None)?,
        ),
    };
    let loss = info_nce_loss(&mut g, ea, eb, bound.var(model.logit_scale_index()))?;
    let value = g.value(loss).item()?.to_f64_lossless();
    g.backward(loss)?;
    let grads = model
        .params()
        .iter()
        .zip(bound.vars())
        .map(|(p, &v)| g.take_grad(v).unwrap_or_else(|| vec![T::zero(); p.tensor.numel()]))
        .collect();
    Ok((value, grads))
}

fn clamp_logit_scale<T: Scalar>(model: &mut Model<T>) {
    let (lo, hi) = logit_scale_bounds();
    let idx = model.logit_scale_index();
    let v = &mut model.params_mut().get_mut(idx).tensor.data_mut()[0];
    *v = (*v).max(T::lit(lo)).min(T::lit(hi));
}

/// Contrastive training. Deterministic given the model, data and `cfg.seed`.
///
/// A non-finite loss or gradient halts the run; checkpoints already written
/// remain and the error names the latest one.
pub fn train_loop<T: Scalar>(
    mut model: Model<T>,
    pairs: &[SentencePair],
    vocab: &Vocab,
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if model.config().vocab_size < vocab.len() {
        return Err(TrainError::InvalidInput(format!(
            "model vocab_size {} is smaller than the vocabulary ({})",
            model.config().vocab_size,
            vocab.len()
        )));
    }
    if let Some(dir) = &outputs.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    }
    let mut metrics_out = match &outputs.metrics_csv {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).map_err(|e| TrainError::io(path, e))?);
            writeln!(w, "{METRICS_HEADER}").map_err(|e| TrainError::io(path, e))?;
            Some((w, path.clone()))
        }
        None => None,
    };

    let mut opt = AdamW::new(
        AdamConfig {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        },
        model.params(),
    );
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);

    let start = Instant::now();
    let mut metrics = Vec::new();
    let mut losses = Vec::with_capacity(cfg.total_steps);
    let mut checkpoints: Vec<PathBuf> = Vec::new();

    std::thread::scope(|scope| -> Result<()> {
        let rx = spawn_batches(scope, pairs, vocab, cfg);
        for step in 1..=cfg.total_steps {
            let batch = rx.recv().map_err(|_| TrainError::InvalidInput("batch producer stopped early".into()))??;
            let lr = lr_schedule(step, cfg);
            let halt = |reason: String| TrainError::NonFiniteLoss {
                step,
                reason,
                last_good: checkpoints.last().map(|p| p.display().to_string()),
            };
            let (loss, mut grads) = match batch_gradients(&model, &batch, Some(&mut dropout_rng)) {
                Ok(r) => r,
                Err(e) if is_non_finite(&e) => return Err(halt(e.to_string())),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(halt(format!("loss is {loss}")));
            }
            if let Some(max) = cfg.grad_clip {
                clip_grad_norm(&mut grads, max);
            }
            match opt.step(model.params_mut(), &grads, lr) {
                Err(e @ TrainError::NonFiniteGradient { .. }) => return Err(halt(e.to_string())),
                other => other?,
            }
            clamp_logit_scale(&mut model);
            losses.push(loss);

            if step == 1 || step % cfg.log_every == 0 || step == cfg.total_steps {
                let rec = MetricRecord {
                    step,
                    loss,
                    lr,
                    elapsed_seconds: start.elapsed().as_secs_f64(),
                };
                log::info!("step {step} loss {loss:.5} lr {lr:.3e}");
                if let Some((w, path)) = metrics_out.as_mut() {
                    writeln!(w, "{}", rec.csv_line())
                        .and_then(|_| w.flush())
                        .map_err(|e| TrainError::io(path, e))?;
                }
                metrics.push(rec);
            }
            if let Some(dir) = &outputs.checkpoint_dir {
                if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                    let path = dir.join(format!("step_{step:06}.ckpt"));
                    save_checkpoint(&model, &path)?;
                    checkpoints.push(path);
                }
            }
        }
        Ok(())
    })?;

    Ok(TrainOutcome {
        model,
        metrics,
        losses,
        checkpoints,
    })
}

/// Fraction of rows whose nearest partner in their own batch is the matched
/// sentence, over the full batches of a seeded shuffle.
pub fn retrieval_accuracy<T: Scalar>(
    model: &Model<T>,
    pairs: &[SentencePair],
    vocab: &Vocab,
    batch_size: usize,
    max_len: usize,
    seed: u64,
) -> Result<f64> {
    let batches = make_batches(pairs, batch_size, max_len, vocab, seed)?;
    if batches.is_empty() {
        return Err(TrainError::InvalidInput("no full batch to evaluate".into()));
    }
    let mut hits = 0;
    let mut total = 0;
    for b in &batches {
        let ea = model.encode_batch(&b.ids_a, &b.mask_a)?;
        let eb = model.encode_batch(&b.ids_b, &b.mask_b)?;
        hits += retrieval_hits(&ea, &eb);
        total += b.len();
    }
    Ok(hits as f64 / total as f64)
}

impl TrainError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        TrainError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }
}
