//! Zero-shot similarity evaluation: cosine scores against gold ratings,
//! Pearson and Spearman correlation. All statistics accumulate in `f64`.

use serde::Serialize;
use thiserror::Error;

use crate::data::{collate, SentencePair, Vocab};
use crate::ids::TokenGrid;
use crate::model::{Model, ModelError};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("cosine of a zero vector")]
    ZeroVector,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 items, got {0}")]
    TooFew(usize),
    #[error("undefined correlation: a series is constant")]
    ConstantSeries,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("pair {0} has no gold score")]
    MissingScore(usize),
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// `u·v / (‖u‖‖v‖)` clamped to `[-1, 1]`.
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(EvalError::LengthMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.to_f64_lossless(), b.to_f64_lossless());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if !(dot.is_finite() && nu.is_finite() && nv.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(EvalError::TooFew(n));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ConstantSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Anything that maps a padded id grid to one vector per row.
pub trait SentenceEncoder: Sync {
    fn encode_rows(&self, ids: &TokenGrid, mask: &[u8]) -> Result<Vec<Vec<f64>>>;
}

impl<T: Scalar> SentenceEncoder for Model<T> {
    fn encode_rows(&self, ids: &TokenGrid, mask: &[u8]) -> Result<Vec<Vec<f64>>> {
        let out = self.encode_batch(ids, mask)?;
        Ok((0..ids.batch())
            .map(|r| out.row(r).iter().map(|v| v.to_f64_lossless()).collect())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairRecord {
    pub cosine: f64,
    pub gold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub pearson: f64,
    pub spearman: f64,
    pub n: usize,
    pub records: Vec<PairRecord>,
}

impl EvalReport {
    pub fn from_records(records: Vec<PairRecord>) -> Result<Self> {
        let cos: Vec<f64> = records.iter().map(|r| r.cosine).collect();
        let gold: Vec<f64> = records.iter().map(|r| r.gold).collect();
        Ok(Self {
            pearson: pearson(&cos, &gold)?,
            spearman: spearman(&cos, &gold)?,
            n: records.len(),
            records,
        })
    }

    pub fn to_text(&self) -> String {
        format!(
            "pairs     {}\npearson   {:.4}\nspearman  {:.4}\n",
            self.n, self.pearson, self.spearman
        )
    }

    /// `{"pearson": .., "spearman": .., "n": ..}`.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "pearson": self.pearson, "spearman": self.spearman, "n": self.n }).to_string()
    }
}

/// Options for [`evaluate_sts`].
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub max_len: usize,
    /// Worker threads encoding disjoint batches; 1 runs inline.
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_len: 128,
            threads: 1,
        }
    }
}

/// Encodes both sides of every scored pair in input order, scores each pair
/// by cosine and correlates against the gold ratings.
pub fn evaluate_sts<E: SentenceEncoder>(
    encoder: &E,
    pairs: &[SentencePair],
    vocab: &Vocab,
    opts: EvalOptions,
) -> Result<EvalReport> {
    if opts.batch_size == 0 {
        return Err(EvalError::ZeroBatch);
    }
    if pairs.len() < 2 {
        return Err(EvalError::TooFew(pairs.len()));
    }
    if let Some(i) = pairs.iter().position(|p| p.score.is_none()) {
        return Err(EvalError::MissingScore(i));
    }
    let chunks: Vec<(usize, &[SentencePair])> = pairs.chunks(opts.batch_size).enumerate().collect();
    let run = |(idx, chunk): &(usize, &[SentencePair])| -> Result<(usize, Vec<PairRecord>)> {
        let refs: Vec<&SentencePair> = chunk.iter().collect();
        let batch = collate(&refs, opts.max_len, vocab).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        let a = encoder.encode_rows(&batch.ids_a, &batch.mask_a)?;
        let b = encoder.encode_rows(&batch.ids_b, &batch.mask_b)?;
        let recs = a
            .iter()
            .zip(&b)
            .zip(chunk.iter())
            .map(|((u, v), p)| {
                Ok(PairRecord {
                    cosine: cosine(u, v)?,
                    gold: p.score.unwrap_or_default(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((*idx, recs))
    };

    let threads = opts.threads.clamp(1, chunks.len());
    let mut parts: Vec<(usize, Vec<PairRecord>)> = if threads == 1 {
        chunks.iter().map(run).collect::<Result<_>>()?
    } else {
        let per = chunks.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .chunks(per)
                .map(|group| s.spawn(move || group.iter().map(run).collect::<Result<Vec<_>>>()))
                .collect();
            let mut all = Vec::new();
            for h in handles {
                all.extend(h.join().expect("eval worker panicked")?);
            }
            Ok::<_, EvalError>(all)
        })?
    };
    parts.sort_by_key(|(i, _)| *i);
    EvalReport::from_records(parts.into_iter().flat_map(|(_, r)| r).collect())
}
