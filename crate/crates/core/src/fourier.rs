//! Deterministic Fourier base embedding.
//!
//! A token id `p` in a vocabulary of size `V` is mapped affinely to
//! `x = 2p/(V−1) − 1 ∈ [−1, 1]` and expanded into `d` components
//!
//! ```text
//! T_i(p) = sin((⌊i/2⌋ + 1)·π·x)   for even i
//! T_i(p) = cos((⌊i/2⌋ + 1)·π·x)   for odd i
//! ```
//!
//! The vector has no learnable parameters, so no `V × d` table is ever
//! stored. Because every (sin, cos) pair has unit norm, `‖T(p)‖² = d/2`.
//!
//! `x` is always computed in `f64`: for `V = 30522` adjacent ids differ by
//! about `6.6e-5`, which is close to the `f32` spacing of values near ±1.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ids::{TokenGrid, TokenId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("vocabulary size must be at least 2, got {0}")]
    VocabTooSmall(usize),
    #[error("embedding dimension must be a positive even number, got {0}")]
    BadDimension(usize),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: TokenId, vocab_size: usize },
    #[error("token id {id} at batch {batch}, position {pos} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRangeAt {
        batch: usize,
        pos: usize,
        id: TokenId,
        vocab_size: usize,
    },
    #[error("sample of {sample} tokens is invalid for vocabulary of size {vocab_size}")]
    BadSample { sample: usize, vocab_size: usize },
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// Vocabulary size and model dimension of the base embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingConfig {
    vocab_size: usize,
    d_model: usize,
}

impl EmbeddingConfig {
    pub fn new(vocab_size: usize, d_model: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(EmbeddingError::VocabTooSmall(vocab_size));
        }
        check_dim(d_model)?;
        Ok(Self { vocab_size, d_model })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// Bytes a materialised `V × d` table of `T` would occupy.
    pub fn table_bytes<T: Scalar>(&self) -> usize {
        self.vocab_size * self.d_model * T::BYTES
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 || d % 2 != 0 {
        return Err(EmbeddingError::BadDimension(d));
    }
    Ok(())
}

/// Maps `p ∈ [0, V−1]` to `2p/(V−1) − 1`.
pub fn normalize_id(p: TokenId, vocab_size: usize) -> Result<f64> {
    if vocab_size < 2 {
        return Err(EmbeddingError::VocabTooSmall(vocab_size));
    }
    if p as usize >= vocab_size {
        return Err(EmbeddingError::IdOutOfRange { id: p, vocab_size });
    }
    Ok(normalize_unchecked(p, vocab_size))
}

#[inline]
fn normalize_unchecked(p: TokenId, vocab_size: usize) -> f64 {
    2.0 * p as f64 / (vocab_size - 1) as f64 - 1.0
}

/// Direct evaluation of component `i` at `x`.
#[inline]
pub fn fourier_component(x: f64, i: usize) -> f64 {
    let angle = ((i / 2) + 1) as f64 * std::f64::consts::PI * x;
    if i % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// Expands `x` into `d` Fourier components by direct sin/cos evaluation.
pub fn fourier_expand<T: Scalar>(x: f64, d: usize) -> Result<Vec<T>> {
    check_dim(d)?;
    Ok((0..d).map(|i| T::lit(fourier_component(x, i))).collect())
}

/// Frequencies between re-anchoring the angle-addition recurrence with a
/// direct `sin_cos`, bounding accumulated rounding error.
const REANCHOR: usize = 32;

/// Writes the `d = out.len()` components for `x` using one `sin_cos` per
/// block of frequencies and the angle-addition recurrence in between.
#[inline]
fn expand_into<T: Scalar>(x: f64, out: &mut Vec<T>, d: usize) {
    let base = std::f64::consts::PI * x;
    let (s1, c1) = base.sin_cos();
    let (mut s, mut c) = (s1, c1);
    for k in 1..=d / 2 {
        if k > 1 {
            if (k - 1) % REANCHOR == 0 {
                (s, c) = (k as f64 * base).sin_cos();
            } else {
                (s, c) = (s * c1 + c * s1, c * c1 - s * s1);
            }
        }
        out.push(T::lit(s));
        out.push(T::lit(c));
    }
}

fn check_grid(ids: &TokenGrid, cfg: &EmbeddingConfig) -> Result<()> {
    for b in 0..ids.batch() {
        for (pos, &id) in ids.row(b).iter().enumerate() {
            if id as usize >= cfg.vocab_size {
                return Err(EmbeddingError::IdOutOfRangeAt {
                    batch: b,
                    pos,
                    id,
                    vocab_size: cfg.vocab_size,
                });
            }
        }
    }
    Ok(())
}

/// Fused normalise-and-expand for a `[B, S]` id grid into `[B, S, d]`.
///
/// Writes the output buffer in a single sequential pass; the only per-token
/// intermediate is `x` itself. The result is a constant (no gradient).
pub fn embed_batch_fused<T: Scalar>(ids: &TokenGrid, cfg: &EmbeddingConfig) -> Result<Tensor<T>> {
    check_grid(ids, cfg)?;
    let d = cfg.d_model;
    let mut out = Vec::with_capacity(ids.ids().len() * d);
    for &id in ids.ids() {
        expand_into(normalize_unchecked(id, cfg.vocab_size), &mut out, d);
    }
    Ok(Tensor::new([ids.batch(), ids.seq(), d], out).expect("buffer sized from grid"))
}

/// Fused path over `ids` written straight into `out` (length `ids.len()·d`).
pub(crate) fn embed_ids_into<T: Scalar>(ids: &[TokenId], cfg: &EmbeddingConfig, out: &mut Vec<T>) {
    for &id in ids {
        expand_into(normalize_unchecked(id, cfg.vocab_size), out, cfg.d_model);
    }
}

/// Two-pass reference: normalise every id into an intermediate buffer, then
/// evaluate each component directly.
pub fn embed_batch_naive<T: Scalar>(ids: &TokenGrid, cfg: &EmbeddingConfig) -> Result<Tensor<T>> {
    check_grid(ids, cfg)?;
    let xs: Vec<f64> = ids
        .ids()
        .iter()
        .map(|&id| normalize_unchecked(id, cfg.vocab_size))
        .collect();
    let d = cfg.d_model;
    let mut out = vec![T::zero(); xs.len() * d];
    for (row, &x) in out.chunks_mut(d).zip(&xs) {
        for (i, v) in row.iter_mut().enumerate() {
            *v = T::lit(fourier_component(x, i));
        }
    }
    Ok(Tensor::new([ids.batch(), ids.seq(), d], out).expect("buffer sized from grid"))
}

/// Base embedding of a single token.
pub fn embed_token<T: Scalar>(p: TokenId, cfg: &EmbeddingConfig) -> Result<Vec<T>> {
    let x = normalize_id(p, cfg.vocab_size)?;
    let mut out = Vec::with_capacity(cfg.d_model);
    expand_into(x, &mut out, cfg.d_model);
    Ok(out)
}

/// Spacing `2/(V−1)` between normalised ids of adjacent tokens.
pub fn adjacent_delta(vocab_size: usize) -> Result<f64> {
    if vocab_size < 2 {
        return Err(EmbeddingError::VocabTooSmall(vocab_size));
    }
    Ok(2.0 / (vocab_size - 1) as f64)
}

/// Midpoint-rule Gram matrix of the `d` basis functions over `[−1, 1]`,
/// using `n` evenly spaced samples weighted by `2/n`. Row-major `d × d`.
pub fn basis_gram(d: usize, n: usize) -> Result<Vec<f64>> {
    check_dim(d)?;
    let mut gram = vec![0.0; d * d];
    let mut row = vec![0.0; d];
    let w = 2.0 / n as f64;
    for s in 0..n {
        let x = -1.0 + (s as f64 + 0.5) * w;
        for (i, v) in row.iter_mut().enumerate() {
            *v = fourier_component(x, i);
        }
        for i in 0..d {
            let ri = row[i] * w;
            for j in 0..d {
                gram[i * d + j] += ri * row[j];
            }
        }
    }
    Ok(gram)
}

/// Options for [`collision_stats`].
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionOptions {
    /// Restrict the analysis to a random subset of this many ids, compared
    /// exhaustively. `None` scans the full vocabulary.
    pub sample: Option<usize>,
    /// Random pairs drawn as a cross-check in full-vocabulary mode.
    pub random_pairs: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for CollisionOptions {
    fn default() -> Self {
        Self {
            sample: None,
            random_pairs: 1_000_000,
            bins: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn build(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }
}

/// Near-collision summary of the base embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionStats {
    pub vocab_size: usize,
    pub d_model: usize,
    /// Smallest distance between distinct ids, excluding the endpoint alias
    /// pair `(0, V−1)` when `V > 2`.
    pub min_pairwise_distance: f64,
    pub min_pair: (TokenId, TokenId),
    /// Mean over analysed ids of the distance to the nearest other id.
    pub mean_nn_distance: f64,
    /// `‖T(0) − T(V−1)‖`. Zero for every `d`: `sin(±kπ) = 0` and cosine is
    /// even, so the two endpoints share a base vector.
    pub endpoint_alias_distance: f64,
    pub random_pairs_checked: usize,
    pub random_min_distance: Option<f64>,
    /// Nearest-neighbour distance of every analysed id, ascending.
    pub nn_distances: Vec<f64>,
    pub histogram: Histogram,
}

fn distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&u, &v)| {
            let diff = u.to_f64_lossless() - v.to_f64_lossless();
            diff * diff
        })
        .sum::<f64>()
        .sqrt()
}

/// Measures how close the base vectors of distinct ids get.
///
/// The squared distance between `T(p)` and `T(q)` depends only on
/// `x_p − x_q` (mod 2), so in full-vocabulary mode an exact scan over
/// adjacent pairs yields the minimum; random pairs cross-check it.
pub fn collision_stats<T: Scalar>(cfg: &EmbeddingConfig, opts: &CollisionOptions) -> Result<CollisionStats> {
    let v = cfg.vocab_size;
    let last = (v - 1) as TokenId;
    let alias = distance(&embed_token::<T>(0, cfg)?, &embed_token::<T>(last, cfg)?);
    let is_alias = |p: TokenId, q: TokenId| v > 2 && p.min(q) == 0 && p.max(q) == last;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let (min_d, min_pair, nn, random_min, random_checked) = match opts.sample {
        Some(s) => {
            if s < 2 || s > v {
                return Err(EmbeddingError::BadSample { sample: s, vocab_size: v });
            }
            let mut ids: Vec<TokenId> = rand::seq::index::sample(&mut rng, v, s)
                .into_iter()
                .map(|i| i as TokenId)
                .collect();
            ids.sort_unstable();
            let vecs: Vec<Vec<T>> = ids.iter().map(|&p| embed_token(p, cfg)).collect::<Result<_>>()?;
            let mut nn = vec![f64::INFINITY; s];
            let mut best = (f64::INFINITY, (0, 0));
            for i in 0..s {
                for j in i + 1..s {
                    if is_alias(ids[i], ids[j]) {
                        continue;
                    }
                    let dist = distance(&vecs[i], &vecs[j]);
                    nn[i] = nn[i].min(dist);
                    nn[j] = nn[j].min(dist);
                    if dist < best.0 {
                        best = (dist, (ids[i], ids[j]));
                    }
                }
            }
            // Only the alias pair was available (s = 2 holding both ends).
            if !best.0.is_finite() {
                best = (alias, (0, last));
                nn.iter_mut().for_each(|d| *d = alias);
            }
            (best.0, best.1, nn, None, 0)
        }
        None => {
            let mut adjacent = Vec::with_capacity(v - 1);
            let mut prev = embed_token::<T>(0, cfg)?;
            for p in 1..v as TokenId {
                let cur = embed_token::<T>(p, cfg)?;
                adjacent.push(distance(&prev, &cur));
                prev = cur;
            }
            let mut nn = vec![f64::INFINITY; v];
            let mut best = (f64::INFINITY, (0, 1));
            for (p, &dist) in adjacent.iter().enumerate() {
                nn[p] = nn[p].min(dist);
                nn[p + 1] = nn[p + 1].min(dist);
                if dist < best.0 {
                    best = (dist, (p as TokenId, p as TokenId + 1));
                }
            }
            let mut random_min = f64::INFINITY;
            let mut checked = 0;
            if v > 2 {
                for _ in 0..opts.random_pairs {
                    let p = rng.gen_range(0..v) as TokenId;
                    let q = rng.gen_range(0..v) as TokenId;
                    if p == q || is_alias(p, q) {
                        continue;
                    }
                    let dist = distance(&embed_token::<T>(p, cfg)?, &embed_token::<T>(q, cfg)?);
                    checked += 1;
                    if dist < random_min {
                        random_min = dist;
                    }
                    if dist < best.0 {
                        best = (dist, (p.min(q), p.max(q)));
                    }
                }
            }
            let random_min = (checked > 0).then_some(random_min);
            (best.0, best.1, nn, random_min, checked)
        }
    };

    let mean_nn = nn.iter().sum::<f64>() / nn.len() as f64;
    let mut sorted = nn;
    sorted.sort_by(f64::total_cmp);
    let histogram = Histogram::build(&sorted, opts.bins);
    Ok(CollisionStats {
        vocab_size: v,
        d_model: cfg.d_model,
        min_pairwise_distance: min_d,
        min_pair,
        mean_nn_distance: mean_nn,
        endpoint_alias_distance: alias,
        random_pairs_checked: random_checked,
        random_min_distance: random_min,
        nn_distances: sorted,
        histogram,
    })
}

impl CollisionStats {
    /// Plain-text summary with an ASCII histogram.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vocab_size            {}", self.vocab_size);
        let _ = writeln!(s, "d_model               {}", self.d_model);
        let _ = writeln!(s, "adjacent delta x      {:.6e}", 2.0 / (self.vocab_size - 1) as f64);
        let _ = writeln!(
            s,
            "min pairwise distance {:.6e} (ids {} and {})",
            self.min_pairwise_distance, self.min_pair.0, self.min_pair.1
        );
        let _ = writeln!(s, "mean nn distance      {:.6e}", self.mean_nn_distance);
        let _ = writeln!(
            s,
            "endpoint alias        {:.6e} (ids 0 and {})",
            self.endpoint_alias_distance,
            self.vocab_size - 1
        );
        if let Some(r) = self.random_min_distance {
            let _ = writeln!(s, "random-pair minimum   {:.6e} over {} pairs", r, self.random_pairs_checked);
        }
        let _ = writeln!(s, "nearest-neighbour distance histogram:");
        let bins = self.histogram.counts.len();
        let width = (self.histogram.hi - self.histogram.lo) / bins as f64;
        let peak = self.histogram.counts.iter().copied().max().unwrap_or(1).max(1);
        for (i, &c) in self.histogram.counts.iter().enumerate() {
            let lo = self.histogram.lo + i as f64 * width;
            let bar = "#".repeat((c * 50).div_ceil(peak));
            let _ = writeln!(s, "  [{:.4e}, {:.4e}) {:>8} {}", lo, lo + width, c, bar);
        }
        s
    }

    /// CSV of nearest-neighbour distances, ranked ascending.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair_rank,distance\n");
        for (rank, d) in self.nn_distances.iter().enumerate() {
            let _ = writeln!(s, "{rank},{d:.9e}");
        }
        s
    }
}
