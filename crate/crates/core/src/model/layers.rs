use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Bound, EmbedIdx, FfnIdx, LayerIdx, Model, ModelError, Result};
use crate::fourier::{embed_batch_fused, EmbeddingConfig};
use crate::ids::TokenGrid;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

pub const RMS_EPS: f64 = 1e-6;
pub const ROTARY_BASE: f64 = 10000.0;
const MASK_LOGIT: f64 = -1e9;

/// Inverted dropout drawing its masks from a caller-owned RNG.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply<T: Scalar>(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        if self.p <= 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - self.p));
        let shape = g.shape(x).to_vec();
        let n = g.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < self.p { T::zero() } else { keep })
            .collect();
        let m = g.constant(Tensor::new(shape, mask)?);
        Ok(g.mul(x, m)?)
    }
}

fn maybe_dropout<T: Scalar>(g: &mut Graph<T>, x: Var, dropout: &mut Option<Dropout<'_>>) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

/// `x / sqrt(mean(x²) + eps) · gain` over the last axis.
pub fn rmsnorm<T: Scalar>(g: &mut Graph<T>, x: Var, gain: Var, eps: f64) -> Result<Var> {
    let last = g.shape(x).len().checked_sub(1).ok_or_else(|| {
        ModelError::InvalidConfig("rmsnorm needs at least one axis".into())
    })?;
    let sq = g.mul(x, x)?;
    let ms = g.mean_axis(sq, last)?;
    let shifted = g.add_scalar(ms, T::lit(eps))?;
    let inv = g.rsqrt(shifted)?;
    let normed = g.scale_rows(x, inv)?;
    Ok(g.mul(normed, gain)?)
}

/// Rotary encoding of `[B, H, S, hd]` queries or keys at the given positions.
pub fn rotary_apply<T: Scalar>(g: &mut Graph<T>, x: Var, positions: &[usize]) -> Result<Var> {
    let hd = g.shape(x).last().copied().unwrap_or(0);
    if hd % 2 != 0 {
        return Err(ModelError::InvalidConfig(format!("rotary head width {hd} must be even")));
    }
    Ok(g.rotary(x, positions, ROTARY_BASE)?)
}

/// Graph handles of one attention sub-block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub norm: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub n_heads: usize,
}

/// Graph handles of one GeGLU feed-forward block.
#[derive(Debug, Clone, Copy)]
pub struct FfnParams {
    pub norm: Var,
    pub w_a: Var,
    pub w_b: Var,
    pub w_out: Var,
}

fn split_heads<T: Scalar>(g: &mut Graph<T>, x: Var, b: usize, s: usize, h: usize, hd: usize) -> Result<Var> {
    let r = g.reshape(x, &[b, s, h, hd])?;
    Ok(g.permute(r, &[0, 2, 1, 3])?)
}

/// Pre-norm multi-head self-attention with residual: `x + Wo·Attn(RMSNorm(x))`.
/// `mask` is `[B, S]` with 1 on valid tokens; padded keys are excluded.
pub fn attention_block<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    mask: &[u8],
    p: &AttentionParams,
    dropout: &mut Option<Dropout<'_>>,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let [b, s, d] = shape[..] else {
        return Err(ModelError::InvalidConfig(format!("attention expects [B, S, d], got {shape:?}")));
    };
    if mask.len() != b * s {
        return Err(ModelError::MaskShape {
            expected: b * s,
            got: mask.len(),
        });
    }
    let h = p.n_heads;
    let hd = d / h;
    let normed = rmsnorm(g, x, p.norm, RMS_EPS)?;
    let q = g.matmul(normed, p.wq)?;
    let k = g.matmul(normed, p.wk)?;
    let v = g.matmul(normed, p.wv)?;
    let q = split_heads(g, q, b, s, h, hd)?;
    let k = split_heads(g, k, b, s, h, hd)?;
    let v = split_heads(g, v, b, s, h, hd)?;
    let positions: Vec<usize> = (0..s).collect();
    let q = rotary_apply(g, q, &positions)?;
    let k = rotary_apply(g, k, &positions)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, T::lit(1.0 / (hd as f64).sqrt()))?;
    let mut fill = Vec::with_capacity(b * h * s * s);
    for bi in 0..b {
        let row = &mask[bi * s..(bi + 1) * s];
        for _ in 0..h * s {
            fill.extend(row.iter().map(|&m| m == 0));
        }
    }
    let scores = g.masked_fill(scores, &fill, T::lit(MASK_LOGIT))?;
    let probs = g.softmax(scores)?;
    let ctx = g.matmul(probs, v)?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, s, d])?;
    let out = g.matmul(ctx, p.wo)?;
    let out = maybe_dropout(g, out, dropout)?;
    Ok(g.add(x, out)?)
}

/// Pre-norm GeGLU block with residual:
/// `x + W_out(gelu(n·W_a) ⊙ (n·W_b))` where `n = RMSNorm(x)`.
pub fn geglu_ffn<T: Scalar>(g: &mut Graph<T>, x: Var, p: &FfnParams, dropout: &mut Option<Dropout<'_>>) -> Result<Var> {
    let normed = rmsnorm(g, x, p.norm, RMS_EPS)?;
    let a = g.matmul(normed, p.w_a)?;
    let gate = g.gelu(a)?;
    let lin = g.matmul(normed, p.w_b)?;
    let hidden = g.mul(gate, lin)?;
    let out = g.matmul(hidden, p.w_out)?;
    let out = maybe_dropout(g, out, dropout)?;
    Ok(g.add(x, out)?)
}

fn ffn_params(b: &Bound, idx: &FfnIdx) -> FfnParams {
    FfnParams {
        norm: b.var(idx.norm),
        w_a: b.var(idx.w_a),
        w_b: b.var(idx.w_b),
        w_out: b.var(idx.w_out),
    }
}

fn attention_params(b: &Bound, idx: &LayerIdx, n_heads: usize) -> AttentionParams {
    AttentionParams {
        norm: b.var(idx.attn_norm),
        wq: b.var(idx.wq),
        wk: b.var(idx.wk),
        wv: b.var(idx.wv),
        wo: b.var(idx.wo),
        n_heads,
    }
}

/// Token embeddings `[B, S, d]`.
///
/// Fourier: `GeGLU(T) + T` with `T` the constant fused base embedding.
/// Learned: rows of the table; only looked-up rows receive gradient.
pub fn embedding_forward<T: Scalar>(g: &mut Graph<T>, model: &Model<T>, bound: &Bound, ids: &TokenGrid) -> Result<Var> {
    let cfg = model.config();
    match &model.layout().embed {
        EmbedIdx::Fourier(head) => {
            let ecfg = EmbeddingConfig::new(cfg.vocab_size, cfg.d_model)?;
            let base = g.constant(embed_batch_fused(ids, &ecfg)?);
            geglu_ffn(g, base, &ffn_params(bound, head), &mut None)
        }
        EmbedIdx::Learned { table } => {
            let rows: Vec<usize> = ids.ids().iter().map(|&id| id as usize).collect();
            if let Some((pos, &id)) = rows.iter().enumerate().find(|(_, &id)| id >= cfg.vocab_size) {
                return Err(crate::fourier::EmbeddingError::IdOutOfRangeAt {
                    batch: pos / ids.seq().max(1),
                    pos: pos % ids.seq().max(1),
                    id: id as u32,
                    vocab_size: cfg.vocab_size,
                }
                .into());
            }
            Ok(g.gather_rows(bound.var(*table), &rows, &[ids.batch(), ids.seq()])?)
        }
    }
}

/// Sentence vectors `[B, d]`: embeddings, `n_layers` × (attention, GeGLU),
/// final RMSNorm, mean over valid positions, optional projection.
pub fn encode<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    bound: &Bound,
    ids: &TokenGrid,
    mask: &[u8],
    mut dropout: Option<Dropout<'_>>,
) -> Result<Var> {
    let cfg = model.config();
    let (b, s) = (ids.batch(), ids.seq());
    if mask.len() != b * s {
        return Err(ModelError::MaskShape {
            expected: b * s,
            got: mask.len(),
        });
    }
    if s > cfg.max_seq_len {
        return Err(ModelError::SeqTooLong {
            len: s,
            max: cfg.max_seq_len,
        });
    }
    let mut counts = Vec::with_capacity(b);
    for row in 0..b {
        let n = mask[row * s..(row + 1) * s].iter().filter(|&&m| m != 0).count();
        if n == 0 {
            return Err(ModelError::EmptyRow(row));
        }
        counts.push(T::one() / T::lit(n as f64));
    }

    let layout = model.layout();
    let mut x = embedding_forward(g, model, bound, ids)?;
    for layer in &layout.layers {
        x = attention_block(g, x, mask, &attention_params(bound, layer, cfg.n_heads), &mut dropout)?;
        x = geglu_ffn(g, x, &ffn_params(bound, &layer.ffn), &mut dropout)?;
    }
    let x = rmsnorm(g, x, bound.var(layout.final_norm), RMS_EPS)?;

    let keep = g.constant(Tensor::new([b, s], mask.iter().map(|&m| if m != 0 { T::one() } else { T::zero() }).collect())?);
    let masked = g.scale_rows(x, keep)?;
    let summed = g.sum_axis(masked, 1)?;
    let inv = g.constant(Tensor::new([b], counts)?);
    let pooled = g.scale_rows(summed, inv)?;
    match layout.pool_proj {
        Some(w) => Ok(g.matmul(pooled, bound.var(w))?),
        None => Ok(pooled),
    }
}
