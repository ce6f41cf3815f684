use super::{Result, TrainError};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Symmetric InfoNCE over a batch of matched rows.
///
/// Rows of `a` and `b` are L2-normalized, `S = exp(logit_scale) · A·Bᵀ`, and
/// the loss is the mean of the row-wise and column-wise cross-entropies with
/// the diagonal as targets.
pub fn info_nce_loss<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, logit_scale: Var) -> Result<Var> {
    let shape = g.shape(a).to_vec();
    if shape.len() != 2 || g.shape(b) != shape.as_slice() {
        return Err(TrainError::InvalidInput(format!(
            "loss expects two [B, d] inputs, got {:?} and {:?}",
            shape,
            g.shape(b)
        )));
    }
    let n = shape[0];
    if n < 2 {
        return Err(TrainError::InvalidInput(format!("contrastive loss needs B >= 2, got {n}")));
    }
    let an = g.l2_normalize(a)?;
    let bn = g.l2_normalize(b)?;
    let bt = g.transpose(bn)?;
    let sim = g.matmul(an, bt)?;
    let temp = g.exp(logit_scale)?;
    let logits = g.mul(sim, temp)?;
    let rows = g.log_softmax(logits)?;
    let logits_t = g.transpose(logits)?;
    let cols = g.log_softmax(logits_t)?;
    let mut eye = Tensor::zeros([n, n]);
    for i in 0..n {
        eye.data_mut()[i * n + i] = T::one();
    }
    let eye = g.constant(eye);
    let picked_r = g.mul(rows, eye)?;
    let picked_c = g.mul(cols, eye)?;
    let sum_r = g.sum_all(picked_r)?;
    let sum_c = g.sum_all(picked_c)?;
    let total = g.add(sum_r, sum_c)?;
    Ok(g.scale(total, T::lit(-0.5 / n as f64))?)
}

/// Rows whose most similar partner (by dot product of normalized rows) is
/// their own index. Ties resolve to the lowest index.
pub fn retrieval_hits<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> usize {
    let n = a.shape()[0];
    let unit = |t: &Tensor<T>, i: usize| {
        let row: Vec<f64> = t.row(i).iter().map(|v| v.to_f64_lossless()).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        row.into_iter().map(|v| v / norm).collect::<Vec<f64>>()
    };
    let bs: Vec<Vec<f64>> = (0..n).map(|j| unit(b, j)).collect();
    (0..n)
        .filter(|&i| {
            let ai = unit(a, i);
            let mut best = (f64::NEG_INFINITY, 0);
            for (j, bj) in bs.iter().enumerate() {
                let s: f64 = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
                if s > best.0 {
                    best = (s, j);
                }
            }
            best.1 == i
        })
        .count()
}
