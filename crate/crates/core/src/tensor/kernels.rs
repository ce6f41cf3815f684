//! Scalar loops shared by the forward and backward passes.
//!
//! Every reduction walks indices in ascending order so results are
//! reproducible bit for bit across runs.

use crate::scalar::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `da[m×k] += dc[m×n] · b[k×n]ᵀ`
pub(crate) fn gemm_acc_bt<T: Scalar>(dc: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&g, &bv) in dcrow.iter().zip(brow) {
                acc += g * bv;
            }
            da[i * k + p] += acc;
        }
    }
}

/// `db[k×n] += a[m×k]ᵀ · dc[m×n]`
pub(crate) fn gemm_acc_at<T: Scalar>(a: &[T], dc: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, &g) in dbrow.iter_mut().zip(dcrow) {
                *d += av * g;
            }
        }
    }
}

/// Row-major strides of `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `src` (with `shape`) into a new buffer laid out as the axis
/// permutation `axes`. Output axis `i` is input axis `axes[i]`.
pub(crate) fn permute<T: Scalar>(src: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..src.len() {
        let offset: usize = idx
            .iter()
            .zip(axes)
            .map(|(&i, &a)| i * in_strides[a])
            .sum();
        out.push(src[offset]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

/// Rotary angle table: `[positions.len(), hd/2]` entries of `(cos, sin)`.
pub(crate) fn rotary_table<T: Scalar>(positions: &[usize], hd: usize, base: f64) -> Vec<(T, T)> {
    let half = hd / 2;
    let mut table = Vec::with_capacity(positions.len() * half);
    for &m in positions {
        for j in 0..half {
            let theta = m as f64 * base.powf(-2.0 * j as f64 / hd as f64);
            table.push((T::lit(theta.cos()), T::lit(theta.sin())));
        }
    }
    table
}

/// Rotates consecutive pairs of each `[.., S, hd]` row by the table angles;
/// `sign = -1` applies the inverse rotation.
pub(crate) fn rotate_pairs<T: Scalar>(src: &[T], seq: usize, hd: usize, table: &[(T, T)], sign: T) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    let half = hd / 2;
    for (r, (row_in, row_out)) in src.chunks(hd).zip(out.chunks_mut(hd)).enumerate() {
        let pos = r % seq;
        for j in 0..half {
            let (c, s) = table[pos * half + j];
            let s = s * sign;
            let a = row_in[2 * j];
            let b = row_in[2 * j + 1];
            row_out[2 * j] = a * c - b * s;
            row_out[2 * j + 1] = a * s + b * c;
        }
    }
    out
}
