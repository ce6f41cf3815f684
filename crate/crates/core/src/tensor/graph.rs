use super::kernels;
use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sin(Var),
    Cos(Var),
    Exp(Var),
    Log(Var),
    Gelu(Var),
    Rsqrt(Var),
    MatMul(Var, Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    SumAll(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice { src: Var, offset: usize, width: usize },
    L2Normalize(Var),
    MaskedFill(Var, Vec<bool>),
    ScaleRows(Var, Var),
    Gather { table: Var, ids: Vec<usize> },
    Rotary { src: Var, table: Vec<(T, T)> },
}

#[derive(Debug, Clone)]
pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
}

/// Computation tape. Nodes are appended in execution order; an operation is
/// recorded (kept differentiable) only when one of its inputs requires a
/// gradient, otherwise its result is stored as a constant leaf.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) backward_done: bool,
}

/// Output shape of an elementwise binary op: the shorter shape must be a
/// suffix of the longer one and is repeated over the leading axes.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long.ends_with(short) {
        Ok(long.to_vec())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::BadAxis {
            op,
            axis,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

/// `(outer, axis_len, inner)` split of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn last_dim(op: &'static str, shape: &[usize]) -> Result<usize> {
    shape.last().copied().ok_or(TensorError::BadAxis {
        op,
        axis: 0,
        shape: Vec::new(),
    })
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    /// Number of nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of differentiable operations on the tape.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    /// Adds a leaf; it takes part in differentiation iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Moves a gradient buffer out of the tape.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad.take()
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.requires_grad(i));
        let value = Tensor::new(shape, data)?.with_requires_grad(requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let ad = self.data(a);
        let bd = self.data(b);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| f(ad[i % ad.len()], bd[i % bd.len()])).collect();
        self.push(name, shape, data, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        self.push(name, shape, data, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary("sin", a, |x| x.sin(), Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary("cos", a, |x| x.cos(), Op::Cos(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, |x| x.ln(), Op::Log(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary("gelu", a, kernels::gelu, Op::Gelu(a))
    }

    pub fn rsqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("rsqrt", a, |x| x.sqrt().recip(), Op::Rsqrt(a))
    }

    /// Matrix product over the last two axes. Leading batch axes broadcast
    /// when one side's batch shape is a suffix of the other's, which covers
    /// `[B, S, d] · [d, h]` as well as `[B, H, S, hd] · [B, H, hd, S]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: ashape.clone(),
            rhs: bshape.clone(),
        };
        if ashape.len() < 2 || bshape.len() < 2 {
            return Err(mismatch());
        }
        let (ab, am) = ashape.split_at(ashape.len() - 2);
        let (bb, bm) = bshape.split_at(bshape.len() - 2);
        let (m, k, n) = (am[0], am[1], bm[1]);
        if bm[0] != k {
            return Err(mismatch());
        }
        let batch = broadcast_shape("matmul", ab, bb).map_err(|_| mismatch())?;
        let nb: usize = batch.iter().product();
        let (anb, bnb) = (ab.iter().product::<usize>(), bb.iter().product::<usize>());
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![T::zero(); nb * m * n];
        for bi in 0..nb {
            let ai = bi % anb;
            let bj = bi % bnb;
            kernels::gemm_acc(
                &ad[ai * m * k..(ai + 1) * m * k],
                &bd[bj * k * n..(bj + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = batch;
        shape.extend([m, n]);
        self.push("matmul", shape, out, Op::MatMul(a, b), &[a, b])
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let name = if mean { "mean_axis" } else { "sum_axis" };
        let shape = self.shape(a).to_vec();
        check_axis(name, &shape, axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.data(a);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        if mean {
            let inv = T::one() / T::lit(len as f64);
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let op = if mean { Op::MeanAxis(a, axis) } else { Op::SumAxis(a, axis) };
        self.push(name, out_shape, out, op, &[a])
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    /// Sum of every element into a rank-0 tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let mut acc = T::zero();
        for &v in self.data(a) {
            acc += v;
        }
        self.push("sum_all", Vec::new(), vec![acc], Op::SumAll(a), &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let width = last_dim("softmax", &shape)?;
        let mut out = self.data(a).to_vec();
        for row in out.chunks_mut(width) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        self.push("softmax", shape, out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let width = last_dim("log_softmax", &shape)?;
        let mut out = self.data(a).to_vec();
        for row in out.chunks_mut(width) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut total = T::zero();
            for &v in row.iter() {
                total += (v - max).exp();
            }
            let lse = max + total.ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push("log_softmax", shape, out, Op::LogSoftmax(a), &[a])
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(TensorError::ShapeMismatch {
                op: "permute",
                lhs: shape,
                rhs: axes.to_vec(),
            });
        }
        let data = kernels::permute(self.data(a), &shape, axes);
        let out_shape = axes.iter().map(|&x| shape[x]).collect();
        self.push("permute", out_shape, data, Op::Permute(a, axes.to_vec()), &[a])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(TensorError::BadAxis {
                op: "transpose",
                axis: 1,
                shape: self.shape(a).to_vec(),
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.data(a).to_vec();
        self.push("reshape", shape.to_vec(), data, Op::Reshape(a), &[a])
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::ShapeMismatch {
            op: "concat",
            lhs: Vec::new(),
            rhs: Vec::new(),
        })?;
        let lead = self.shape(*first).to_vec();
        let lead = &lead[..lead.len().saturating_sub(1)];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || &s[..s.len() - 1] != lead {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(*first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        self.push("concat", shape, out, Op::Concat(parts.to_vec()), parts)
    }

    /// Splits the last axis into consecutive pieces of the given widths.
    pub fn split_last(&mut self, a: Var, widths: &[usize]) -> Result<Vec<Var>> {
        let shape = self.shape(a).to_vec();
        let width = last_dim("split", &shape)?;
        if widths.iter().sum::<usize>() != width {
            return Err(TensorError::ShapeMismatch {
                op: "split",
                lhs: shape,
                rhs: widths.to_vec(),
            });
        }
        let rows = self.value(a).numel() / width.max(1);
        let mut out = Vec::with_capacity(widths.len());
        let mut offset = 0;
        for &w in widths {
            let src = self.data(a);
            let mut data = Vec::with_capacity(rows * w);
            for r in 0..rows {
                data.extend_from_slice(&src[r * width + offset..r * width + offset + w]);
            }
            let mut piece_shape = shape.clone();
            *piece_shape.last_mut().unwrap() = w;
            out.push(self.push("split", piece_shape, data, Op::Slice { src: a, offset, width: w }, &[a])?);
            offset += w;
        }
        Ok(out)
    }

    /// Scales each last-axis row to unit Euclidean norm. Zero rows are an error.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let width = last_dim("l2_normalize", &shape)?;
        let mut out = self.data(a).to_vec();
        for (r, row) in out.chunks_mut(width).enumerate() {
            let mut sq = T::zero();
            for &v in row.iter() {
                sq += v * v;
            }
            if sq <= T::zero() {
                return Err(TensorError::ZeroNorm { op: "l2_normalize", row: r });
            }
            let inv = sq.sqrt().recip();
            row.iter_mut().for_each(|v| *v *= inv);
        }
        self.push("l2_normalize", shape, out, Op::L2Normalize(a), &[a])
    }

    /// Replaces elements where `mask` is true with `value`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], value: T) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if mask.len() != self.value(a).numel() {
            return Err(TensorError::BadBuffer {
                op: "masked_fill",
                shape,
                len: mask.len(),
            });
        }
        let data = self
            .data(a)
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        self.push("masked_fill", shape, data, Op::MaskedFill(a, mask.to_vec()), &[a])
    }

    /// Multiplies every last-axis row of `a` by the matching entry of `s`,
    /// where `s.shape == a.shape[..rank-1]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let sshape = self.shape(s).to_vec();
        if shape.is_empty() || sshape[..] != shape[..shape.len() - 1] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: shape,
                rhs: sshape,
            });
        }
        let width = shape[shape.len() - 1];
        let sd = self.data(s);
        let data = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * sd[i / width.max(1)])
            .collect();
        self.push("scale_rows", shape, data, Op::ScaleRows(a, s), &[a, s])
    }

    /// Row lookup: output shape is `out_lead ++ [d]` for a `[V, d]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize], out_lead: &[usize]) -> Result<Var> {
        let tshape = self.shape(table).to_vec();
        if tshape.len() != 2 || out_lead.iter().product::<usize>() != ids.len() {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                lhs: tshape,
                rhs: out_lead.to_vec(),
            });
        }
        let (v, d) = (tshape[0], tshape[1]);
        let src = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    limit: v,
                });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let mut shape = out_lead.to_vec();
        shape.push(d);
        self.push("gather_rows", shape, out, Op::Gather { table, ids: ids.to_vec() }, &[table])
    }

    /// Rotary position rotation on `[.., S, hd]`: pair `(2j, 2j+1)` at
    /// position `positions[m]` turns by `positions[m] · base^(−2j/hd)`.
    pub fn rotary(&mut self, a: Var, positions: &[usize], base: f64) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 || shape[shape.len() - 2] != positions.len() || shape[shape.len() - 1] % 2 != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "rotary",
                lhs: shape,
                rhs: vec![positions.len()],
            });
        }
        let hd = shape[shape.len() - 1];
        let table = kernels::rotary_table::<T>(positions, hd, base);
        let data = kernels::rotate_pairs(self.data(a), positions.len(), hd, &table, T::one());
        self.push("rotary", shape, data, Op::Rotary { src: a, table }, &[a])
    }
}
