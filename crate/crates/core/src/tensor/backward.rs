use super::graph::{axis_split, Graph, Op, Var};
use super::kernels;
use super::{Result, TensorError};
use crate::scalar::Scalar;

impl<T: Scalar> Graph<T> {
    /// Reverse pass from a rank-0 `loss`. Afterwards every node that requires
    /// a gradient holds `d loss / d node` in its grad buffer.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.shape(loss).to_vec();
        if !shape.is_empty() {
            return Err(TensorError::NotScalar(shape));
        }
        if self.recorded_ops() == 0 || !self.requires_grad(loss) {
            return Err(TensorError::EmptyTape);
        }

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].value.requires_grad() {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.value.requires_grad() {
                let n = node.value.numel();
                node.value.grad = Some(g.unwrap_or_else(|| vec![T::zero(); n]));
            }
        }
        self.backward_done = true;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_broadcast(*a, g, |_, gv| gv, grads);
                self.accumulate_broadcast(*b, g, |_, gv| gv, grads);
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(*a, g, |_, gv| gv, grads);
                self.accumulate_broadcast(*b, g, |_, gv| -gv, grads);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.accumulate_broadcast(*a, g, |i, gv| gv * bd[i % bd.len()], grads);
                self.accumulate_broadcast(*b, g, |i, gv| gv * ad[i % ad.len()], grads);
            }
            Op::Scale(a, c) => self.accumulate_map(*a, |i| g[i] * *c, grads),
            Op::AddScalar(a) => self.accumulate_map(*a, |i| g[i], grads),
            Op::Sin(a) => {
                let x = self.data(*a);
                self.accumulate_map(*a, |i| g[i] * x[i].cos(), grads);
            }
            Op::Cos(a) => {
                let x = self.data(*a);
                self.accumulate_map(*a, |i| -g[i] * x[i].sin(), grads);
            }
            Op::Exp(a) => self.accumulate_map(*a, |i| g[i] * out[i], grads),
            Op::Log(a) => {
                let x = self.data(*a);
                self.accumulate_map(*a, |i| g[i] / x[i], grads);
            }
            Op::Gelu(a) => {
                let x = self.data(*a);
                self.accumulate_map(*a, |i| g[i] * kernels::gelu_grad(x[i]), grads);
            }
            Op::Rsqrt(a) => {
                let half = T::lit(-0.5);
                self.accumulate_map(*a, |i| g[i] * half * out[i] * out[i] * out[i], grads);
            }
            Op::MatMul(a, b) => self.matmul_backward(idx, *a, *b, g, grads),
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let shape = self.shape(*a);
                let (_, len, inner) = axis_split(shape, *axis);
                let scale = if matches!(node.op, Op::MeanAxis(..)) {
                    T::one() / T::lit(len as f64)
                } else {
                    T::one()
                };
                self.accumulate_map(
                    *a,
                    |i| {
                        let o = i / (len * inner);
                        let r = i % inner;
                        g[o * inner + r] * scale
                    },
                    grads,
                );
            }
            Op::SumAll(a) => self.accumulate_map(*a, |_| g[0], grads),
            Op::Softmax(a) => {
                let width = *node.value.shape().last().unwrap();
                let mut dx = vec![T::zero(); out.len()];
                for ((y, gy), d) in out.chunks(width).zip(g.chunks(width)).zip(dx.chunks_mut(width)) {
                    let mut dot = T::zero();
                    for (&yv, &gv) in y.iter().zip(gy) {
                        dot += yv * gv;
                    }
                    for ((dv, &yv), &gv) in d.iter_mut().zip(y).zip(gy) {
                        *dv = yv * (gv - dot);
                    }
                }
                self.accumulate_map(*a, |i| dx[i], grads);
            }
            Op::LogSoftmax(a) => {
                let width = *node.value.shape().last().unwrap();
                let mut dx = vec![T::zero(); out.len()];
                for ((y, gy), d) in out.chunks(width).zip(g.chunks(width)).zip(dx.chunks_mut(width)) {
                    let mut total = T::zero();
                    for &gv in gy {
                        total += gv;
                    }
                    for ((dv, &yv), &gv) in d.iter_mut().zip(y).zip(gy) {
                        *dv = gv - yv.exp() * total;
                    }
                }
                self.accumulate_map(*a, |i| dx[i], grads);
            }
            Op::Permute(a, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &x) in axes.iter().enumerate() {
                    inverse[x] = i;
                }
                let back = kernels::permute(g, node.value.shape(), &inverse);
                self.accumulate_map(*a, |i| back[i], grads);
            }
            Op::Reshape(a) => self.accumulate_map(*a, |i| g[i], grads),
            Op::Concat(parts) => {
                let total = *node.value.shape().last().unwrap();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    if self.requires_grad(p) {
                        let slot = grad_slot(grads, p, self.value(p).numel());
                        for r in 0..rows {
                            for j in 0..w {
                                slot[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { src, offset, width } => {
                let full = *self.shape(*src).last().unwrap();
                let slot = grad_slot(grads, *src, self.value(*src).numel());
                let rows = g.len() / (*width).max(1);
                for r in 0..rows {
                    for j in 0..*width {
                        slot[r * full + offset + j] += g[r * width + j];
                    }
                }
            }
            Op::L2Normalize(a) => {
                let width = *node.value.shape().last().unwrap();
                let x = self.data(*a);
                let mut dx = vec![T::zero(); out.len()];
                for (r, d) in dx.chunks_mut(width).enumerate() {
                    let xr = &x[r * width..(r + 1) * width];
                    let y = &out[r * width..(r + 1) * width];
                    let gy = &g[r * width..(r + 1) * width];
                    let mut sq = T::zero();
                    let mut dot = T::zero();
                    for j in 0..width {
                        sq += xr[j] * xr[j];
                        dot += y[j] * gy[j];
                    }
                    let inv = sq.sqrt().recip();
                    for j in 0..width {
                        d[j] = (gy[j] - y[j] * dot) * inv;
                    }
                }
                self.accumulate_map(*a, |i| dx[i], grads);
            }
            Op::MaskedFill(a, mask) => {
                self.accumulate_map(*a, |i| if mask[i] { T::zero() } else { g[i] }, grads);
            }
            Op::ScaleRows(a, s) => {
                let width = *node.value.shape().last().unwrap();
                let sd = self.data(*s);
                let ad = self.data(*a);
                self.accumulate_map(*a, |i| g[i] * sd[i / width], grads);
                if self.requires_grad(*s) {
                    let slot = grad_slot(grads, *s, sd.len());
                    for (r, sv) in slot.iter_mut().enumerate() {
                        let mut acc = T::zero();
                        for j in 0..width {
                            acc += g[r * width + j] * ad[r * width + j];
                        }
                        *sv += acc;
                    }
                }
            }
            Op::Gather { table, ids } => {
                let d = self.shape(*table)[1];
                let slot = grad_slot(grads, *table, self.value(*table).numel());
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        slot[id * d + j] += g[r * d + j];
                    }
                }
            }
            Op::Rotary { src, table } => {
                let shape = node.value.shape();
                let hd = shape[shape.len() - 1];
                let seq = shape[shape.len() - 2];
                let back = kernels::rotate_pairs(g, seq, hd, table, -T::one());
                self.accumulate_map(*src, |i| back[i], grads);
            }
        }
    }

    fn matmul_backward(&self, idx: usize, a: Var, b: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let ashape = self.shape(a);
        let bshape = self.shape(b);
        let (m, k) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
        let n = bshape[bshape.len() - 1];
        let anb: usize = ashape[..ashape.len() - 2].iter().product();
        let bnb: usize = bshape[..bshape.len() - 2].iter().product();
        let oshape = self.shape(Var(idx));
        let nb: usize = oshape[..oshape.len() - 2].iter().product();
        let (ad, bd) = (self.data(a), self.data(b));
        if self.requires_grad(a) {
            let slot = grad_slot(grads, a, ad.len());
            for bi in 0..nb {
                let (ai, bj) = (bi % anb, bi % bnb);
                kernels::gemm_acc_bt(
                    &g[bi * m * n..(bi + 1) * m * n],
                    &bd[bj * k * n..(bj + 1) * k * n],
                    &mut slot[ai * m * k..(ai + 1) * m * k],
                    m,
                    k,
                    n,
                );
            }
        }
        if self.requires_grad(b) {
            let slot = grad_slot(grads, b, bd.len());
            for bi in 0..nb {
                let (ai, bj) = (bi % anb, bi % bnb);
                kernels::gemm_acc_at(
                    &ad[ai * m * k..(ai + 1) * m * k],
                    &g[bi * m * n..(bi + 1) * m * n],
                    &mut slot[bj * k * n..(bj + 1) * k * n],
                    m,
                    k,
                    n,
                );
            }
        }
    }

    /// Accumulates `f(i)` into element `i` of input `a`'s gradient.
    fn accumulate_map(&self, a: Var, f: impl Fn(usize) -> T, grads: &mut [Option<Vec<T>>]) {
        if !self.requires_grad(a) {
            return;
        }
        let n = self.value(a).numel();
        let slot = grad_slot(grads, a, n);
        for (i, s) in slot.iter_mut().enumerate() {
            *s += f(i);
        }
    }

    /// Like [`Self::accumulate_map`] but sums over the repeated leading axes
    /// when `a` was broadcast.
    fn accumulate_broadcast(&self, a: Var, g: &[T], f: impl Fn(usize, T) -> T, grads: &mut [Option<Vec<T>>]) {
        if !self.requires_grad(a) {
            return;
        }
        let n = self.value(a).numel();
        let slot = grad_slot(grads, a, n);
        for (i, &gv) in g.iter().enumerate() {
            slot[i % n] += f(i, gv);
        }
    }
}

fn grad_slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.index()].get_or_insert_with(|| vec![T::zero(); len])
}
