use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, split_axis, Mat};
use super::{Graph, Op, Var, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients of one scalar with respect to the nodes of a graph.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not require grad or does not
    /// influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, with zeros standing in for "no influence".
    pub fn get_or_zeros(&self, g: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(g.shape(v)))
    }
}

fn acc(slot: &mut Option<Vec<f64>>, delta: impl IntoIterator<Item = f64>) {
    match slot {
        Some(buf) => buf.iter_mut().zip(delta).for_each(|(b, d)| *b += d),
        None => *slot = Some(delta.into_iter().collect()),
    }
}

impl Graph {
    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let node = self.node(out);
        if node.value.len() != 1 {
            return Err(Error::NonScalar(node.value.shape().to_vec()));
        }
        if !node.requires_grad {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = self.node(Var(i));
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let n = self.node(Var(i));
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::from_parts(n.value.shape().to_vec(), g))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn propagate(&self, op: &Op, y: &Tensor, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.value(v).data();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        acc(&mut grads[v.0], gy.iter().copied());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(&mut grads[a.0], gy.iter().copied());
                }
                if self.wants(*b) {
                    acc(&mut grads[b.0], gy.iter().map(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(&mut grads[a.0], gy.iter().zip(val(*b)).map(|(g, y)| g * y));
                }
                if self.wants(*b) {
                    acc(&mut grads[b.0], gy.iter().zip(val(*a)).map(|(g, x)| g * x));
                }
            }
            Op::ScalarMul(a, c) => {
                if self.wants(*a) {
                    acc(&mut grads[a.0], gy.iter().map(|g| g * c));
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    acc(&mut grads[x.0], gy.iter().copied());
                }
                if self.wants(*b) {
                    let (outer, ch, inner) = split_axis(y.shape(), 1);
                    let mut gb = vec![0.0; ch];
                    for o in 0..outer {
                        for (c, slot) in gb.iter_mut().enumerate() {
                            *slot += gy[(o * ch + c) * inner..][..inner].iter().sum::<f64>();
                        }
                    }
                    acc(&mut grads[b.0], gb);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, Mat::rows(gy, n), Mat::transposed(val(*b), n), &mut ga, false);
                    acc(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, Mat::transposed(val(*a), k), Mat::rows(gy, n), &mut gb, false);
                    acc(&mut grads[b.0], gb);
                }
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = gy[j * r + i];
                        }
                    }
                    acc(&mut grads[a.0], ga);
                }
            }
            Op::Conv2d { x, w, geom } => {
                let (n, o) = (self.shape(*x)[0], self.shape(*w)[0]);
                let (dx, dw) = kernels::conv_backward(
                    val(*x),
                    val(*w),
                    gy,
                    n,
                    o,
                    geom,
                    self.wants(*x),
                    self.wants(*w),
                );
                if let Some(dx) = dx {
                    acc(&mut grads[x.0], dx);
                }
                if let Some(dw) = dw {
                    acc(&mut grads[w.0], dw);
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let d = gy.iter().zip(val(*a)).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 });
                    acc(&mut grads[a.0], d);
                }
            }
            Op::Tanh(a) => {
                if self.wants(*a) {
                    acc(&mut grads[a.0], gy.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)));
                }
            }
            Op::Exp(a) => {
                if self.wants(*a) {
                    acc(&mut grads[a.0], gy.iter().zip(y.data()).map(|(g, e)| g * e));
                }
            }
            Op::Log(a) => {
                if self.wants(*a) {
                    let d = gy
                        .iter()
                        .zip(val(*a))
                        .map(|(g, &x)| if x > LOG_FLOOR { g / x } else { 0.0 });
                    acc(&mut grads[a.0], d);
                }
            }
            Op::Square(a) => {
                if self.wants(*a) {
                    acc(&mut grads[a.0], gy.iter().zip(val(*a)).map(|(g, x)| 2.0 * g * x));
                }
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                if self.wants(*x) {
                    let xs = self.shape(*x);
                    let total: usize = xs.iter().product();
                    let scale = match (op, axis) {
                        (Op::Mean { .. }, None) => 1.0 / total as f64,
                        (Op::Mean { .. }, Some(ax)) => 1.0 / xs[*ax] as f64,
                        _ => 1.0,
                    };
                    let gx: Vec<f64> = match axis {
                        None => vec![gy[0] * scale; total],
                        Some(ax) => {
                            let (outer, len, inner) = split_axis(xs, *ax);
                            let mut gx = vec![0.0; total];
                            for o in 0..outer {
                                for l in 0..len {
                                    let dst = &mut gx[(o * len + l) * inner..][..inner];
                                    for (d, g) in dst.iter_mut().zip(&gy[o * inner..(o + 1) * inner]) {
                                        *d = g * scale;
                                    }
                                }
                            }
                            gx
                        }
                    };
                    acc(&mut grads[x.0], gx);
                }
            }
            Op::L2Norm(x) => {
                if self.wants(*x) {
                    let xv = val(*x);
                    let rows = y.len();
                    let w = xv.len() / rows;
                    let mut gx = vec![0.0; xv.len()];
                    for (r, (&n, &g)) in y.data().iter().zip(gy.iter()).enumerate() {
                        if n > 0.0 {
                            let span = r * w..(r + 1) * w;
                            for (o, &xi) in gx[span.clone()].iter_mut().zip(&xv[span]) {
                                *o = g * xi / n;
                            }
                        }
                    }
                    acc(&mut grads[x.0], gx);
                }
            }
            Op::NormalizeRows { x, norms } => {
                if self.wants(*x) {
                    let w = y.len() / norms.len();
                    let mut gx = vec![0.0; y.len()];
                    for (r, &n) in norms.iter().enumerate() {
                        if n <= 0.0 {
                            continue;
                        }
                        let yr = &y.data()[r * w..(r + 1) * w];
                        let gr = &gy[r * w..(r + 1) * w];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for i in 0..w {
                            gx[r * w + i] = (gr[i] - yr[i] * dot) / n;
                        }
                    }
                    acc(&mut grads[x.0], gx);
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    acc(&mut grads[x.0], gy.iter().copied());
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(y.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    if self.wants(v) {
                        let mut gv = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gv.extend_from_slice(&gy[start..start + len * inner]);
                        }
                        acc(&mut grads[v.0], gv);
                    }
                    offset += len;
                }
            }
            Op::Upsample2x(x) => {
                if self.wants(*x) {
                    let s = self.shape(*x);
                    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                    let mut gx = vec![0.0; planes * h * w];
                    for p in 0..planes {
                        for i in 0..2 * h {
                            for j in 0..2 * w {
                                gx[(p * h + i / 2) * w + j / 2] += gy[(p * 2 * h + i) * 2 * w + j];
                            }
                        }
                    }
                    acc(&mut grads[x.0], gx);
                }
            }
            Op::BatchNorm(rec) => {
                let (outer, ch, inner) = split_axis(y.shape(), 1);
                let m = (outer * inner) as f64;
                let mut sum_g = vec![0.0; ch];
                let mut sum_gx = vec![0.0; ch];
                for o in 0..outer {
                    for c in 0..ch {
                        let start = (o * ch + c) * inner;
                        let span = start..start + inner;
                        for (&g, &xh) in gy[span.clone()].iter().zip(&rec.xhat[span]) {
                            sum_g[c] += g;
                            sum_gx[c] += g * xh;
                        }
                    }
                }
                if self.wants(rec.gamma) {
                    acc(&mut grads[rec.gamma.0], sum_gx.iter().copied());
                }
                if self.wants(rec.beta) {
                    acc(&mut grads[rec.beta.0], sum_g.iter().copied());
                }
                if self.wants(rec.x) {
                    let gamma = val(rec.gamma);
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for c in 0..ch {
                            let k = gamma[c] * rec.inv_std[c];
                            let start = (o * ch + c) * inner;
                            for i in start..start + inner {
                                gx[i] = if rec.train {
                                    k * (gy[i] - sum_g[c] / m - rec.xhat[i] * sum_gx[c] / m)
                                } else {
                                    k * gy[i]
                                };
                            }
                        }
                    }
                    acc(&mut grads[rec.x.0], gx);
                }
            }
            Op::Softmax { x, axis } => {
                if self.wants(*x) {
                    let (outer, len, inner) = split_axis(y.shape(), *axis);
                    let s = y.data();
                    let mut gx = vec![0.0; s.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + i;
                            let dot: f64 = (0..len).map(|l| gy[idx(l)] * s[idx(l)]).sum();
                            for l in 0..len {
                                gx[idx(l)] = s[idx(l)] * (gy[idx(l)] - dot);
                            }
                        }
                    }
                    acc(&mut grads[x.0], gx);
                }
            }
            Op::LogSoftmax { x, axis } => {
                if self.wants(*x) {
                    let (outer, len, inner) = split_axis(y.shape(), *axis);
                    let ls = y.data();
                    let mut gx = vec![0.0; ls.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + i;
                            let total: f64 = (0..len).map(|l| gy[idx(l)]).sum();
                            for l in 0..len {
                                gx[idx(l)] = gy[idx(l)] - libm::exp(ls[idx(l)]) * total;
                            }
                        }
                    }
                    acc(&mut grads[x.0], gx);
                }
            }
        }
    }
}
