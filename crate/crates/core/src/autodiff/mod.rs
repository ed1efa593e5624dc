//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in
//! execution order, which is also a topological order. Calling
//! [`Graph::backward`] on a scalar node walks the tape once in reverse and
//! returns the gradient of that scalar with respect to every node that
//! requires grad.
//!
//! ```
//! use zskt_core::autodiff::Graph;
//! use zskt_core::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.square(x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod backward;
pub(crate) mod kernels;

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::{split_axis, ConvGeom};

pub use backward::Gradients;

/// Floor applied inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;
/// Variance epsilon for batch normalization.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The named operation kinds accepted by [`Graph::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    ScalarMul,
    AddBias,
    MatMul,
    Transpose,
    Conv2d,
    Relu,
    Tanh,
    Exp,
    Log,
    Square,
    Sum,
    Mean,
    L2Norm,
    NormalizeRows,
    Reshape,
    Concat,
    Upsample2x,
    BatchNorm,
    Softmax,
    LogSoftmax,
}

impl OpKind {
    pub const ALL: [OpKind; 23] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::ScalarMul,
        OpKind::AddBias,
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Conv2d,
        OpKind::Relu,
        OpKind::Tanh,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Square,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::L2Norm,
        OpKind::NormalizeRows,
        OpKind::Reshape,
        OpKind::Concat,
        OpKind::Upsample2x,
        OpKind::BatchNorm,
        OpKind::Softmax,
        OpKind::LogSoftmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::ScalarMul => "scalar-mul",
            OpKind::AddBias => "add-bias",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Conv2d => "conv2d",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::L2Norm => "l2-norm",
            OpKind::NormalizeRows => "normalize-rows",
            OpKind::Reshape => "reshape",
            OpKind::Concat => "concat",
            OpKind::Upsample2x => "upsample-nearest-2x",
            OpKind::BatchNorm => "batchnorm",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log-softmax",
        }
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownOp(s.to_string()))
    }
}

/// Batch-normalization mode.
#[derive(Clone, Debug, PartialEq)]
pub enum BnMode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with fixed running statistics `(mean, var)`.
    Eval { mean: Vec<f64>, var: Vec<f64> },
}

/// Attributes for [`Graph::apply`]. Unused fields are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Attrs {
    pub axis: Option<usize>,
    pub stride: usize,
    pub pad: usize,
    pub scalar: f64,
    pub shape: Vec<usize>,
    pub bn: BnMode,
}

impl Default for Attrs {
    fn default() -> Self {
        Self {
            axis: None,
            stride: 1,
            pad: 0,
            scalar: 1.0,
            shape: Vec::new(),
            bn: BnMode::Train,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum { x: Var, axis: Option<usize> },
    Mean { x: Var, axis: Option<usize> },
    L2Norm(Var),
    NormalizeRows { x: Var, norms: Vec<f64> },
    Reshape(Var),
    Concat { xs: Vec<Var>, axis: usize },
    Upsample2x(Var),
    BatchNorm(BnRecord),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
}

#[derive(Clone, Debug)]
pub(crate) struct BnRecord {
    pub x: Var,
    pub gamma: Var,
    pub beta: Var,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub train: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub op: Op,
    pub value: Tensor,
    pub requires_grad: bool,
}

/// Batch statistics produced by a train-mode batch-norm node.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

/// A recording of tensor operations.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    no_grad: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph on which nothing requires grad; ops only compute values.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            no_grad: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Add a leaf whose gradient will be tracked.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Add a leaf that is treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let rg = requires_grad && !self.no_grad;
        self.push(Op::Leaf, t, rg)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let rg = !self.no_grad && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(op, value, rg)
    }

    /// Apply an op by kind. Inputs and attributes are interpreted per kind:
    /// `batchnorm` takes `[x, gamma, beta]`, `concat` any number of inputs,
    /// binary ops two and everything else one.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var], attrs: &Attrs) -> Result<Var> {
        let arity = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::AddBias | OpKind::MatMul | OpKind::Conv2d => 2,
            OpKind::BatchNorm => 3,
            OpKind::Concat => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::shape(
                kind.name(),
                format!("expected {arity} inputs, got {}", inputs.len()),
            ));
        }
        let x = inputs[0];
        match kind {
            OpKind::Add => self.add(x, inputs[1]),
            OpKind::Sub => self.sub(x, inputs[1]),
            OpKind::Mul => self.mul(x, inputs[1]),
            OpKind::ScalarMul => Ok(self.scale(x, attrs.scalar)),
            OpKind::AddBias => self.add_bias(x, inputs[1]),
            OpKind::MatMul => self.matmul(x, inputs[1]),
            OpKind::Transpose => self.transpose(x),
            OpKind::Conv2d => self.conv2d(x, inputs[1], attrs.stride, attrs.pad),
            OpKind::Relu => Ok(self.relu(x)),
            OpKind::Tanh => Ok(self.tanh(x)),
            OpKind::Exp => Ok(self.exp(x)),
            OpKind::Log => Ok(self.log(x)),
            OpKind::Square => self.square(x),
            OpKind::Sum => self.sum(x, attrs.axis),
            OpKind::Mean => self.mean(x, attrs.axis),
            OpKind::L2Norm => self.l2_norm(x),
            OpKind::NormalizeRows => self.normalize_rows(x),
            OpKind::Reshape => self.reshape(x, &attrs.shape),
            OpKind::Concat => self.concat(inputs, attrs.axis.unwrap_or(0)),
            OpKind::Upsample2x => self.upsample2x(x),
            OpKind::BatchNorm => self
                .batch_norm(x, inputs[1], inputs[2], &attrs.bn)
                .map(|(v, _)| v),
            OpKind::Softmax => self.softmax(x, attrs.axis.unwrap_or(self.shape(x).len().saturating_sub(1))),
            OpKind::LogSoftmax => {
                self.log_softmax(x, attrs.axis.unwrap_or(self.shape(x).len().saturating_sub(1)))
            }
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip(a, b, |x, y| x + y);
        Ok(self.record(Op::Add(a, b), v, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip(a, b, |x, y| x - y);
        Ok(self.record(Op::Sub(a, b), v, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip(a, b, |x, y| x * y);
        Ok(self.record(Op::Mul(a, b), v, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| c * x);
        self.record(Op::ScalarMul(a, c), v, &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Broadcast-add a per-channel bias along axis 1.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(b);
        if xs.len() < 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(Error::shape("add-bias", format!("{xs:?} + {bs:?}")));
        }
        let (outer, ch, inner) = split_axis(&xs, 1);
        let bias = self.value(b).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for (c, &bv) in bias.iter().enumerate() {
                let start = (o * ch + c) * inner;
                data[start..start + inner].iter_mut().for_each(|v| *v += bv);
            }
        }
        Ok(self.record(Op::AddBias(x, b), Tensor::from_parts(xs, data), &[x, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            kernels::Mat::rows(self.value(a).data(), k),
            kernels::Mat::rows(self.value(b).data(), n),
            &mut out,
            false,
        );
        Ok(self.record(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("rank {} input", s.len())));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.record(Op::Transpose(a), Tensor::from_parts(vec![c, r], out), &[a]))
    }

    /// 2-d convolution without bias. `x: N×C×H×W`, `w: O×C×kh×kw`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || stride == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("input {xs:?}, kernel {ws:?}, stride {stride}"),
            ));
        }
        let (h, wd, kh, kw) = (xs[2] + 2 * pad, xs[3] + 2 * pad, ws[2], ws[3]);
        if h < kh || wd < kw {
            return Err(Error::shape(
                "conv2d",
                format!("padded input {h}x{wd} smaller than kernel {kh}x{kw}"),
            ));
        }
        let geom = ConvGeom {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kh,
            kw,
            stride,
            pad,
            out_h: (h - kh) / stride + 1,
            out_w: (wd - kw) / stride + 1,
        };
        let out = kernels::conv_forward(self.value(x).data(), self.value(w).data(), xs[0], ws[0], &geom);
        let value = Tensor::from_parts(vec![xs[0], ws[0], geom.out_h, geom.out_w], out);
        Ok(self.record(Op::Conv2d { x, w, geom }, value, &[x, w]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.record(Op::Relu(a), v, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, libm::tanh);
        self.record(Op::Tanh(a), v, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, libm::exp);
        self.record(Op::Exp(a), v, &[a])
    }

    /// Natural log guarded as `ln(max(x, LOG_FLOOR))`.
    pub fn log(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| libm::log(x.max(LOG_FLOOR)));
        self.record(Op::Log(a), v, &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.map(a, |x| x * x);
        Ok(self.record(Op::Square(a), v, &[a]))
    }

    fn reduce(&self, op: &'static str, x: Var, axis: Option<usize>) -> Result<(Vec<usize>, Vec<f64>)> {
        let t = self.value(x);
        match axis {
            None => Ok((Vec::new(), vec![t.sum()])),
            Some(ax) if ax < t.rank() => {
                let (outer, len, inner) = split_axis(t.shape(), ax);
                let mut out = vec![0.0; outer * inner];
                let d = t.data();
                for o in 0..outer {
                    for l in 0..len {
                        let src = &d[(o * len + l) * inner..][..inner];
                        for (dst, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *dst += s;
                        }
                    }
                }
                let mut shape = t.shape().to_vec();
                shape.remove(ax);
                Ok((shape, out))
            }
            Some(ax) => Err(Error::shape(op, format!("axis {ax} on rank {}", t.rank()))),
        }
    }

    /// Sum over one axis (removed from the shape) or over everything.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let (shape, data) = self.reduce("sum", x, axis)?;
        Ok(self.record(Op::Sum { x, axis }, Tensor::from_parts(shape, data), &[x]))
    }

    /// Mean over one axis (removed from the shape) or over everything.
    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let (shape, mut data) = self.reduce("mean", x, axis)?;
        let t = self.value(x);
        let count = match axis {
            None => t.len(),
            Some(ax) => t.shape()[ax],
        } as f64;
        data.iter_mut().for_each(|v| *v /= count);
        Ok(self.record(Op::Mean { x, axis }, Tensor::from_parts(shape, data), &[x]))
    }

    /// Per-sample L2 norm over all trailing axes: `N×… → N`.
    /// A rank-1 input reduces to a scalar.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 {
            return Err(Error::shape("l2-norm", "rank-0 input"));
        }
        let (rows, shape) = if t.rank() == 1 {
            (1, Vec::new())
        } else {
            (t.shape()[0], vec![t.shape()[0]])
        };
        let w = t.len() / rows;
        let out = t
            .data()
            .chunks(w)
            .map(|r| libm::sqrt(r.iter().map(|v| v * v).sum::<f64>()))
            .collect();
        Ok(self.record(Op::L2Norm(x), Tensor::from_parts(shape, out), &[x]))
    }

    /// Divide each sample (leading-axis entry) by its L2 norm; zero samples
    /// stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 2 {
            return Err(Error::shape("normalize-rows", format!("rank {} input", t.rank())));
        }
        let w = t.len() / t.shape()[0];
        let mut norms = Vec::with_capacity(t.shape()[0]);
        let mut out = Vec::with_capacity(t.len());
        for r in t.data().chunks(w) {
            let n = libm::sqrt(r.iter().map(|v| v * v).sum::<f64>());
            norms.push(n);
            if n > 0.0 {
                out.extend(r.iter().map(|v| v / n));
            } else {
                out.extend(core::iter::repeat_n(0.0, w));
            }
        }
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        Ok(self.record(Op::NormalizeRows { x, norms }, value, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self
            .value(x)
            .reshape(shape)
            .map_err(|_| Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))))?;
        Ok(self.record(Op::Reshape(x), v, &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} on rank {}", first.len())));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{first:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::from_parts(shape, out);
        Ok(self.record(Op::Concat { xs: xs.to_vec(), axis }, value, xs))
    }

    /// Nearest-neighbour 2× upsampling of `N×C×H×W`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("upsample-nearest-2x", format!("rank {} input", s.len())));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![0.0; planes * 4 * h * w];
        for p in 0..planes {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    out[(p * 2 * h + i) * 2 * w + j] = src[(p * h + i / 2) * w + j / 2];
                }
            }
        }
        let value = Tensor::from_parts(vec![s[0], s[1], 2 * h, 2 * w], out);
        Ok(self.record(Op::Upsample2x(x), value, &[x]))
    }

    /// Per-channel batch normalization over axis 1 of a rank-2 or rank-4
    /// input. In train mode the batch statistics are returned so the caller
    /// can maintain running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: &BnMode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.shape(x).to_vec();
        if !(xs.len() == 2 || xs.len() == 4) {
            return Err(Error::shape("batchnorm", format!("rank {} input", xs.len())));
        }
        let ch = xs[1];
        for p in [gamma, beta] {
            if self.shape(p) != [ch] {
                return Err(Error::shape("batchnorm", format!("param {:?} for {ch} channels", self.shape(p))));
            }
        }
        let (outer, _, inner) = split_axis(&xs, 1);
        let m = (outer * inner) as f64;
        let d = self.value(x).data();
        let (mean, var, stats) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for o in 0..outer {
                    for c in 0..ch {
                        mean[c] += d[(o * ch + c) * inner..][..inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for o in 0..outer {
                    for c in 0..ch {
                        var[c] += d[(o * ch + c) * inner..][..inner]
                            .iter()
                            .map(|v| (v - mean[c]) * (v - mean[c]))
                            .sum::<f64>();
                    }
                }
                let unbiased = var
                    .iter()
                    .map(|v| if m > 1.0 { v / (m - 1.0) } else { 0.0 })
                    .collect();
                var.iter_mut().for_each(|v| *v /= m);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != ch || var.len() != ch {
                    return Err(Error::shape("batchnorm", "running statistics length"));
                }
                (mean.clone(), var.clone(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; d.len()];
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for c in 0..ch {
                let start = (o * ch + c) * inner;
                for i in start..start + inner {
                    xhat[i] = (d[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + b[c];
                }
            }
        }
        let rec = BnRecord {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train: matches!(mode, BnMode::Train),
        };
        let v = self.record(Op::BatchNorm(rec), Tensor::from_parts(xs, out), &[x, gamma, beta]);
        Ok((v, stats))
    }

    fn softmax_values(&self, op: &'static str, x: Var, axis: usize, log: bool) -> Result<Tensor> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::shape(op, format!("axis {axis} on rank {}", t.rank())));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let d = t.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| d[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..len).map(|l| libm::exp(d[idx(l)] - max)).sum();
                let lz = libm::log(z);
                for l in 0..len {
                    let shifted = d[idx(l)] - max;
                    out[idx(l)] = if log { shifted - lz } else { libm::exp(shifted) / z };
                }
            }
        }
        Ok(Tensor::from_parts(t.shape().to_vec(), out))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.softmax_values("softmax", x, axis, false)?;
        Ok(self.record(Op::Softmax { x, axis }, v, &[x]))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.softmax_values("log-softmax", x, axis, true)?;
        Ok(self.record(Op::LogSoftmax { x, axis }, v, &[x]))
    }
}

/// Softmax of a plain tensor along its last axis.
pub fn softmax(t: &Tensor) -> Tensor {
    let mut g = Graph::inference();
    let x = g.constant(t.clone());
    let axis = t.rank().saturating_sub(1);
    let y = g.softmax(x, axis).expect("last axis exists");
    g.value(y).clone()
}
