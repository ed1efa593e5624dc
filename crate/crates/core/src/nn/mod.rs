//! Teacher/student classifiers and the pseudo-data generator.
//!
//! A [`Network`] is an ordered stack of [`Layer`]s whose weights live in a
//! flat, uniquely named parameter list. Classifiers mark activation blocks
//! with taps; a forward pass returns those blocks alongside the output so
//! attention maps can be compared across architectures.

mod spec;

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{BatchStats, BnMode, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use spec::{ConvNetSpec, GenOutput, GeneratorSpec, MlpSpec, NetSpec, TapPolicy};

/// Running-average momentum for batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named tensor owned by a network.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Linear {
        weight: usize,
        bias: usize,
    },
    Conv {
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        pad: usize,
    },
    /// `gamma`/`beta` index parameters, `mean`/`var` index buffers.
    BatchNorm {
        gamma: usize,
        beta: usize,
        mean: usize,
        var: usize,
    },
    Relu,
    /// `tanh` mapped onto `[low, high]`.
    BoundedTanh {
        low: f64,
        high: f64,
    },
    Upsample2x,
    /// Reshape each sample to the given shape.
    Reshape(Vec<usize>),
    GlobalAvgPool,
    Residual(Box<Residual>),
    /// Record the current activation as a named block.
    Tap(String),
    /// Record the current activation as penultimate features.
    Penultimate,
}

/// Pre-activation residual block: `bn → relu → conv → bn → relu → conv`
/// plus an identity or 1×1 projection shortcut.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub bn1: Layer,
    pub conv1: Layer,
    pub bn2: Layer,
    pub conv2: Layer,
    pub shortcut: Option<Layer>,
}

/// Activation blocks captured during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct ActivationSet {
    /// `(tap name, batch × channels × h × w)` in layer order.
    pub blocks: Vec<(String, Var)>,
    /// `batch × features` input of the final linear layer.
    pub penultimate: Option<Var>,
}

impl ActivationSet {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.blocks.iter().map(|(_, v)| *v)
    }
}

/// Result of [`Network::forward`].
#[derive(Clone, Debug)]
pub struct NetOutput {
    /// Logits for classifiers, samples for generators.
    pub output: Var,
    pub acts: ActivationSet,
    /// Train-mode batch statistics keyed by batch-norm layer, pending commit.
    pub stats: Vec<(usize, usize, BatchStats)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetSpec,
    params: Vec<Param>,
    buffers: Vec<Param>,
    layers: Vec<Layer>,
    mode: Mode,
}

struct Builder<'r> {
    rng: &'r mut crate::Rng,
    params: Vec<Param>,
    buffers: Vec<Param>,
}

impl Builder<'_> {
    fn he_uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = libm::sqrt(6.0 / fan_in as f64);
        let value = Tensor::uniform(shape, -bound, bound, self.rng);
        self.push(name, value)
    }

    fn push(&mut self, name: String, value: Tensor) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    fn linear(&mut self, name: &str, input: usize, output: usize) -> Layer {
        let weight = self.he_uniform(format!("{name}.weight"), &[input, output], input);
        let bias = self.push(format!("{name}.bias"), Tensor::zeros(&[output]));
        Layer::Linear { weight, bias }
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, bias: bool) -> Layer {
        let weight = self.he_uniform(format!("{name}.weight"), &[cout, cin, k, k], cin * k * k);
        let bias = bias.then(|| self.push(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Layer::Conv {
            weight,
            bias,
            stride,
            pad: k / 2,
        }
    }

    fn batch_norm(&mut self, name: &str, ch: usize) -> Layer {
        let gamma = self.push(format!("{name}.gamma"), Tensor::full(&[ch], 1.0));
        let beta = self.push(format!("{name}.beta"), Tensor::zeros(&[ch]));
        self.buffers.push(Param {
            name: format!("{name}.running_mean"),
            value: Tensor::zeros(&[ch]),
        });
        self.buffers.push(Param {
            name: format!("{name}.running_var"),
            value: Tensor::full(&[ch], 1.0),
        });
        let n = self.buffers.len();
        Layer::BatchNorm {
            gamma,
            beta,
            mean: n - 2,
            var: n - 1,
        }
    }
}

fn conv_out(size: usize, stride: usize) -> usize {
    // 3×3 kernels with padding 1 and 1×1 kernels with padding 0 agree.
    (size - 1) / stride + 1
}

impl Network {
    /// Build a classifier (`mlp` or `convnet`) with He-uniform weights.
    pub fn classifier(spec: &NetSpec, seed: u64) -> Result<Network> {
        if matches!(spec, NetSpec::Generator(_)) {
            return Err(Error::InvalidSpec("classifier spec expected, got generator".into()));
        }
        Network::build(spec, seed)
    }

    /// Build a generator with He-uniform weights.
    pub fn generator(spec: &GeneratorSpec, seed: u64) -> Result<Network> {
        Network::build(&NetSpec::Generator(spec.clone()), seed)
    }

    /// Build any network kind from its spec.
    pub fn build(spec: &NetSpec, seed: u64) -> Result<Network> {
        spec.validate()?;
        let mut rng = crate::rng(seed);
        let mut b = Builder {
            rng: &mut rng,
            params: Vec::new(),
            buffers: Vec::new(),
        };
        let mut layers = Vec::new();
        match spec {
            NetSpec::Mlp(s) => {
                let mut width = s.input;
                for (i, &h) in s.hidden.iter().enumerate() {
                    layers.push(b.linear(&format!("fc{i}"), width, h));
                    layers.push(Layer::Relu);
                    layers.push(Layer::Tap(format!("hidden{i}")));
                    width = h;
                }
                layers.push(Layer::Penultimate);
                layers.push(b.linear("out", width, s.classes));
            }
            NetSpec::ConvNet(s) => {
                let widths: Vec<usize> = s.widths.iter().map(|w| w * s.width).collect();
                layers.push(b.conv("stem", s.input[0], widths[0], 3, s.stem_stride, false));
                let mut cin = widths[0];
                for (gi, &cout) in widths.iter().enumerate() {
                    for bi in 0..s.depth {
                        let stride = if gi > 0 && bi == 0 { 2 } else { 1 };
                        let name = format!("group{gi}.block{bi}");
                        let block = Residual {
                            bn1: b.batch_norm(&format!("{name}.bn1"), cin),
                            conv1: b.conv(&format!("{name}.conv1"), cin, cout, 3, stride, false),
                            bn2: b.batch_norm(&format!("{name}.bn2"), cout),
                            conv2: b.conv(&format!("{name}.conv2"), cout, cout, 3, 1, false),
                            shortcut: (cin != cout || stride != 1)
                                .then(|| b.conv(&format!("{name}.shortcut"), cin, cout, 1, stride, false)),
                        };
                        layers.push(Layer::Residual(Box::new(block)));
                        if s.taps == TapPolicy::Block {
                            layers.push(Layer::Tap(name));
                        }
                        cin = cout;
                    }
                    if s.taps == TapPolicy::Group {
                        layers.push(Layer::Tap(format!("group{gi}")));
                    }
                }
                layers.push(b.batch_norm("head.bn", cin));
                layers.push(Layer::Relu);
                layers.push(Layer::GlobalAvgPool);
                layers.push(Layer::Penultimate);
                layers.push(b.linear("head.fc", cin, s.classes));
            }
            NetSpec::Generator(s) => {
                let (bh, bw) = s.base_grid();
                let c = s.channels;
                layers.push(b.linear("project", s.z_dim, c * bh * bw));
                layers.push(Layer::Reshape(vec![c, bh, bw]));
                layers.push(b.conv("conv1", c, c, 3, 1, true));
                layers.push(b.batch_norm("bn1", c));
                layers.push(Layer::Relu);
                layers.push(Layer::Upsample2x);
                layers.push(b.conv("conv2", c, c, 3, 1, true));
                layers.push(b.batch_norm("bn2", c));
                layers.push(Layer::Relu);
                layers.push(Layer::Upsample2x);
                layers.push(b.conv("conv3", c, s.output[0], 3, 1, true));
                if let GenOutput::Bounded { low, high } = s.activation {
                    layers.push(Layer::BoundedTanh { low, high });
                }
            }
        }
        let (params, buffers) = (b.params, b.buffers);
        Ok(Network {
            spec: spec.clone(),
            params,
            buffers,
            layers,
            mode: Mode::Train,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Param] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Param] {
        &mut self.buffers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn classes(&self) -> Option<usize> {
        self.spec.classes()
    }

    /// Total number of scalar parameters (buffers excluded).
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Parameter count derived from the layer structure alone.
    pub fn analytic_param_count(&self) -> usize {
        fn count(layer: &Layer, params: &[Param]) -> usize {
            let dims = |i: usize| params[i].value.shape();
            match layer {
                Layer::Linear { weight, .. } => {
                    let s = dims(*weight);
                    s[0] * s[1] + s[1]
                }
                Layer::Conv { weight, bias, .. } => {
                    let s = dims(*weight);
                    s[0] * s[1] * s[2] * s[3] + bias.map_or(0, |_| s[0])
                }
                Layer::BatchNorm { gamma, .. } => 2 * dims(*gamma)[0],
                Layer::Residual(r) => {
                    [&r.bn1, &r.conv1, &r.bn2, &r.conv2].iter().map(|l| count(l, params)).sum::<usize>()
                        + r.shortcut.as_ref().map_or(0, |l| count(l, params))
                }
                _ => 0,
            }
        }
        self.layers.iter().map(|l| count(l, &self.params)).sum()
    }

    /// Number of tapped activation blocks.
    pub fn tap_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Tap(_))).count()
    }

    /// Order-sensitive digest of every parameter.
    pub fn checksum(&self) -> u64 {
        self.params
            .iter()
            .fold(0u64, |h, p| h.rotate_left(7) ^ p.value.checksum())
    }

    /// Fresh optimizer state shaped like the parameters.
    pub fn optimizer(&self, rule: crate::optim::Optimizer) -> crate::optim::OptState {
        crate::optim::OptState::new(rule, self.params.iter().map(|p| p.value.shape()))
    }

    /// Gradients of `params` (as bound by [`Network::bind`]) in parameter
    /// order.
    pub fn gradients(&self, g: &Graph, grads: &crate::autodiff::Gradients, params: &[Var]) -> Vec<Tensor> {
        params.iter().map(|&v| grads.get_or_zeros(g, v)).collect()
    }

    /// Apply one optimizer update.
    pub fn update(&mut self, state: &mut crate::optim::OptState, grads: &[Tensor], lr: f64) -> Result<()> {
        state.update(self.params.iter_mut().map(|p| &mut p.value), grads, lr)
    }

    /// Put every parameter on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable))
            .collect()
    }

    /// Forward pass in the network's current mode. Train-mode batch
    /// statistics are returned in [`NetOutput::stats`]; see
    /// [`Network::commit_stats`].
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<NetOutput> {
        let want = self.spec.input_shape();
        let got = g.shape(x);
        if got.len() != want.len() + 1 || got[1..] != want[..] {
            return Err(Error::shape(
                "forward",
                format!("input {got:?} does not match batch × {want:?}"),
            ));
        }
        let mut out = NetOutput {
            output: x,
            acts: ActivationSet::default(),
            stats: Vec::new(),
        };
        let mut h = x;
        for layer in &self.layers {
            h = self.apply_layer(g, params, layer, h, &mut out)?;
        }
        out.output = h;
        Ok(out)
    }

    /// Fold pending batch statistics into the running averages.
    pub fn commit_stats(&mut self, stats: &[(usize, usize, BatchStats)]) {
        for (mean_idx, var_idx, s) in stats {
            for (buf, batch) in [(*mean_idx, &s.mean), (*var_idx, &s.var)] {
                let data = self.buffers[buf].value.data_mut();
                for (r, b) in data.iter_mut().zip(batch) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
                }
            }
        }
    }

    fn apply_layer(
        &self,
        g: &mut Graph,
        params: &[Var],
        layer: &Layer,
        h: Var,
        out: &mut NetOutput,
    ) -> Result<Var> {
        Ok(match layer {
            Layer::Linear { weight, bias } => {
                let y = g.matmul(h, params[*weight])?;
                g.add_bias(y, params[*bias])?
            }
            Layer::Conv {
                weight,
                bias,
                stride,
                pad,
            } => {
                let y = g.conv2d(h, params[*weight], *stride, *pad)?;
                match bias {
                    Some(b) => g.add_bias(y, params[*b])?,
                    None => y,
                }
            }
            Layer::BatchNorm {
                gamma,
                beta,
                mean,
                var,
            } => {
                let mode = match self.mode {
                    Mode::Train => BnMode::Train,
                    Mode::Eval => BnMode::Eval {
                        mean: self.buffers[*mean].value.data().to_vec(),
                        var: self.buffers[*var].value.data().to_vec(),
                    },
                };
                let (y, stats) = g.batch_norm(h, params[*gamma], params[*beta], &mode)?;
                if let Some(s) = stats {
                    out.stats.push((*mean, *var, s));
                }
                y
            }
            Layer::Relu => g.relu(h),
            Layer::BoundedTanh { low, high } => {
                let t = g.tanh(h);
                let half = 0.5 * (high - low);
                let t = g.scale(t, half);
                let mid = g.constant(Tensor::full(g.shape(t), 0.5 * (high + low)));
                g.add(t, mid)?
            }
            Layer::Upsample2x => g.upsample2x(h)?,
            Layer::Reshape(shape) => {
                let mut full = vec![g.shape(h)[0]];
                full.extend_from_slice(shape);
                g.reshape(h, &full)?
            }
            Layer::GlobalAvgPool => {
                let s = g.shape(h).to_vec();
                let flat = g.reshape(h, &[s[0], s[1], s[2] * s[3]])?;
                g.mean(flat, Some(2))?
            }
            Layer::Residual(r) => {
                let o = self.apply_layer(g, params, &r.bn1, h, out)?;
                let o = g.relu(o);
                let y = self.apply_layer(g, params, &r.conv1, o, out)?;
                let y = self.apply_layer(g, params, &r.bn2, y, out)?;
                let y = g.relu(y);
                let y = self.apply_layer(g, params, &r.conv2, y, out)?;
                let skip = match &r.shortcut {
                    Some(sc) => self.apply_layer(g, params, sc, o, out)?,
                    None => h,
                };
                g.add(y, skip)?
            }
            Layer::Tap(name) => {
                let s = g.shape(h).to_vec();
                let block = if s.len() == 2 {
                    g.reshape(h, &[s[0], s[1], 1, 1])?
                } else {
                    h
                };
                out.acts.blocks.push((name.to_string(), block));
                h
            }
            Layer::Penultimate => {
                out.acts.penultimate = Some(h);
                h
            }
        })
    }

    /// Train-mode forward that also folds batch statistics into the
    /// running averages.
    pub fn forward_train(&mut self, g: &mut Graph, params: &[Var], x: Var) -> Result<NetOutput> {
        let prev = self.mode;
        self.mode = Mode::Train;
        let out = self.forward(g, params, x);
        self.mode = prev;
        let out = out?;
        self.commit_stats(&out.stats);
        Ok(out)
    }

    /// Forward a plain batch without gradient tracking in the current mode,
    /// returning the output, the tapped blocks and the penultimate features.
    #[allow(clippy::type_complexity)]
    pub fn forward_with_activations(&self, batch: &Tensor) -> Result<(Tensor, Vec<(String, Tensor)>, Option<Tensor>)> {
        let mut g = Graph::inference();
        let params = self.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let out = self.forward(&mut g, &params, x)?;
        let blocks = out
            .acts
            .blocks
            .iter()
            .map(|(n, v)| (n.clone(), g.value(*v).clone()))
            .collect();
        let pen = out.acts.penultimate.map(|v| g.value(v).clone());
        Ok((g.value(out.output).clone(), blocks, pen))
    }

    /// Output for a batch, evaluated in chunks without gradient tracking.
    pub fn predict(&self, inputs: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = inputs.batch();
        let chunk = chunk.max(1);
        let mut data = Vec::new();
        let mut shape = Vec::new();
        let mut start = 0;
        while start < n {
            let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
            let part = inputs.select(&idx)?;
            let mut g = Graph::inference();
            let params = self.bind(&mut g, false);
            let x = g.constant(part);
            let out = self.forward(&mut g, &params, x)?;
            let v = g.value(out.output);
            shape = v.shape().to_vec();
            data.extend_from_slice(v.data());
            start += chunk;
        }
        shape[0] = n;
        Tensor::new(&shape, data)
    }

    /// Whether two classifiers expose attention-compatible taps: equal tap
    /// counts and equal spatial sizes per tap for the given input shape.
    pub fn taps_compatible(&self, other: &Network) -> Result<bool> {
        let shape = self.spec.input_shape();
        if shape != other.spec.input_shape() {
            return Ok(false);
        }
        let mut full = vec![1];
        full.extend_from_slice(&shape);
        let probe = Tensor::zeros(&full);
        let (_, a, _) = self.forward_with_activations(&probe)?;
        let (_, b, _) = other.forward_with_activations(&probe)?;
        Ok(a.len() == b.len()
            && a.iter().zip(&b).all(|((_, x), (_, y))| x.shape()[2..] == y.shape()[2..]))
    }

    /// Replace parameters and buffers by name from `(name, tensor)` records.
    pub fn load_named(&mut self, records: &[(String, Tensor)]) -> Result<()> {
        for slot in self.params.iter_mut().chain(self.buffers.iter_mut()) {
            let found = records
                .iter()
                .find(|(n, _)| *n == slot.name)
                .ok_or_else(|| Error::InvalidSpec(format!("missing tensor {}", slot.name)))?;
            if found.1.shape() != slot.value.shape() {
                return Err(Error::shape(
                    "load",
                    format!("{}: {:?} vs {:?}", slot.name, found.1.shape(), slot.value.shape()),
                ));
            }
            slot.value = found.1.clone();
        }
        Ok(())
    }

    /// Spatial size after the stem and each group, for documentation and
    /// tap-alignment checks.
    pub fn group_sizes(spec: &ConvNetSpec) -> [(usize, usize); 3] {
        let mut h = conv_out(spec.input[1], spec.stem_stride);
        let mut w = conv_out(spec.input[2], spec.stem_stride);
        let mut out = [(0, 0); 3];
        for (g, slot) in out.iter_mut().enumerate() {
            if g > 0 {
                h = conv_out(h, 2);
                w = conv_out(w, 2);
            }
            *slot = (h, w);
        }
        out
    }
}
