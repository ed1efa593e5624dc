use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Where a convolutional classifier exposes activation blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TapPolicy {
    /// One tap at the end of each group of residual blocks.
    #[default]
    Group,
    /// One tap after every residual block.
    Block,
}

/// Multilayer perceptron: `input → hidden… → classes`, relu between layers.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

/// Scaled-down wide residual network.
///
/// A 3×3 stem convolution is followed by three groups of `depth`
/// pre-activation residual blocks with `widths[g] · width` channels; groups
/// after the first halve the spatial size. Batch norm, relu, global average
/// pooling and a linear layer produce the logits.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ConvNetSpec {
    /// Per-sample input shape `[channels, height, width]`.
    pub input: [usize; 3],
    pub classes: usize,
    pub widths: [usize; 3],
    /// Width multiplier.
    #[cfg_attr(feature = "serde", serde(default = "one"))]
    pub width: usize,
    /// Residual blocks per group.
    #[cfg_attr(feature = "serde", serde(default = "one"))]
    pub depth: usize,
    #[cfg_attr(feature = "serde", serde(default = "one"))]
    pub stem_stride: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub taps: TapPolicy,
}

#[cfg(feature = "serde")]
fn one() -> usize {
    1
}

/// Output activation of a generator.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case", tag = "kind"))]
pub enum GenOutput {
    /// `tanh` mapped affinely onto `[low, high]`.
    Bounded { low: f64, high: f64 },
    /// Raw convolution output.
    Unbounded,
}

/// Pseudo-data generator: linear projection of `z` to a `channels × b × b`
/// grid, then conv → BN → relu → upsample → conv → BN → relu → upsample →
/// conv, where `b` is a quarter of the output side.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GeneratorSpec {
    pub z_dim: usize,
    /// Per-sample output shape `[channels, height, width]`.
    pub output: [usize; 3],
    #[cfg_attr(feature = "serde", serde(default = "default_gen_channels"))]
    pub channels: usize,
    pub activation: GenOutput,
}

#[cfg(feature = "serde")]
fn default_gen_channels() -> usize {
    GeneratorSpec::DEFAULT_CHANNELS
}

impl GeneratorSpec {
    pub const DEFAULT_CHANNELS: usize = 64;

    pub fn new(z_dim: usize, output: [usize; 3]) -> Self {
        Self {
            z_dim,
            output,
            channels: Self::DEFAULT_CHANNELS,
            activation: GenOutput::Bounded { low: -1.0, high: 1.0 },
        }
    }

    pub fn base_grid(&self) -> (usize, usize) {
        (self.output[1] / 4, self.output[2] / 4)
    }
}

/// Architecture description for every network the engine builds.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case", tag = "kind"))]
pub enum NetSpec {
    Mlp(MlpSpec),
    #[cfg_attr(feature = "serde", serde(rename = "convnet"))]
    ConvNet(ConvNetSpec),
    Generator(GeneratorSpec),
}

impl NetSpec {
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Self {
        NetSpec::Mlp(MlpSpec {
            input,
            hidden: hidden.to_vec(),
            classes,
        })
    }

    /// Per-sample input shape.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            NetSpec::Mlp(s) => alloc::vec![s.input],
            NetSpec::ConvNet(s) => s.input.to_vec(),
            NetSpec::Generator(s) => alloc::vec![s.z_dim],
        }
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> Vec<usize> {
        match self {
            NetSpec::Mlp(s) => alloc::vec![s.classes],
            NetSpec::ConvNet(s) => alloc::vec![s.classes],
            NetSpec::Generator(s) => s.output.to_vec(),
        }
    }

    /// Class count for classifiers, `None` for generators.
    pub fn classes(&self) -> Option<usize> {
        match self {
            NetSpec::Mlp(s) => Some(s.classes),
            NetSpec::ConvNet(s) => Some(s.classes),
            NetSpec::Generator(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidSpec(msg));
        match self {
            NetSpec::Mlp(s) => {
                if s.input == 0 || s.classes < 2 || s.hidden.contains(&0) {
                    return bad(format!("mlp extents must be positive with ≥2 classes: {s:?}"));
                }
            }
            NetSpec::ConvNet(s) => {
                if s.input.contains(&0)
                    || s.classes < 2
                    || s.widths.contains(&0)
                    || s.width == 0
                    || s.depth == 0
                    || s.stem_stride == 0
                {
                    return bad(format!("convnet extents must be positive with ≥2 classes: {s:?}"));
                }
            }
            NetSpec::Generator(s) => {
                let [c, h, w] = s.output;
                if s.z_dim == 0 || s.channels == 0 || c == 0 {
                    return bad(format!("generator extents must be positive: {s:?}"));
                }
                if h < 4 || w < 4 || h % 4 != 0 || w % 4 != 0 {
                    return bad(format!(
                        "generator output {h}x{w} must be four times a base grid"
                    ));
                }
                if let GenOutput::Bounded { low, high } = s.activation {
                    if !(low < high) || !low.is_finite() || !high.is_finite() {
                        return bad(format!("bounded output needs low < high, got [{low}, {high}]"));
                    }
                }
            }
        }
        Ok(())
    }
}
