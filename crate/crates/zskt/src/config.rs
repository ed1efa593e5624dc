//! Experiment configuration, read from TOML.
//!
//! Every section is optional and unknown keys are rejected. Seeds inside
//! sections are replaced by the run seed when a command executes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zskt_core::baselines::{FewShotConfig, TrainConfig};
use zskt_core::data::NormStats;
use zskt_core::losses::KdAtConfig;
use zskt_core::nn::{ConvNetSpec, GenOutput, GeneratorSpec, NetSpec, TapPolicy};
use zskt_core::probe::ProbeConfig;
use zskt_core::zeroshot::{NoiseKind, NoiseMatchConfig, ToyConfig, ZeroShotConfig};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Seeds of independent runs; each gets its own output subdirectory.
    pub seeds: Vec<u64>,
    /// Run seeds on separate threads.
    pub parallel: bool,
    pub data: DataConfig,
    /// Architectures; defaults depend on the data kind.
    pub teacher: Option<NetSpec>,
    pub student: Option<NetSpec>,
    pub generator: GeneratorConfig,
    /// Supervised teacher training.
    pub train: TrainConfig,
    pub zeroshot: ZeroShotConfig,
    pub toy: ToyConfig,
    /// Noise for `match-noise`, in pixel units before normalization.
    pub noise: NoiseKind,
    pub noise_match: NoiseMatchConfig,
    pub kd: KdAtConfig,
    pub few_shot: FewShotConfig,
    /// Student training for `distill`.
    pub distill: TrainConfig,
    pub finetune: TrainConfig,
    pub probe: ProbeConfig,
    pub audit: AuditConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            parallel: false,
            data: DataConfig::default(),
            teacher: None,
            student: None,
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            zeroshot: ZeroShotConfig::default(),
            toy: ToyConfig::default(),
            noise: NoiseKind::UniformPixel { low: 0.0, high: 1.0 },
            noise_match: NoiseMatchConfig::default(),
            kd: KdAtConfig::default(),
            few_shot: FewShotConfig::default(),
            distill: TrainConfig::default(),
            finetune: TrainConfig::adam_cosine(200),
            probe: ProbeConfig::default(),
            audit: AuditConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// Directory of the four standard IDX files, plain or gzip-compressed.
    Digits {
        dir: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    /// Gaussian blobs in the plane.
    Blobs {
        classes: usize,
        per_class: usize,
        spread: f64,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Digits {
            dir: PathBuf::from("data/mnist"),
            train_limit: None,
            test_limit: None,
        }
    }
}

/// Output range of the generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GenRange {
    /// The normalized image of the pixel range `[0, 1]`.
    #[default]
    Data,
    Fixed {
        low: f64,
        high: f64,
    },
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub range: GenRange,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            channels: GeneratorSpec::DEFAULT_CHANNELS,
            range: GenRange::Data,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub images: usize,
    /// Inclusive integer pixel range sampled uniformly.
    pub pixel_low: u8,
    pub pixel_high: u8,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            images: 1000,
            pixel_low: 0,
            pixel_high: 255,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Side of the agreement grid for planar data.
    pub grid: usize,
    /// Rows per inference batch.
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { grid: 200, chunk: 256 }
    }
}

/// Small residual networks sized for 28×28 digits.
pub fn digit_teacher() -> NetSpec {
    NetSpec::ConvNet(ConvNetSpec {
        input: [1, 28, 28],
        classes: 10,
        widths: [8, 16, 32],
        width: 1,
        depth: 2,
        stem_stride: 2,
        taps: TapPolicy::Group,
    })
}

pub fn digit_student() -> NetSpec {
    NetSpec::ConvNet(ConvNetSpec {
        widths: [4, 8, 16],
        depth: 1,
        ..match digit_teacher() {
            NetSpec::ConvNet(s) => s,
            _ => unreachable!(),
        }
    })
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().trim().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn teacher_spec(&self) -> NetSpec {
        self.teacher.clone().unwrap_or_else(|| match &self.data {
            DataConfig::Digits { .. } => digit_teacher(),
            DataConfig::Blobs { classes, .. } => NetSpec::mlp(2, &[32, 32], *classes),
        })
    }

    pub fn student_spec(&self) -> NetSpec {
        self.student.clone().unwrap_or_else(|| match &self.data {
            DataConfig::Digits { .. } => digit_student(),
            DataConfig::Blobs { classes, .. } => NetSpec::mlp(2, &[16], *classes),
        })
    }

    /// Generator for the teacher's input shape.
    pub fn generator_spec(&self, teacher: &NetSpec, norm: Option<&NormStats>) -> Result<GeneratorSpec> {
        let shape = teacher.input_shape();
        let output: [usize; 3] = shape
            .as_slice()
            .try_into()
            .map_err(|_| Error::Config(format!("generators need image inputs, teacher takes {shape:?}")))?;
        let activation = match self.generator.range {
            GenRange::Unbounded => GenOutput::Unbounded,
            GenRange::Fixed { low, high } => GenOutput::Bounded { low, high },
            GenRange::Data => {
                let norm = norm.ok_or_else(|| Error::Config("range = data needs normalized image data".into()))?;
                let lows = (0..norm.mean.len()).map(|c| norm.normalize(c, 0.0));
                let highs = (0..norm.mean.len()).map(|c| norm.normalize(c, 1.0));
                GenOutput::Bounded {
                    low: lows.fold(f64::INFINITY, f64::min),
                    high: highs.fold(f64::NEG_INFINITY, f64::max),
                }
            }
        };
        Ok(GeneratorSpec {
            z_dim: self.zeroshot.z_dim,
            output,
            channels: self.generator.channels,
            activation,
        })
    }

    /// Checks that do not need data: specs, section ranges and paths.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.teacher_spec().validate()?;
        self.student_spec().validate()?;
        self.zeroshot.validate()?;
        self.kd.validate()?;
        for t in [&self.train, &self.distill, &self.finetune] {
            t.validate()?;
        }
        self.probe.validate()?;
        if self.eval.grid < 2 || self.eval.chunk == 0 {
            return Err(Error::Config("eval needs grid ≥ 2 and chunk ≥ 1".into()));
        }
        if self.audit.pixel_low > self.audit.pixel_high {
            return Err(Error::Config("audit pixel range is empty".into()));
        }
        match &self.data {
            DataConfig::Digits { dir, .. } => {
                crate::datasets::idx_paths(dir)?;
            }
            DataConfig::Blobs { classes, per_class, spread } => {
                if *classes < 2 || *per_class < 2 || spread.is_nan() || *spread < 0.0 {
                    return Err(Error::Config("blobs need ≥2 classes, ≥2 points per class and spread ≥ 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// Map pixel-unit noise into the normalized input space of single-channel data.
pub fn noise_in_input_space(noise: NoiseKind, norm: &NormStats) -> Result<NoiseKind> {
    if norm.mean.len() != 1 {
        return Err(Error::Config("pixel-unit noise needs single-channel data".into()));
    }
    Ok(match noise {
        NoiseKind::UniformPixel { low, high } => NoiseKind::UniformPixel {
            low: norm.normalize(0, low),
            high: norm.normalize(0, high),
        },
        NoiseKind::Gaussian { mean, std } => NoiseKind::Gaussian {
            mean: norm.normalize(0, mean),
            std: std / norm.std[0],
        },
    })
}
