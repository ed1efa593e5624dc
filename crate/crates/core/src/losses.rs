//! Distillation objectives built on the autodiff graph.
//!
//! All batch losses average over the batch. Logarithms are floored at
//! [`LOG_FLOOR`](crate::autodiff::LOG_FLOOR) so `0 · log 0` evaluates to 0.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::ActivationSet;
use crate::tensor::Tensor;

/// Row-sum tolerance for probability inputs.
pub const NORMALIZATION_TOL: f64 = 1e-6;

fn check_probs(g: &Graph, p: Var, what: &str) -> Result<()> {
    let t = g.value(p);
    if t.rank() != 2 {
        return Err(Error::shape("forward-kl", format!("{what} must be batch × classes, got {:?}", t.shape())));
    }
    for i in 0..t.batch() {
        let row = t.row(i);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > NORMALIZATION_TOL || row.iter().any(|v| *v < 0.0) {
            return Err(Error::NotNormalized(format!("{what} row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// Batch-mean forward KL divergence `Σ_i t_i log(t_i / s_i)` between rows
/// of two probability batches.
pub fn forward_kl(g: &mut Graph, t: Var, s: Var) -> Result<Var> {
    if g.shape(t) != g.shape(s) {
        return Err(Error::shape("forward-kl", format!("{:?} vs {:?}", g.shape(t), g.shape(s))));
    }
    check_probs(g, t, "teacher")?;
    check_probs(g, s, "student")?;
    kl_unchecked(g, t, s)
}

fn kl_unchecked(g: &mut Graph, t: Var, s: Var) -> Result<Var> {
    let n = g.shape(t)[0] as f64;
    let lt = g.log(t);
    let ls = g.log(s);
    let d = g.sub(lt, ls)?;
    let p = g.mul(t, d)?;
    // The log floor can leave a row slightly negative when s < LOG_FLOOR ≤ t;
    // KL is nonnegative, so clamp per sample.
    let rows = g.sum(p, Some(1))?;
    let rows = g.relu(rows);
    let total = g.sum(rows, None)?;
    Ok(g.scale(total, 1.0 / n))
}

/// Divergence between teacher and student predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Divergence {
    /// `KL(T ‖ S)`.
    #[default]
    ForwardKl,
    /// `KL(S ‖ T)`, ablation only.
    ReverseKl,
    /// Jensen–Shannon, ablation only.
    JensenShannon,
}

/// Divergence between two probability batches.
pub fn divergence(g: &mut Graph, t: Var, s: Var, kind: Divergence) -> Result<Var> {
    match kind {
        Divergence::ForwardKl => forward_kl(g, t, s),
        Divergence::ReverseKl => forward_kl(g, s, t),
        Divergence::JensenShannon => {
            check_probs(g, t, "teacher")?;
            check_probs(g, s, "student")?;
            let sum = g.add(t, s)?;
            let m = g.scale(sum, 0.5);
            let a = kl_unchecked(g, t, m)?;
            let b = kl_unchecked(g, s, m)?;
            let both = g.add(a, b)?;
            Ok(g.scale(both, 0.5))
        }
    }
}

/// Spatial attention map `(1/N_A) Σ_c a_c²` of a `batch × N_A × h × w`
/// block, flattened per sample and divided by its L2 norm. All-zero maps
/// stay zero.
pub fn attention_map(g: &mut Graph, block: Var) -> Result<Var> {
    let raw = attention_map_raw(g, block)?;
    g.normalize_rows(raw)
}

/// Attention map before normalization, `batch × (h·w)`.
pub fn attention_map_raw(g: &mut Graph, block: Var) -> Result<Var> {
    let s = g.shape(block).to_vec();
    if s.len() != 4 {
        return Err(Error::shape("attention-map", format!("block must be rank 4, got {s:?}")));
    }
    let sq = g.square(block)?;
    let m = g.mean(sq, Some(1))?;
    g.reshape(m, &[s[0], s[2] * s[3]])
}

/// `Σ_l mean_n ‖f̂(A_l^t) − f̂(A_l^s)‖₂` over matching taps. Zero taps give
/// a zero constant.
pub fn attention_term(g: &mut Graph, t_acts: &ActivationSet, s_acts: &ActivationSet) -> Result<Var> {
    if t_acts.len() != s_acts.len() {
        return Err(Error::TapMismatch {
            teacher: t_acts.len(),
            student: s_acts.len(),
        });
    }
    let mut total: Option<Var> = None;
    for (tb, sb) in t_acts.vars().zip(s_acts.vars()) {
        let ft = attention_map(g, tb)?;
        let fs = attention_map(g, sb)?;
        if g.shape(ft) != g.shape(fs) {
            return Err(Error::shape(
                "attention-term",
                format!("map {:?} vs {:?}", g.shape(ft), g.shape(fs)),
            ));
        }
        let d = g.sub(ft, fs)?;
        let norms = g.l2_norm(d)?;
        let term = g.mean(norms, None)?;
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    Ok(match total {
        Some(v) => v,
        None => g.constant(Tensor::scalar(0.0)),
    })
}

/// The student objective split into its parts.
#[derive(Clone, Copy, Debug)]
pub struct StudentLoss {
    pub total: Var,
    pub divergence: Var,
    pub attention: Var,
}

/// `KL(softmax(t) ‖ softmax(s)) + β · attention_term`.
pub fn student_loss(
    g: &mut Graph,
    t_logits: Var,
    s_logits: Var,
    t_acts: &ActivationSet,
    s_acts: &ActivationSet,
    beta: f64,
) -> Result<StudentLoss> {
    student_loss_with(g, t_logits, s_logits, t_acts, s_acts, beta, Divergence::ForwardKl)
}

/// [`student_loss`] with a selectable divergence.
pub fn student_loss_with(
    g: &mut Graph,
    t_logits: Var,
    s_logits: Var,
    t_acts: &ActivationSet,
    s_acts: &ActivationSet,
    beta: f64,
    kind: Divergence,
) -> Result<StudentLoss> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidConfig(format!("beta must be ≥ 0, got {beta}")));
    }
    if t_acts.len() != s_acts.len() {
        return Err(Error::TapMismatch {
            teacher: t_acts.len(),
            student: s_acts.len(),
        });
    }
    let t = g.softmax(t_logits, 1)?;
    let s = g.softmax(s_logits, 1)?;
    let div = divergence(g, t, s, kind)?;
    if beta == 0.0 {
        let zero = g.constant(Tensor::scalar(0.0));
        return Ok(StudentLoss {
            total: div,
            divergence: div,
            attention: zero,
        });
    }
    let at = attention_term(g, t_acts, s_acts)?;
    let weighted = g.scale(at, beta);
    let total = g.add(div, weighted)?;
    Ok(StudentLoss {
        total,
        divergence: div,
        attention: at,
    })
}

/// Image augmentation used by the consistency term.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case", tag = "kind"))]
pub enum Augmentation {
    GaussianNoise { sigma: f64 },
    /// Gaussian blur with an odd `kernel × kernel` window.
    GaussianBlur { kernel: usize },
}

/// Which extra generator term to add.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ExtraKind {
    /// `−Σ t log t` of the teacher on pseudo data.
    TeacherEntropy,
    /// `−Σ s log s` of the student on pseudo data.
    StudentEntropy,
    /// `KL(T(x) ‖ T(A(x)))`.
    Consistency { augmentation: Augmentation },
    /// `−mean(φ φᵀ)` of the teacher's penultimate features.
    Diversity,
}

/// One γ-weighted extra term of the generator loss.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ExtraLoss {
    pub kind: ExtraKind,
    pub gamma: f64,
    /// `+1` or `−1`; multiplies the whole term.
    #[cfg_attr(feature = "serde", serde(default = "plus_one"))]
    pub sign: f64,
}

#[cfg(feature = "serde")]
fn plus_one() -> f64 {
    1.0
}

impl ExtraLoss {
    pub fn new(kind: ExtraKind, gamma: f64) -> Self {
        Self { kind, gamma, sign: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() {
            return Err(Error::InvalidConfig(format!("extra loss gamma {} is not finite", self.gamma)));
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err(Error::InvalidConfig(format!("extra loss sign must be ±1, got {}", self.sign)));
        }
        match self.kind {
            ExtraKind::Consistency {
                augmentation: Augmentation::GaussianNoise { sigma },
            } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidConfig(format!("noise sigma must be > 0, got {sigma}")))
            }
            ExtraKind::Consistency {
                augmentation: Augmentation::GaussianBlur { kernel },
            } if kernel % 2 == 0 => Err(Error::InvalidConfig(format!("blur kernel must be odd, got {kernel}"))),
            _ => Ok(()),
        }
    }

    fn needs_augmented(&self) -> bool {
        matches!(self.kind, ExtraKind::Consistency { .. })
    }
}

/// Auxiliary graph values some extra terms need.
#[derive(Clone, Debug, Default)]
pub struct ExtraInputs {
    /// Teacher logits on `A(x_p)`, one per consistency term in order.
    pub teacher_augmented: Vec<Var>,
    /// Teacher penultimate features on `x_p`.
    pub teacher_features: Option<Var>,
}

/// Mean per-sample entropy `−Σ p log p` of a probability batch.
pub fn entropy(g: &mut Graph, p: Var) -> Result<Var> {
    let n = g.shape(p)[0] as f64;
    let lp = g.log(p);
    let plp = g.mul(p, lp)?;
    let total = g.sum(plp, None)?;
    Ok(g.scale(total, -1.0 / n))
}

/// Generator objective `−KL(softmax(t) ‖ softmax(s)) + Σ extras`.
pub fn generator_loss(
    g: &mut Graph,
    t_logits: Var,
    s_logits: Var,
    extras: &[ExtraLoss],
    inputs: &ExtraInputs,
) -> Result<Var> {
    generator_loss_with(g, t_logits, s_logits, extras, inputs, Divergence::ForwardKl)
}

/// [`generator_loss`] with a selectable divergence.
pub fn generator_loss_with(
    g: &mut Graph,
    t_logits: Var,
    s_logits: Var,
    extras: &[ExtraLoss],
    inputs: &ExtraInputs,
    kind: Divergence,
) -> Result<Var> {
    let t = g.softmax(t_logits, 1)?;
    let s = g.softmax(s_logits, 1)?;
    let div = divergence(g, t, s, kind)?;
    let mut loss = g.neg(div);
    let mut augmented = inputs.teacher_augmented.iter();
    for extra in extras {
        extra.validate()?;
        let base = match extra.kind {
            ExtraKind::TeacherEntropy => entropy(g, t)?,
            ExtraKind::StudentEntropy => entropy(g, s)?,
            ExtraKind::Consistency { .. } => {
                let aug = *augmented.next().ok_or_else(|| {
                    Error::InvalidConfig("consistency term needs augmented teacher logits".into())
                })?;
                let ta = g.softmax(aug, 1)?;
                kl_unchecked(g, t, ta)?
            }
            ExtraKind::Diversity => {
                let phi = inputs.teacher_features.ok_or_else(|| {
                    Error::InvalidConfig("diversity term needs teacher penultimate features".into())
                })?;
                let pt = g.transpose(phi)?;
                let gram = g.matmul(phi, pt)?;
                let m = g.mean(gram, None)?;
                g.neg(m)
            }
        };
        let term = g.scale(base, extra.sign * extra.gamma);
        loss = g.add(loss, term)?;
    }
    Ok(loss)
}

/// Whether any extra term needs teacher logits on augmented pseudo data.
pub fn needs_augmented(extras: &[ExtraLoss]) -> bool {
    extras.iter().any(ExtraLoss::needs_augmented)
}

/// Apply an augmentation to an image batch `N×C×H×W`. Noise is drawn from
/// `rng`; blur uses a fixed separable Gaussian window with
/// `σ = 0.3·((k−1)/2 − 1) + 0.8`.
pub fn augment<R: rand::Rng + ?Sized>(g: &mut Graph, x: Var, aug: Augmentation, rng: &mut R) -> Result<Var> {
    match aug {
        Augmentation::GaussianNoise { sigma } => {
            let mut noise = Tensor::randn(g.shape(x), rng);
            noise.data_mut().iter_mut().for_each(|v| *v *= sigma);
            let n = g.constant(noise);
            g.add(x, n)
        }
        Augmentation::GaussianBlur { kernel } => {
            let s = g.shape(x).to_vec();
            if s.len() != 4 {
                return Err(Error::shape("gaussian-blur", format!("rank {} input", s.len())));
            }
            let c = s[1];
            let sigma = 0.3 * ((kernel as f64 - 1.0) * 0.5 - 1.0) + 0.8;
            let half = (kernel / 2) as f64;
            let w1: Vec<f64> = (0..kernel)
                .map(|i| libm::exp(-((i as f64 - half) * (i as f64 - half)) / (2.0 * sigma * sigma)))
                .collect();
            let z: f64 = w1.iter().sum();
            let mut w = vec![0.0; c * c * kernel * kernel];
            for ch in 0..c {
                for i in 0..kernel {
                    for j in 0..kernel {
                        w[((ch * c + ch) * kernel + i) * kernel + j] = w1[i] * w1[j] / (z * z);
                    }
                }
            }
            let wv = g.constant(Tensor::new(&[c, c, kernel, kernel], w)?);
            g.conv2d(x, wv, 1, kernel / 2)
        }
    }
}

/// Batch-mean cross-entropy of logits against class indices.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let s = g.shape(logits).to_vec();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::shape(
            "cross-entropy",
            format!("logits {s:?} for {} labels", labels.len()),
        ));
    }
    let mut onehot = vec![0.0; s[0] * s[1]];
    for (i, &y) in labels.iter().enumerate() {
        if y >= s[1] {
            return Err(Error::InvalidConfig(format!("label {y} out of {} classes", s[1])));
        }
        onehot[i * s[1] + y] = 1.0;
    }
    let oh = g.constant(Tensor::new(&s, onehot)?);
    let ls = g.log_softmax(logits, 1)?;
    let picked = g.mul(ls, oh)?;
    let total = g.sum(picked, None)?;
    Ok(g.scale(total, -1.0 / s[0] as f64))
}

/// Knowledge distillation with attention transfer.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct KdAtConfig {
    /// Softening temperature τ.
    pub temperature: f64,
    /// Weight α of the softened KL term; `1 − α` weights cross-entropy.
    pub alpha: f64,
    /// Attention weight β.
    pub beta: f64,
}

impl Default for KdAtConfig {
    fn default() -> Self {
        Self {
            temperature: 4.0,
            alpha: 0.9,
            beta: 250.0,
        }
    }
}

impl KdAtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be ≥ 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// `α·τ²·KL(softmax(t/τ) ‖ softmax(s/τ)) + (1−α)·CE(s, y) + β·attention`.
pub fn kd_at_loss(
    g: &mut Graph,
    t_logits: Var,
    s_logits: Var,
    labels: &[usize],
    t_acts: &ActivationSet,
    s_acts: &ActivationSet,
    cfg: &KdAtConfig,
) -> Result<Var> {
    cfg.validate()?;
    let tau = cfg.temperature;
    let ts = g.scale(t_logits, 1.0 / tau);
    let ss = g.scale(s_logits, 1.0 / tau);
    let tp = g.softmax(ts, 1)?;
    let sp = g.softmax(ss, 1)?;
    let kl = forward_kl(g, tp, sp)?;
    let kl = g.scale(kl, cfg.alpha * tau * tau);
    let ce = cross_entropy(g, s_logits, labels)?;
    let ce = g.scale(ce, 1.0 - cfg.alpha);
    let mut loss = g.add(kl, ce)?;
    if cfg.beta > 0.0 {
        let at = attention_term(g, t_acts, s_acts)?;
        let at = g.scale(at, cfg.beta);
        loss = g.add(loss, at)?;
    } else if t_acts.len() != s_acts.len() {
        return Err(Error::TapMismatch {
            teacher: t_acts.len(),
            student: s_acts.len(),
        });
    }
    Ok(loss)
}
