//! Transition curves across a network's decision boundaries, the mean
//! transition error between two networks, and the uniform-noise
//! prediction audit.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::autodiff::{softmax, Graph};
use crate::data::{Dataset, NormStats};
use crate::error::{Error, Result};
use crate::losses;
use crate::nn::{Mode, Network};
use crate::tensor::Tensor;

/// Settings of the adversarial probe.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ProbeConfig {
    /// Adversarial steps `K`.
    pub steps: usize,
    /// Step size `ξ`.
    pub step_size: f64,
    /// Test images considered, `N_test`.
    pub max_images: usize,
    /// Rows per batched forward/backward pass.
    pub chunk: usize,
    /// Clamp `x_adv` to this range after every step.
    pub clamp: Option<(f64, f64)>,
    /// Selects which images are used when the test set is larger than
    /// `max_images`.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            step_size: 1.0,
            max_images: 1000,
            chunk: 128,
            clamp: None,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.step_size > 0.0 && self.step_size.is_finite()) || self.chunk == 0 {
            return Err(Error::InvalidConfig(format!(
                "probe needs K ≥ 1, ξ > 0 and chunk ≥ 1 (got {}, {}, {})",
                self.steps, self.step_size, self.chunk
            )));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo < hi) {
                return Err(Error::InvalidConfig(format!("clamp range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }
}

/// Both networks' predictions while stepping one image toward class `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionCurve {
    pub image_id: usize,
    /// Class both networks agree on for the clean image.
    pub source: usize,
    pub target: usize,
    /// `p_j` of network A and B on the clean image.
    pub initial: (f64, f64),
    /// `p_j^A` after each of the `K` steps.
    pub p_a: Vec<f64>,
    /// `p_j^B` after each of the `K` steps.
    pub p_b: Vec<f64>,
    /// Full softmax outputs of A after each step, `K × C` row-major.
    pub y_a: Vec<f64>,
    /// Full softmax outputs of B after each step, `K × C` row-major.
    pub y_b: Vec<f64>,
}

/// Curves plus bookkeeping about skipped images.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub curves: Vec<TransitionCurve>,
    pub images_considered: usize,
    pub agreeing: usize,
    /// Images where the networks disagree on the clean input.
    pub skipped: usize,
}

fn eval_clone(net: &Network) -> Network {
    let mut n = net.clone();
    n.set_mode(Mode::Eval);
    n
}

/// Transition curves of `a` and `b` while descending the cross-entropy of
/// `a` toward every other class, for test images on which both agree.
/// Rows are processed in batches; both networks run in eval mode so rows do
/// not interact.
pub fn transition_curves(a: &Network, b: &Network, data: &Dataset, cfg: &ProbeConfig) -> Result<ProbeResult> {
    cfg.validate()?;
    let classes = a
        .classes()
        .ok_or_else(|| Error::InvalidSpec("probe needs classifiers".into()))?;
    if b.classes() != Some(classes) {
        return Err(Error::ClassMismatch {
            expected: classes,
            found: b.classes().unwrap_or(0),
        });
    }
    let (a, b) = (eval_clone(a), eval_clone(b));
    let ids: Vec<usize> = if data.len() > cfg.max_images {
        let mut rng = crate::rng(cfg.seed);
        let mut v = sample(&mut rng, data.len(), cfg.max_images).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..data.len()).collect()
    };
    let images = data.inputs().select(&ids)?;
    let pa0 = softmax(&a.predict(&images, cfg.chunk)?);
    let pb0 = softmax(&b.predict(&images, cfg.chunk)?);
    let (ca, cb) = (pa0.argmax_rows(), pb0.argmax_rows());

    // one row per (agreeing image, target class)
    let mut rows: Vec<(usize, usize, usize, usize)> = Vec::new();
    for (k, &id) in ids.iter().enumerate() {
        if ca[k] != cb[k] {
            continue;
        }
        for j in (0..classes).filter(|&j| j != ca[k]) {
            rows.push((k, id, ca[k], j));
        }
    }
    let agreeing = ids.iter().enumerate().filter(|(k, _)| ca[*k] == cb[*k]).count();
    let sample_len = images.len() / ids.len().max(1);
    let mut curves = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(cfg.chunk) {
        let sel: Vec<usize> = chunk.iter().map(|r| r.0).collect();
        let mut x = images.select(&sel)?;
        let targets: Vec<usize> = chunk.iter().map(|r| r.3).collect();
        let mut out: Vec<TransitionCurve> = chunk
            .iter()
            .map(|&(k, id, i, j)| TransitionCurve {
                image_id: id,
                source: i,
                target: j,
                initial: (pa0.row(k)[j], pb0.row(k)[j]),
                p_a: Vec::with_capacity(cfg.steps),
                p_b: Vec::with_capacity(cfg.steps),
                y_a: Vec::with_capacity(cfg.steps * classes),
                y_b: Vec::with_capacity(cfg.steps * classes),
            })
            .collect();
        for _ in 0..cfg.steps {
            let grad = ce_input_gradient(&a, &x, &targets)?;
            for (v, gv) in x.data_mut().iter_mut().zip(grad.data()) {
                *v -= cfg.step_size * gv;
                if let Some((lo, hi)) = cfg.clamp {
                    *v = v.clamp(lo, hi);
                }
            }
            let ya = softmax(&a.predict(&x, cfg.chunk)?);
            let yb = softmax(&b.predict(&x, cfg.chunk)?);
            for (r, c) in out.iter_mut().enumerate() {
                c.p_a.push(ya.row(r)[c.target]);
                c.p_b.push(yb.row(r)[c.target]);
                c.y_a.extend_from_slice(ya.row(r));
                c.y_b.extend_from_slice(yb.row(r));
            }
        }
        debug_assert_eq!(x.len(), sample_len * chunk.len());
        curves.extend(out);
    }
    Ok(ProbeResult {
        curves,
        images_considered: ids.len(),
        agreeing,
        skipped: ids.len() - agreeing,
    })
}

/// Gradient of `Σ_r CE(net(x_r), target_r)` with respect to `x`; each row
/// receives the gradient of its own loss.
fn ce_input_gradient(net: &Network, x: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let mut g = Graph::new();
    let params = net.bind(&mut g, false);
    let xv = g.param(x.clone());
    let out = net.forward(&mut g, &params, xv)?;
    let mean = losses::cross_entropy(&mut g, out.output, targets)?;
    let total = g.scale(mean, targets.len() as f64);
    Ok(g.backward(total)?.get_or_zeros(&g, xv))
}

/// Mean transition error: the absolute difference `|p_j^A − p_j^B|`
/// averaged over steps, then over target classes, then over images.
pub fn mte(curves: &[TransitionCurve]) -> Result<f64> {
    if curves.is_empty() {
        return Err(Error::EmptyInput("mte"));
    }
    let mut per_image: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for c in curves {
        if c.p_a.is_empty() || c.p_a.len() != c.p_b.len() {
            return Err(Error::shape(
                "mte",
                format!("curve ({}, {}) has {} and {} steps", c.image_id, c.target, c.p_a.len(), c.p_b.len()),
            ));
        }
        let steps = c.p_a.iter().zip(&c.p_b).map(|(a, b)| (a - b).abs()).sum::<f64>() / c.p_a.len() as f64;
        let e = per_image.entry(c.image_id).or_insert((0.0, 0));
        e.0 += steps;
        e.1 += 1;
    }
    let n = per_image.len() as f64;
    Ok(per_image.values().map(|(s, k)| s / *k as f64).sum::<f64>() / n)
}

/// Per-step mean and standard error of `p_j` over curves, for plotting.
pub fn curve_summary(curves: &[TransitionCurve]) -> Result<Vec<[f64; 4]>> {
    let k = curves.first().ok_or(Error::EmptyInput("curve-summary"))?.p_a.len();
    let n = curves.len() as f64;
    let mut out = Vec::with_capacity(k);
    for s in 0..k {
        let mut stats = [0.0; 4];
        for (col, pick) in [(0usize, 0usize), (2, 1)] {
            let vals: Vec<f64> = curves
                .iter()
                .map(|c| if pick == 0 { c.p_a[s] } else { c.p_b[s] })
                .collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            stats[col] = mean;
            stats[col + 1] = libm::sqrt(var / n);
        }
        out.push(stats);
    }
    Ok(out)
}

/// Predicted-class distribution on uniform noise images.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseAudit {
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
    /// Entropy (nats) of the empirical class distribution.
    pub entropy: f64,
}

/// Classify `n_images` images whose pixels are drawn uniformly from the
/// integers in `pixel_range`, scaled by 1/255 and normalized with `norm`.
pub fn noise_audit(
    net: &Network,
    n_images: usize,
    pixel_range: (u8, u8),
    norm: &NormStats,
    seed: u64,
) -> Result<NoiseAudit> {
    let classes = net
        .classes()
        .ok_or_else(|| Error::InvalidSpec("noise audit needs a classifier".into()))?;
    let mut counts = vec![0; classes];
    if n_images > 0 {
        let (lo, hi) = pixel_range;
        if lo > hi {
            return Err(Error::InvalidConfig(format!("pixel range {lo}..={hi} is empty")));
        }
        let shape = net.spec().input_shape();
        if shape.len() != 3 || norm.mean.len() != shape[0] {
            return Err(Error::shape(
                "noise-audit",
                format!("input {shape:?} with {} channel stats", norm.mean.len()),
            ));
        }
        let per = shape[1] * shape[2];
        let mut rng = crate::rng(seed);
        let net = eval_clone(net);
        let chunk = 256;
        let mut done = 0;
        while done < n_images {
            let n = chunk.min(n_images - done);
            let mut full = vec![n];
            full.extend_from_slice(&shape);
            let mut x = Tensor::zeros(&full);
            for (k, v) in x.data_mut().iter_mut().enumerate() {
                let p = f64::from(rng.random_range(lo..=hi)) / 255.0;
                *v = norm.normalize((k / per) % shape[0], p);
            }
            for c in net.predict(&x, chunk)?.argmax_rows() {
                counts[c] += 1;
            }
            done += n;
        }
    }
    let total = n_images.max(1) as f64;
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let entropy = -fractions
        .iter()
        .filter(|&&f| f > 0.0)
        .map(|f| f * libm::log(*f))
        .sum::<f64>();
    Ok(NoiseAudit {
        counts,
        fractions,
        entropy,
    })
}
