//! Adam and SGD-with-momentum updates plus learning-rate schedules.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Update rule and its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields))]
pub enum Optimizer {
    Adam {
        #[cfg_attr(feature = "serde", serde(default = "defaults::beta1"))]
        beta1: f64,
        #[cfg_attr(feature = "serde", serde(default = "defaults::beta2"))]
        beta2: f64,
        #[cfg_attr(feature = "serde", serde(default = "defaults::eps"))]
        eps: f64,
        #[cfg_attr(feature = "serde", serde(default))]
        weight_decay: f64,
    },
    Sgd {
        #[cfg_attr(feature = "serde", serde(default = "defaults::momentum"))]
        momentum: f64,
        #[cfg_attr(feature = "serde", serde(default = "defaults::sgd_decay"))]
        weight_decay: f64,
    },
}

#[cfg(feature = "serde")]
mod defaults {
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn sgd_decay() -> f64 {
        5e-4
    }
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    /// Momentum 0.9 and weight decay 5e-4.
    pub const fn sgd() -> Self {
        Optimizer::Sgd {
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// Optimizer state for one parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub rule: Optimizer,
    /// First moments (Adam) or velocities (SGD).
    first: Vec<Tensor>,
    /// Second moments; empty for SGD.
    second: Vec<Tensor>,
    step: u64,
}

impl OptState {
    /// Fresh state with zero buffers matching `shapes`.
    pub fn new<'a>(rule: Optimizer, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let first: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        let second = match rule {
            Optimizer::Adam { .. } => first.clone(),
            Optimizer::Sgd { .. } => Vec::new(),
        };
        Self {
            rule,
            first,
            second,
            step: 0,
        }
    }

    /// Completed update count.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn buffers(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    fn check(&self, params: &[&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::shape(
                "optimizer",
                format!(
                    "{} params, {} grads, {} state buffers",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, ((p, g), b)) in params.iter().zip(grads).zip(&self.first).enumerate() {
            if p.shape() != g.shape() || p.shape() != b.shape() {
                return Err(Error::shape(
                    "optimizer",
                    format!("param {i}: {:?} vs grad {:?} vs state {:?}", p.shape(), g.shape(), b.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(i));
            }
        }
        Ok(())
    }

    /// Apply one update at learning rate `lr`. Nothing is modified when an
    /// error is returned.
    pub fn update<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
        let mut params: Vec<&mut Tensor> = params.into_iter().collect();
        self.check(&params, grads)?;
        self.step += 1;
        match self.rule {
            Optimizer::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let t = self.step as i32;
                let c1 = 1.0 - libm::pow(beta1, t as f64);
                let c2 = 1.0 - libm::pow(beta2, t as f64);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
                    for i in 0..p.len() {
                        let gi = g.data()[i] + weight_decay * p[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p[i] -= lr * mh / (libm::sqrt(vh) + eps);
                    }
                }
            }
            Optimizer::Sgd { momentum, weight_decay } => {
                for ((p, g), vel) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    let (p, vel) = (p.data_mut(), vel.data_mut());
                    for i in 0..p.len() {
                        vel[i] = momentum * vel[i] + g.data()[i] + weight_decay * p[i];
                        p[i] -= lr * vel[i];
                    }
                }
            }
        }
        Ok(())
    }
}

/// One Adam step; `state.rule` must be [`Optimizer::Adam`].
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    grads: &[Tensor],
    state: &mut OptState,
    lr: f64,
) -> Result<()> {
    if !matches!(state.rule, Optimizer::Adam { .. }) {
        return Err(Error::InvalidConfig("adam_step on non-Adam state".into()));
    }
    state.update(params, grads, lr)
}

/// One SGD step with momentum and weight decay; `state.rule` must be
/// [`Optimizer::Sgd`].
pub fn sgd_momentum_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    grads: &[Tensor],
    state: &mut OptState,
    lr: f64,
) -> Result<()> {
    if !matches!(state.rule, Optimizer::Sgd { .. }) {
        return Err(Error::InvalidConfig("sgd_momentum_step on non-SGD state".into()));
    }
    state.update(params, grads, lr)
}

fn check_progress(t: f64, n: f64) -> Result<()> {
    if !(n > 0.0) || !(0.0..=n).contains(&t) {
        return Err(Error::InvalidConfig(format!("schedule position {t} outside [0, {n}]")));
    }
    Ok(())
}

/// Cosine annealing `η₀·½(1 + cos(π t / N))` from `η₀` down to 0.
pub fn cosine_lr(t: f64, n: f64, lr0: f64) -> Result<f64> {
    check_progress(t, n)?;
    Ok(lr0 * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * t / n)))
}

/// `η₀` divided by 5 at 30%, 60% and 80% of the run.
pub fn step_lr(t: f64, n: f64, lr0: f64) -> Result<f64> {
    check_progress(t, n)?;
    let drops = [0.3, 0.6, 0.8].iter().filter(|&&f| t >= f * n).count();
    Ok(lr0 / libm::pow(5.0, drops as f64))
}

/// Learning-rate schedule selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Schedule {
    Cosine,
    Step,
    Constant,
}

impl Schedule {
    pub fn lr(self, t: f64, n: f64, lr0: f64) -> Result<f64> {
        match self {
            Schedule::Cosine => cosine_lr(t, n, lr0),
            Schedule::Step => step_lr(t, n, lr0),
            Schedule::Constant => check_progress(t, n).map(|_| lr0),
        }
    }
}
