//! Supervised reference trainers: cross-entropy from scratch, KD+AT
//! distillation on few images per class, and few-shot finetuning of a
//! zero-shot student.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore};

use crate::autodiff::{Graph, Var};
use crate::data::{few_shot_subset, Dataset};
use crate::error::{Error, Result};
use crate::losses::{self, KdAtConfig};
use crate::nn::{ActivationSet, Mode, NetOutput, NetSpec, Network};
use crate::optim::{Optimizer, Schedule};
use crate::tensor::Tensor;
use crate::Rng;

/// Optimizer, schedule and length of a supervised run.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    /// Optimizer steps.
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub schedule: Schedule,
    /// Random translations of up to two pixels for image inputs.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// SGD with momentum 0.9, weight decay 5e-4, `η₀ = 0.1` and the step
    /// schedule.
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch: 64,
            lr: 0.1,
            optimizer: Optimizer::sgd(),
            schedule: Schedule::Step,
            augment: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Adam with cosine annealing from `2e-3`.
    pub fn adam_cosine(iterations: usize) -> Self {
        Self {
            iterations,
            lr: 2e-3,
            optimizer: Optimizer::adam(),
            schedule: Schedule::Cosine,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "training needs batch ≥ 1 and finite lr ≥ 0 (got {}, {})",
                self.batch, self.lr
            )));
        }
        Ok(())
    }
}

/// Images per class for few-shot runs; `0` uses the whole dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct FewShotConfig {
    pub per_class: usize,
    pub seed: u64,
}

impl FewShotConfig {
    pub fn subset(&self, data: &Dataset) -> Result<Dataset> {
        if self.per_class == 0 {
            Ok(data.clone())
        } else {
            few_shot_subset(data, self.per_class, self.seed)
        }
    }
}

/// Summary of a supervised run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    /// Per-step training losses.
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    let pred = net.predict(data.inputs(), 256)?.argmax_rows();
    let hits = pred.iter().zip(data.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Fraction of inputs on which two classifiers predict the same class.
pub fn agreement(a: &Network, b: &Network, inputs: &Tensor) -> Result<f64> {
    let pa = a.predict(inputs, 256)?.argmax_rows();
    let pb = b.predict(inputs, 256)?.argmax_rows();
    Ok(pa.iter().zip(&pb).filter(|(x, y)| x == y).count() as f64 / pa.len().max(1) as f64)
}

/// Cell centers of a `side × side` grid over `bounds`, row-major in `y`.
pub fn grid_points(bounds: [(f64, f64); 2], side: usize) -> Result<Tensor> {
    if side < 2 || bounds.iter().any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidConfig(format!("grid needs side ≥ 2 and non-empty bounds, got {side}, {bounds:?}")));
    }
    let axis = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * (i as f64 + 0.5) / side as f64;
    let mut data = Vec::with_capacity(side * side * 2);
    for iy in 0..side {
        for ix in 0..side {
            data.push(axis(bounds[0], ix));
            data.push(axis(bounds[1], iy));
        }
    }
    Tensor::new(&[side * side, 2], data)
}

/// Argmax agreement of two planar classifiers on a dense grid.
pub fn grid_agreement(a: &Network, b: &Network, bounds: [(f64, f64); 2], side: usize) -> Result<f64> {
    agreement(a, b, &grid_points(bounds, side)?)
}

/// Shift each image by up to two pixels in each direction, filling with
/// the image's corner value.
fn translate(x: &Tensor, rng: &mut Rng) -> Tensor {
    let s = x.shape();
    if s.len() != 4 {
        return x.clone();
    }
    let (c, h, w) = (s[1], s[2], s[3]);
    let mut out = x.clone();
    let src = x.data();
    let dst = out.data_mut();
    for n in 0..s[0] {
        let dy = rng.random_range(-2i64..=2);
        let dx = rng.random_range(-2i64..=2);
        for ch in 0..c {
            let base = (n * c + ch) * h * w;
            let fill = src[base];
            for i in 0..h as i64 {
                for j in 0..w as i64 {
                    let (si, sj) = (i - dy, j - dx);
                    dst[base + (i * w as i64 + j) as usize] = if si >= 0 && sj >= 0 && si < h as i64 && sj < w as i64 {
                        src[base + (si * w as i64 + sj) as usize]
                    } else {
                        fill
                    };
                }
            }
        }
    }
    out
}

/// Batches cycling through shuffled epochs of `n` samples.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl EpochSampler {
    fn new(n: usize, batch: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            batch: batch.min(n),
        }
    }

    fn next(&mut self, rng: &mut Rng) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

/// Supervised loop running exactly `cfg.iterations` optimizer steps.
/// `loss` builds the objective from the student's output, the batch inputs
/// and labels.
fn train_loop<F>(net: &mut Network, data: &Dataset, cfg: &TrainConfig, rng: &mut Rng, mut loss: F) -> Result<Vec<f64>>
where
    F: FnMut(&mut Graph, &NetOutput, &Tensor, &[usize]) -> Result<Var>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    net.set_mode(Mode::Train);
    let mut opt = net.optimizer(cfg.optimizer);
    let mut sampler = EpochSampler::new(data.len(), cfg.batch);
    let mut out = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        let idx = sampler.next(rng);
        let (mut x, y) = data.batch(&idx)?;
        if cfg.augment {
            x = translate(&x, rng);
        }
        let mut g = Graph::new();
        let params = net.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let fwd = net.forward(&mut g, &params, xv)?;
        let l = loss(&mut g, &fwd, &x, &y)?;
        let value = g.value(l).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(step));
        }
        let grads = g.backward(l)?;
        let grads = net.gradients(&g, &grads, &params);
        net.commit_stats(&fwd.stats);
        let lr = cfg.schedule.lr(step as f64, cfg.iterations.max(1) as f64, cfg.lr)?;
        net.update(&mut opt, &grads, lr)?;
        out.push(value);
    }
    net.set_mode(Mode::Eval);
    Ok(out)
}

/// Cross-entropy training of a fresh network.
pub fn train_scratch(
    spec: &NetSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    let mut rng = crate::rng(cfg.seed);
    let mut net = Network::classifier(spec, rng.next_u64())?;
    if net.classes() != Some(train.classes()) {
        return Err(Error::ClassMismatch {
            expected: train.classes(),
            found: net.classes().unwrap_or(0),
        });
    }
    let losses = train_loop(&mut net, train, cfg, &mut rng, |g, out, _, y| losses::cross_entropy(g, out.output, y))?;
    net.set_mode(Mode::Eval);
    let report = TrainReport {
        steps: losses.len(),
        losses,
        train_accuracy: accuracy(&net, train)?,
        test_accuracy: test.map(|t| accuracy(&net, t)).transpose()?,
    };
    Ok((net, report))
}

fn kd_at_objective<'a>(
    teacher: &'a Network,
    kd: &'a KdAtConfig,
) -> impl FnMut(&mut Graph, &NetOutput, &Tensor, &[usize]) -> Result<Var> + 'a {
    move |g, out, x, y| {
        let (tl, tb, _) = teacher.forward_with_activations(x)?;
        let t = g.constant(tl);
        let (ta, sa) = if kd.beta == 0.0 {
            (ActivationSet::default(), ActivationSet::default())
        } else {
            let ta = ActivationSet {
                blocks: tb.into_iter().map(|(n, v)| (n, g.constant(v))).collect(),
                penultimate: None,
            };
            (ta, out.acts.clone())
        };
        losses::kd_at_loss(g, t, out.output, y, &ta, &sa, kd)
    }
}

fn check_teacher(teacher: &Network, classes: Option<usize>) -> Result<Network> {
    if teacher.classes() != classes {
        return Err(Error::ClassMismatch {
            expected: teacher.classes().unwrap_or(0),
            found: classes.unwrap_or(0),
        });
    }
    let mut t = teacher.clone();
    t.set_mode(Mode::Eval);
    Ok(t)
}

/// KD+AT student trained on the few-shot subset for the same number of
/// steps as a full-data run.
pub fn distill_kd_at(
    teacher: &Network,
    student_spec: &NetSpec,
    data: &Dataset,
    few: &FewShotConfig,
    kd: &KdAtConfig,
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    kd.validate()?;
    let subset = few.subset(data)?;
    let mut rng = crate::rng(cfg.seed);
    let mut student = Network::classifier(student_spec, rng.next_u64())?;
    let teacher = check_teacher(teacher, student.classes())?;
    let losses = train_loop(&mut student, &subset, cfg, &mut rng, kd_at_objective(&teacher, kd))?;
    let report = TrainReport {
        steps: losses.len(),
        losses,
        train_accuracy: accuracy(&student, &subset)?,
        test_accuracy: None,
    };
    Ok((student, report))
}

/// Outcome of [`finetune_few_shot`].
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneReport {
    pub train: TrainReport,
    /// Teacher agreement on the subset before and after finetuning.
    pub agreement_before: f64,
    pub agreement_after: f64,
}

/// Continue training a zero-shot student with KD+AT on the few-shot
/// subset.
pub fn finetune_few_shot(
    student: Network,
    teacher: &Network,
    data: &Dataset,
    few: &FewShotConfig,
    kd: &KdAtConfig,
    cfg: &TrainConfig,
) -> Result<(Network, FinetuneReport)> {
    kd.validate()?;
    let subset = few.subset(data)?;
    let teacher = check_teacher(teacher, student.classes())?;
    let mut student = student;
    student.set_mode(Mode::Eval);
    let before = agreement(&teacher, &student, subset.inputs())?;
    let mut rng = crate::rng(cfg.seed);
    let losses = if cfg.iterations == 0 {
        Vec::new()
    } else {
        train_loop(&mut student, &subset, cfg, &mut rng, kd_at_objective(&teacher, kd))?
    };
    let after = agreement(&teacher, &student, subset.inputs())?;
    let report = FinetuneReport {
        train: TrainReport {
            steps: losses.len(),
            losses,
            train_accuracy: accuracy(&student, &subset)?,
            test_accuracy: None,
        },
        agreement_before: before,
        agreement_after: after,
    };
    Ok((student, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_toy_blobs;
    use alloc::vec;

    fn blobs() -> (Dataset, Dataset) {
        make_toy_blobs(3, 100, 0.25, 1).unwrap()
    }

    fn toy_cfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            batch: 32,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn scratch_on_blobs() {
        let (tr, te) = blobs();
        let (net, rep) = train_scratch(&NetSpec::mlp(2, &[32, 32], 3), &tr, Some(&te), &toy_cfg(300)).unwrap();
        assert!(rep.test_accuracy.unwrap() >= 0.98, "{rep:?}");
        assert_eq!(rep.steps, 300);
        assert_eq!(net.mode(), Mode::Eval);
    }

    #[test]
    fn zero_iterations_and_zero_lr() {
        let (tr, te) = blobs();
        let spec = NetSpec::mlp(2, &[8], 3);
        let (net, rep) = train_scratch(&spec, &tr, Some(&te), &toy_cfg(0)).unwrap();
        let init = Network::classifier(&spec, crate::rng(0).next_u64()).unwrap();
        assert_eq!(rep.test_accuracy.unwrap(), accuracy(&init, &te).unwrap());
        let cfg = TrainConfig {
            lr: 0.0,
            ..toy_cfg(5)
        };
        let (net0, _) = train_scratch(&spec, &tr, None, &cfg).unwrap();
        assert_eq!(net0.params(), net.params());
    }

    #[test]
    fn distillation_matches_iterations_and_teacher() {
        let (tr, te) = blobs();
        let (teacher, _) = train_scratch(&NetSpec::mlp(2, &[32, 32], 3), &tr, None, &toy_cfg(300)).unwrap();
        let kd = KdAtConfig::default();
        let (student, rep) = distill_kd_at(&teacher, &NetSpec::mlp(2, &[16, 16], 3), &tr, &FewShotConfig::default(), &kd, &toy_cfg(300))
            .unwrap();
        assert_eq!(rep.steps, 300);
        assert!(agreement(&teacher, &student, te.inputs()).unwrap() >= 0.98);

        let few = FewShotConfig { per_class: 1, seed: 4 };
        assert_eq!(few.subset(&tr).unwrap().len(), 3);
        let (_, rep) = distill_kd_at(&teacher, &NetSpec::mlp(2, &[16, 16], 3), &tr, &few, &kd, &toy_cfg(50)).unwrap();
        assert_eq!(rep.steps, 50);
        assert!(matches!(
            distill_kd_at(
                &teacher,
                &NetSpec::mlp(2, &[16, 16], 3),
                &tr,
                &FewShotConfig { per_class: 500, seed: 0 },
                &kd,
                &toy_cfg(1)
            ),
            Err(Error::SubsetTooLarge { .. })
        ));
    }

    #[test]
    fn finetune_zero_iterations_is_identity() {
        let (tr, _) = blobs();
        let teacher = Network::classifier(&NetSpec::mlp(2, &[8], 3), 0).unwrap();
        let student = Network::classifier(&NetSpec::mlp(2, &[8], 3), 1).unwrap();
        let (out, rep) = finetune_few_shot(
            student.clone(),
            &teacher,
            &tr,
            &FewShotConfig { per_class: 5, seed: 0 },
            &KdAtConfig::default(),
            &TrainConfig::adam_cosine(0),
        )
        .unwrap();
        assert_eq!(out.params(), student.params());
        assert_eq!(rep.agreement_before, rep.agreement_after);
    }

    #[test]
    fn translation_keeps_shape_and_content_for_zero_shift() {
        let x = Tensor::new(&[1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let mut rng = crate::rng(0);
        let y = translate(&x, &mut rng);
        assert_eq!(y.shape(), x.shape());
        let mut sorted: Vec<f64> = y.data().to_vec();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted.iter().all(|v| (0.0..9.0).contains(v)));
        let flat = Tensor::new(&[2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(translate(&flat, &mut rng), flat);
    }

    #[test]
    fn sampler_covers_epochs() {
        let mut s = EpochSampler::new(5, 2);
        let mut rng = crate::rng(0);
        let mut seen = [0; 5];
        for _ in 0..2 {
            for i in s.next(&mut rng) {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c <= 1));
        assert_eq!(EpochSampler::new(3, 10).batch, 3);
    }

    #[test]
    fn grid_covers_bounds_and_self_agrees() {
        let g = grid_points([(0.0, 2.0), (-1.0, 1.0)], 4).unwrap();
        assert_eq!(g.shape(), &[16, 2]);
        assert_eq!(g.row(0), &[0.25, -0.75]);
        assert_eq!(g.row(15), &[1.75, 0.75]);
        assert!(grid_points([(0.0, 0.0), (0.0, 1.0)], 4).is_err());
        let net = Network::classifier(&NetSpec::mlp(2, &[4], 3), 1).unwrap();
        assert_eq!(grid_agreement(&net, &net, [(0.0, 1.0), (0.0, 1.0)], 10).unwrap(), 1.0);
    }
}
