//! The adversarial zero-shot loop: a generator searches for inputs where
//! student and teacher disagree, and the student learns to match the teacher
//! on them. Also the toy variant that moves pseudo points directly and the
//! noise-matching experiment.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::autodiff::{softmax, Graph, Var};
use crate::error::{Error, Result};
use crate::losses::{self, Divergence, ExtraInputs, ExtraKind, ExtraLoss};
use crate::nn::{ActivationSet, GeneratorSpec, Mode, NetSpec, Network};
use crate::optim::{cosine_lr, OptState, Optimizer};
use crate::tensor::Tensor;
use crate::{Clock, Rng};

/// How often the cosine schedule advances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum LrStepping {
    /// Once per outer iteration, shared by generator and student.
    #[default]
    OuterIteration,
    /// Once per gradient step of each network.
    GradientStep,
}

/// Hyperparameters of the adversarial loop.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ZeroShotConfig {
    /// Outer iterations `N`.
    pub iterations: usize,
    /// Generator steps `n_G` per outer iteration.
    pub generator_steps: usize,
    /// Student steps `n_S` per outer iteration.
    pub student_steps: usize,
    /// Initial learning rate `η₀` of both Adam optimizers.
    pub lr: f64,
    /// Attention weight `β`.
    pub beta: f64,
    pub z_dim: usize,
    /// Pseudo batch size.
    pub batch: usize,
    pub extras: Vec<ExtraLoss>,
    pub seed: u64,
    /// Draw a fresh `z` before every generator step instead of once per
    /// outer iteration.
    pub resample_z: bool,
    pub lr_stepping: LrStepping,
    pub divergence: Divergence,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            generator_steps: 1,
            student_steps: 10,
            lr: 2e-3,
            beta: 250.0,
            z_dim: 100,
            batch: 128,
            extras: Vec::new(),
            seed: 0,
            resample_z: false,
            lr_stepping: LrStepping::OuterIteration,
            divergence: Divergence::ForwardKl,
        }
    }
}

impl ZeroShotConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("iterations", self.iterations),
            ("generator_steps", self.generator_steps),
            ("student_steps", self.student_steps),
            ("z_dim", self.z_dim),
            ("batch", self.batch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be ≥ 1")));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be ≥ 0, got {}", self.beta)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        self.extras.iter().try_for_each(ExtraLoss::validate)
    }

    fn lr_at(&self, outer: usize, inner: usize, per_outer: usize) -> Result<f64> {
        match self.lr_stepping {
            LrStepping::OuterIteration => cosine_lr(outer as f64, self.iterations as f64, self.lr),
            LrStepping::GradientStep => cosine_lr(
                (outer * per_outer + inner) as f64,
                (self.iterations * per_outer) as f64,
                self.lr,
            ),
        }
    }
}

/// Generator output together with the noise that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoBatch {
    pub x: Tensor,
    pub z: Tensor,
}

/// Diagnostics of one outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub iter: usize,
    /// Generator loss of the final generator step.
    pub loss_g: f64,
    /// Student loss of the final student step.
    pub loss_s: f64,
    /// Divergence part of the first student step, evaluated on the same
    /// pseudo batch and student weights as the final generator step.
    pub switch_kl: f64,
    /// Mean teacher max-probability on the pseudo batch.
    pub teacher_maxprob: f64,
    /// Mean student max-probability on the pseudo batch before its updates.
    pub student_maxprob: f64,
    pub lr: f64,
    /// Teacher argmax class counts on the pseudo batch.
    pub histogram: Vec<usize>,
    /// Seconds since the run started, per the supplied clock.
    pub wall_time: f64,
}

/// Per-iteration records of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Telemetry {
    pub records: Vec<Record>,
}

/// Everything a zero-shot run produces.
#[derive(Clone, Debug)]
pub struct ZeroShotRun {
    pub student: Network,
    pub generator: Network,
    pub telemetry: Telemetry,
    /// Pseudo batch of the final outer iteration.
    pub last_batch: PseudoBatch,
    pub generator_updates: usize,
    pub student_updates: usize,
}

fn mean_maxprob(probs: &Tensor) -> f64 {
    let n = probs.batch();
    (0..n)
        .map(|i| probs.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / n as f64
}

fn histogram(probs: &Tensor, classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    for c in probs.argmax_rows() {
        h[c] += 1;
    }
    h
}

fn eval_clone(teacher: &Network) -> Network {
    let mut t = teacher.clone();
    t.set_mode(Mode::Eval);
    t
}

fn check_classes(teacher: &Network, student: &Network) -> Result<usize> {
    let t = teacher
        .classes()
        .ok_or_else(|| Error::InvalidSpec("teacher must be a classifier".into()))?;
    let s = student
        .classes()
        .ok_or_else(|| Error::InvalidSpec("student must be a classifier".into()))?;
    if t != s {
        return Err(Error::ClassMismatch { expected: t, found: s });
    }
    Ok(t)
}

fn constant_acts(g: &mut Graph, blocks: &[(alloc::string::String, Tensor)], pen: Option<&Tensor>) -> ActivationSet {
    ActivationSet {
        blocks: blocks.iter().map(|(n, t)| (n.clone(), g.constant(t.clone()))).collect(),
        penultimate: pen.map(|p| g.constant(p.clone())),
    }
}

/// Result of one student update.
struct StudentStep {
    total: f64,
    divergence: f64,
    maxprob: f64,
}

/// One student update on a fixed batch against precomputed teacher outputs.
#[allow(clippy::too_many_arguments)]
fn student_step(
    student: &mut Network,
    opt: &mut OptState,
    x: &Tensor,
    teacher: &(Tensor, Vec<(alloc::string::String, Tensor)>),
    beta: f64,
    kind: Divergence,
    lr: f64,
    iter: usize,
) -> Result<StudentStep> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let params = student.bind(&mut g, true);
    let out = student.forward(&mut g, &params, xv)?;
    let tl = g.constant(teacher.0.clone());
    let (ta, sa) = if beta == 0.0 {
        (ActivationSet::default(), ActivationSet::default())
    } else {
        (constant_acts(&mut g, &teacher.1, None), out.acts.clone())
    };
    let loss = losses::student_loss_with(&mut g, tl, out.output, &ta, &sa, beta, kind)?;
    let total = g.value(loss.total).item();
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(iter));
    }
    let grads = g.backward(loss.total)?;
    let grads = student.gradients(&g, &grads, &params);
    let probs = softmax(g.value(out.output));
    let step = StudentStep {
        total,
        divergence: g.value(loss.divergence).item(),
        maxprob: mean_maxprob(&probs),
    };
    student.commit_stats(&out.stats);
    student.update(opt, &grads, lr)?;
    Ok(step)
}

/// Extra-term inputs computed from the teacher on the current pseudo batch.
fn extra_inputs(
    g: &mut Graph,
    teacher: &Network,
    tparams: &[Var],
    x: Var,
    pen: Option<Var>,
    extras: &[ExtraLoss],
    rng: &mut Rng,
) -> Result<ExtraInputs> {
    let mut inputs = ExtraInputs {
        teacher_features: pen,
        ..ExtraInputs::default()
    };
    for e in extras {
        if let ExtraKind::Consistency { augmentation } = e.kind {
            let xa = losses::augment(g, x, augmentation, rng)?;
            let out = teacher.forward(g, tparams, xa)?;
            inputs.teacher_augmented.push(out.output);
        }
    }
    Ok(inputs)
}

/// Outcome of one generator-side step.
struct AdversaryStep {
    x: Tensor,
    loss: f64,
}

/// Run the adversarial loop with a generator built from `gen_spec` and a
/// student built from `student_spec`.
pub fn run_zero_shot(
    teacher: &Network,
    student_spec: &NetSpec,
    gen_spec: &GeneratorSpec,
    cfg: &ZeroShotConfig,
    clock: &dyn Clock,
    on_record: &mut dyn FnMut(&Record),
) -> Result<ZeroShotRun> {
    cfg.validate()?;
    let mut rng = crate::rng(cfg.seed);
    let student = Network::classifier(student_spec, rng.next_u64())?;
    let generator = Network::generator(gen_spec, rng.next_u64())?;
    run_zero_shot_from(teacher, student, generator, cfg, &mut rng, clock, on_record)
}

/// [`run_zero_shot`] starting from given student and generator networks.
pub fn run_zero_shot_from(
    teacher: &Network,
    mut student: Network,
    mut generator: Network,
    cfg: &ZeroShotConfig,
    rng: &mut Rng,
    clock: &dyn Clock,
    on_record: &mut dyn FnMut(&Record),
) -> Result<ZeroShotRun> {
    cfg.validate()?;
    let classes = check_classes(teacher, &student)?;
    let teacher = eval_clone(teacher);
    let z_dim = generator.spec().input_shape()[0];
    if z_dim != cfg.z_dim {
        return Err(Error::InvalidConfig(format!(
            "generator takes z of size {z_dim}, config says {}",
            cfg.z_dim
        )));
    }
    if generator.spec().output_shape() != teacher.spec().input_shape() {
        return Err(Error::shape(
            "zero-shot",
            format!(
                "generator emits {:?}, teacher expects {:?}",
                generator.spec().output_shape(),
                teacher.spec().input_shape()
            ),
        ));
    }
    student.set_mode(Mode::Train);
    generator.set_mode(Mode::Train);
    let mut gen_opt = generator.optimizer(Optimizer::adam());
    let mut stu_opt = student.optimizer(Optimizer::adam());
    let start = clock.seconds();
    let mut telemetry = Telemetry::default();
    let mut last = None;
    let (mut g_updates, mut s_updates) = (0, 0);

    for it in 0..cfg.iterations {
        let mut z = Tensor::randn(&[cfg.batch, cfg.z_dim], rng);
        let mut adv = None;
        for k in 0..cfg.generator_steps {
            if k > 0 && cfg.resample_z {
                z = Tensor::randn(&[cfg.batch, cfg.z_dim], rng);
            }
            let lr = cfg.lr_at(it, k, cfg.generator_steps)?;
            adv = Some(generator_step(&teacher, &student, &mut generator, &mut gen_opt, &z, cfg, lr, it, rng)?);
            g_updates += 1;
        }
        let adv = adv.expect("at least one generator step");

        let (t_logits, t_blocks, _) = teacher.forward_with_activations(&adv.x)?;
        let t_probs = softmax(&t_logits);
        let teacher_out = (t_logits, t_blocks);
        let mut first = None;
        let mut last_loss = 0.0;
        for k in 0..cfg.student_steps {
            let lr = cfg.lr_at(it, k, cfg.student_steps)?;
            let step = student_step(&mut student, &mut stu_opt, &adv.x, &teacher_out, cfg.beta, cfg.divergence, lr, it)?;
            s_updates += 1;
            last_loss = step.total;
            if first.is_none() {
                first = Some(step);
            }
        }
        let first = first.expect("at least one student step");
        let record = Record {
            iter: it,
            loss_g: adv.loss,
            loss_s: last_loss,
            switch_kl: first.divergence,
            teacher_maxprob: mean_maxprob(&t_probs),
            student_maxprob: first.maxprob,
            lr: cfg.lr_at(it, 0, 1)?,
            histogram: histogram(&t_probs, classes),
            wall_time: clock.seconds() - start,
        };
        on_record(&record);
        telemetry.records.push(record);
        last = Some(PseudoBatch { x: adv.x, z });
    }
    student.set_mode(Mode::Eval);
    Ok(ZeroShotRun {
        student,
        generator,
        telemetry,
        last_batch: last.expect("at least one iteration"),
        generator_updates: g_updates,
        student_updates: s_updates,
    })
}

/// One generator update minimizing `−KL + extras`. Returns the pseudo batch
/// produced before the update. Student batch statistics are used but not
/// folded into its running averages.
#[allow(clippy::too_many_arguments)]
fn generator_step(
    teacher: &Network,
    student: &Network,
    generator: &mut Network,
    opt: &mut OptState,
    z: &Tensor,
    cfg: &ZeroShotConfig,
    lr: f64,
    iter: usize,
    rng: &mut Rng,
) -> Result<AdversaryStep> {
    let mut g = Graph::new();
    let gparams = generator.bind(&mut g, true);
    let zv = g.constant(z.clone());
    let gout = generator.forward(&mut g, &gparams, zv)?;
    let x = gout.output;
    let tparams = teacher.bind(&mut g, false);
    let tout = teacher.forward(&mut g, &tparams, x)?;
    let sparams = student.bind(&mut g, false);
    let sout = student.forward(&mut g, &sparams, x)?;
    let inputs = extra_inputs(&mut g, teacher, &tparams, x, tout.acts.penultimate, &cfg.extras, rng)?;
    let loss = losses::generator_loss_with(&mut g, tout.output, sout.output, &cfg.extras, &inputs, cfg.divergence)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(iter));
    }
    let grads = g.backward(loss)?;
    let grads = generator.gradients(&g, &grads, &gparams);
    let xp = g.value(x).clone();
    generator.commit_stats(&gout.stats);
    generator.update(opt, &grads, lr)?;
    Ok(AdversaryStep { x: xp, loss: value })
}

/// Annulus the toy pseudo points start in.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Ring {
    pub center: [f64; 2],
    pub inner: f64,
    pub outer: f64,
}

impl Ring {
    /// Ring around a bounding box: from its half-diagonal out to `scale`
    /// times that.
    pub fn around(bounds: [(f64, f64); 2], scale: f64) -> Self {
        let center = [(bounds[0].0 + bounds[0].1) * 0.5, (bounds[1].0 + bounds[1].1) * 0.5];
        let (hx, hy) = ((bounds[0].1 - bounds[0].0) * 0.5, (bounds[1].1 - bounds[1].0) * 0.5);
        let inner = libm::sqrt(hx * hx + hy * hy);
        Self {
            center,
            inner,
            outer: inner * scale,
        }
    }

    /// `n` points uniform in area over the annulus.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        if !(self.inner >= 0.0 && self.outer > self.inner) {
            return Err(Error::InvalidConfig(format!(
                "ring needs 0 ≤ inner < outer, got {} and {}",
                self.inner, self.outer
            )));
        }
        let angle = Uniform::new(0.0, 2.0 * core::f64::consts::PI).map_err(|e| Error::InvalidConfig(format!("{e}")))?;
        let area = Uniform::new(self.inner * self.inner, self.outer * self.outer)
            .map_err(|e| Error::InvalidConfig(format!("{e}")))?;
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let a: f64 = angle.sample(rng);
            let r = libm::sqrt(area.sample(rng));
            data.push(self.center[0] + r * libm::cos(a));
            data.push(self.center[1] + r * libm::sin(a));
        }
        Tensor::new(&[n, 2], data)
    }
}

/// Settings of the toy run with directly optimized pseudo points.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ToyConfig {
    pub iterations: usize,
    pub generator_steps: usize,
    pub student_steps: usize,
    /// Initial learning rate of the student.
    pub lr: f64,
    /// Initial learning rate of the points.
    pub point_lr: f64,
    pub beta: f64,
    /// Pseudo point count `P`.
    pub points: usize,
    /// Snapshot every this many outer iterations (plus the initial and final
    /// positions).
    pub snapshot_every: usize,
    /// Ring radii as multiples of the data half-diagonal.
    pub ring_scale: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            iterations: 400,
            generator_steps: 1,
            student_steps: 10,
            lr: 2e-3,
            point_lr: 5e-2,
            beta: 0.0,
            points: 128,
            snapshot_every: 50,
            ring_scale: 1.5,
            seed: 0,
        }
    }
}

/// Pseudo points and their trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoPointSet {
    pub points: Tensor,
    /// `(outer iteration, positions)` pairs; iteration 0 is the start.
    pub snapshots: Vec<(usize, Tensor)>,
}

/// Everything a toy run produces.
#[derive(Clone, Debug)]
pub struct ToyRun {
    pub student: Network,
    pub points: PseudoPointSet,
    pub telemetry: Telemetry,
}

/// Toy variant of the loop where the pseudo points themselves are the
/// adversary. Points start in `ring`.
pub fn run_toy_direct(
    teacher: &Network,
    student_spec: &NetSpec,
    ring: &Ring,
    cfg: &ToyConfig,
    clock: &dyn Clock,
) -> Result<ToyRun> {
    let mut rng = crate::rng(cfg.seed);
    let student = Network::classifier(student_spec, rng.next_u64())?;
    let points = ring.sample(cfg.points, &mut rng)?;
    run_toy_direct_from(teacher, student, points, cfg, clock)
}

/// [`run_toy_direct`] from a given student and initial points.
pub fn run_toy_direct_from(
    teacher: &Network,
    mut student: Network,
    mut points: Tensor,
    cfg: &ToyConfig,
    clock: &dyn Clock,
) -> Result<ToyRun> {
    if teacher.spec().input_shape() != [2] {
        return Err(Error::shape("toy", format!("teacher input {:?} is not 2-D", teacher.spec().input_shape())));
    }
    if points.rank() != 2 || points.shape()[1] != 2 || points.batch() == 0 {
        return Err(Error::shape("toy", format!("points {:?} must be P × 2 with P ≥ 1", points.shape())));
    }
    if cfg.iterations == 0 || cfg.generator_steps == 0 || cfg.student_steps == 0 || cfg.snapshot_every == 0 {
        return Err(Error::InvalidConfig("toy iteration and step counts must be ≥ 1".into()));
    }
    if !(cfg.beta >= 0.0) || !(cfg.lr > 0.0) || !(cfg.point_lr > 0.0) {
        return Err(Error::InvalidConfig("toy rates must be > 0 and beta ≥ 0".into()));
    }
    let classes = check_classes(teacher, &student)?;
    let teacher = eval_clone(teacher);
    student.set_mode(Mode::Train);
    let mut point_opt = OptState::new(Optimizer::adam(), [points.shape()]);
    let mut stu_opt = student.optimizer(Optimizer::adam());
    let start = clock.seconds();
    let mut snapshots = vec![(0, points.clone())];
    let mut telemetry = Telemetry::default();
    let n = cfg.iterations as f64;

    for it in 0..cfg.iterations {
        let lr = cosine_lr(it as f64, n, cfg.lr)?;
        let plr = cosine_lr(it as f64, n, cfg.point_lr)?;
        let mut loss_g = 0.0;
        for _ in 0..cfg.generator_steps {
            let mut g = Graph::new();
            let x = g.param(points.clone());
            let tp = teacher.bind(&mut g, false);
            let tout = teacher.forward(&mut g, &tp, x)?;
            let sp = student.bind(&mut g, false);
            let sout = student.forward(&mut g, &sp, x)?;
            let loss = losses::generator_loss(&mut g, tout.output, sout.output, &[], &ExtraInputs::default())?;
            loss_g = g.value(loss).item();
            if !loss_g.is_finite() {
                return Err(Error::NonFiniteLoss(it));
            }
            let grad = g.backward(loss)?.get_or_zeros(&g, x);
            point_opt.update(core::iter::once(&mut points), &[grad], plr)?;
        }
        if !points.is_finite() {
            return Err(Error::NonFiniteLoss(it));
        }

        let (t_logits, t_blocks, _) = teacher.forward_with_activations(&points)?;
        let t_probs = softmax(&t_logits);
        let teacher_out = (t_logits, t_blocks);
        let mut first = None;
        let mut last_loss = 0.0;
        for _ in 0..cfg.student_steps {
            let step = student_step(&mut student, &mut stu_opt, &points, &teacher_out, cfg.beta, Divergence::ForwardKl, lr, it)?;
            last_loss = step.total;
            first.get_or_insert(step);
        }
        let first = first.expect("at least one student step");
        telemetry.records.push(Record {
            iter: it,
            loss_g,
            loss_s: last_loss,
            switch_kl: first.divergence,
            teacher_maxprob: mean_maxprob(&t_probs),
            student_maxprob: first.maxprob,
            lr,
            histogram: histogram(&t_probs, classes),
            wall_time: clock.seconds() - start,
        });
        if (it + 1) % cfg.snapshot_every == 0 || it + 1 == cfg.iterations {
            snapshots.push((it + 1, points.clone()));
        }
    }
    student.set_mode(Mode::Eval);
    Ok(ToyRun {
        student,
        points: PseudoPointSet { points, snapshots },
        telemetry,
    })
}

/// Input noise for [`match_on_noise`], in the teacher's input space.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case", tag = "kind"))]
pub enum NoiseKind {
    /// Independent uniform values per input element.
    UniformPixel { low: f64, high: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl NoiseKind {
    pub fn sample(&self, shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
        match *self {
            NoiseKind::UniformPixel { low, high } => {
                if !(low < high) {
                    return Err(Error::InvalidConfig(format!("uniform noise needs low < high, got [{low}, {high}]")));
                }
                Ok(Tensor::uniform(shape, low, high, rng))
            }
            NoiseKind::Gaussian { mean, std } => {
                if !(std > 0.0) {
                    return Err(Error::InvalidConfig(format!("gaussian noise needs std > 0, got {std}")));
                }
                let mut t = Tensor::zeros(shape);
                for v in t.data_mut() {
                    let e: f64 = StandardNormal.sample(rng);
                    *v = mean + std * e;
                }
                Ok(t)
            }
        }
    }
}

/// Settings of [`match_on_noise`].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct NoiseMatchConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for NoiseMatchConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch: 64,
            lr: 2e-3,
            seed: 0,
        }
    }
}

/// Student trained to match the teacher's predictions on fresh noise
/// batches, with Adam under a cosine schedule. Returns the student and the
/// per-step losses.
pub fn match_on_noise(
    teacher: &Network,
    student_spec: &NetSpec,
    noise: NoiseKind,
    cfg: &NoiseMatchConfig,
    on_step: &mut dyn FnMut(usize, f64),
) -> Result<(Network, Vec<f64>)> {
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidConfig("noise matching needs batch ≥ 1 and lr > 0".into()));
    }
    let mut rng = crate::rng(cfg.seed);
    let mut student = Network::classifier(student_spec, rng.next_u64())?;
    check_classes(teacher, &student)?;
    let teacher = eval_clone(teacher);
    let mut shape = vec![cfg.batch];
    shape.extend(teacher.spec().input_shape());
    student.set_mode(Mode::Train);
    let mut opt = student.optimizer(Optimizer::adam());
    let mut losses_out = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let x = noise.sample(&shape, &mut rng)?;
        let (t_logits, _, _) = teacher.forward_with_activations(&x)?;
        let lr = cosine_lr(step as f64, cfg.steps as f64, cfg.lr)?;
        let s = student_step(&mut student, &mut opt, &x, &(t_logits, Vec::new()), 0.0, Divergence::ForwardKl, lr, step)?;
        on_step(step, s.total);
        losses_out.push(s.total);
    }
    student.set_mode(Mode::Eval);
    Ok((student, losses_out))
}

#[cfg(test)]
mod tests;
