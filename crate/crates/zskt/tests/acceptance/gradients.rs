//! Reverse-mode gradients of every graph op and every objective against
//! central differences.

use std::time::Instant;

use rand::Rng as _;
use zskt_core::autodiff::{Attrs, BnMode, Graph, OpKind, Var};
use zskt_core::gradcheck::finite_difference_check;
use zskt_core::losses::{
    cross_entropy, forward_kl, generator_loss, kd_at_loss, student_loss, Augmentation, ExtraInputs, ExtraKind,
    ExtraLoss, KdAtConfig,
};
use zskt_core::nn::ActivationSet;
use zskt_core::{Result, Rng, Tensor};

use crate::Outcome;

pub const TOL: f64 = 1e-4;
pub const INSTANCES: usize = 20;
pub const BUDGET_SECONDS: f64 = 60.0;
const H: f64 = 1e-5;

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    Tensor::uniform(shape, lo, hi, rng)
}

/// Values bounded away from the ReLU kink.
fn off_kink(shape: &[usize], rng: &mut Rng) -> Tensor {
    let mut t = uniform(shape, -2.0, 2.0, rng);
    t.data_mut().iter_mut().for_each(|v| *v = v.signum() * (0.1 + v.abs()));
    t
}

struct Case {
    inputs: Vec<Tensor>,
    attrs: Attrs,
}

fn case(kind: OpKind, rng: &mut Rng) -> Case {
    let n = rng.random_range(2..5);
    let m = rng.random_range(2..5);
    let mut attrs = Attrs::default();
    let inputs = match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            vec![uniform(&[n, m], -2.0, 2.0, rng), uniform(&[n, m], -2.0, 2.0, rng)]
        }
        OpKind::ScalarMul => {
            attrs.scalar = rng.random_range(-3.0..3.0);
            vec![uniform(&[n, m], -2.0, 2.0, rng)]
        }
        OpKind::AddBias => {
            let x = if rng.random_bool(0.5) {
                uniform(&[n, m], -2.0, 2.0, rng)
            } else {
                uniform(&[n, m, 3, 2], -2.0, 2.0, rng)
            };
            vec![x, uniform(&[m], -1.0, 1.0, rng)]
        }
        OpKind::MatMul => {
            let k = rng.random_range(1..5);
            vec![uniform(&[n, k], -2.0, 2.0, rng), uniform(&[k, m], -2.0, 2.0, rng)]
        }
        OpKind::Transpose => vec![uniform(&[n, m], -2.0, 2.0, rng)],
        OpKind::Conv2d => {
            let k = if rng.random_bool(0.5) { 1 } else { 3 };
            attrs.stride = rng.random_range(1..3);
            attrs.pad = rng.random_range(0..2);
            let side = rng.random_range(3..7);
            let cin = rng.random_range(1..3);
            let cout = rng.random_range(1..4);
            vec![
                uniform(&[n - 1, cin, side, side + 1], -1.0, 1.0, rng),
                uniform(&[cout, cin, k, k], -1.0, 1.0, rng),
            ]
        }
        OpKind::Relu => vec![off_kink(&[n, m], rng)],
        OpKind::Tanh | OpKind::Exp | OpKind::Square => vec![uniform(&[n, m], -2.0, 2.0, rng)],
        OpKind::Log => vec![uniform(&[n, m], 0.2, 3.0, rng)],
        OpKind::Sum | OpKind::Mean => {
            attrs.axis = match rng.random_range(0..4) {
                3 => None,
                a => Some(a),
            };
            vec![uniform(&[n, m, 2], -2.0, 2.0, rng)]
        }
        OpKind::L2Norm => {
            let shape: &[usize] = if rng.random_bool(0.5) { &[n, m] } else { &[n, m, 3] };
            vec![off_kink(shape, rng)]
        }
        OpKind::NormalizeRows => {
            let shape: &[usize] = if rng.random_bool(0.5) { &[n, m] } else { &[n, 2, m, 2] };
            vec![off_kink(shape, rng)]
        }
        OpKind::Reshape => {
            attrs.shape = if rng.random_bool(0.5) { vec![n, m * 3] } else { vec![n * m, 3] };
            vec![uniform(&[n, m, 3], -2.0, 2.0, rng)]
        }
        OpKind::Concat => {
            let parts = rng.random_range(2..4);
            let axis = rng.random_range(0..4);
            attrs.axis = Some(axis);
            (0..parts)
                .map(|_| {
                    let mut shape = vec![n, m, 2, 3];
                    shape[axis] = rng.random_range(1..4);
                    uniform(&shape, -2.0, 2.0, rng)
                })
                .collect()
        }
        OpKind::Upsample2x => vec![uniform(&[n - 1, m, 2, 3], -2.0, 2.0, rng)],
        OpKind::BatchNorm => {
            let x = if rng.random_bool(0.5) {
                uniform(&[n + 2, m], -2.0, 2.0, rng)
            } else {
                uniform(&[n, m, 2, 3], -2.0, 2.0, rng)
            };
            if rng.random_bool(0.5) {
                attrs.bn = BnMode::Eval {
                    mean: (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    var: (0..m).map(|_| rng.random_range(0.3..2.0)).collect(),
                };
            }
            vec![x, uniform(&[m], 0.5, 1.5, rng), uniform(&[m], -1.0, 1.0, rng)]
        }
        OpKind::Softmax | OpKind::LogSoftmax => {
            attrs.axis = Some(rng.random_range(0..2));
            vec![uniform(&[n, m], -3.0, 3.0, rng)]
        }
    };
    Case { inputs, attrs }
}

/// `Σ W ⊙ y` with a fixed random `W`, so every output coordinate matters.
fn weighted_sum(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let w = g.constant(w.clone());
    let p = g.mul(y, w)?;
    g.sum(p, None)
}

/// Worst relative error over every differentiable input of one op case.
fn check_op(kind: OpKind, c: &Case, rng: &mut Rng) -> Result<f64> {
    let out_shape = {
        let mut g = Graph::inference();
        let vars: Vec<Var> = c.inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = g.apply(kind, &vars, &c.attrs)?;
        g.shape(y).to_vec()
    };
    let w = uniform(&out_shape, -1.0, 1.0, rng);
    let mut worst: f64 = 0.0;
    for i in 0..c.inputs.len() {
        let f = |g: &mut Graph, x: Var| -> Result<Var> {
            let vars: Vec<Var> = c
                .inputs
                .iter()
                .enumerate()
                .map(|(k, t)| if k == i { x } else { g.constant(t.clone()) })
                .collect();
            let y = g.apply(kind, &vars, &c.attrs)?;
            weighted_sum(g, y, &w)
        };
        worst = worst.max(finite_difference_check(f, &c.inputs[i], H)?);
    }
    Ok(worst)
}

/// Random logits and activation blocks for one teacher/student pair.
struct LossCase {
    t_logits: Tensor,
    s_logits: Tensor,
    t_blocks: Vec<Tensor>,
    s_blocks: Vec<Tensor>,
    features: Tensor,
    augmented: Tensor,
    labels: Vec<usize>,
}

fn loss_case(rng: &mut Rng) -> LossCase {
    let n = rng.random_range(2..6);
    let c = rng.random_range(2..6);
    let taps = rng.random_range(1..3);
    let mut t_blocks = Vec::new();
    let mut s_blocks = Vec::new();
    for _ in 0..taps {
        let side = rng.random_range(2..4);
        t_blocks.push(off_kink(&[n, rng.random_range(1..4), side, side], rng));
        s_blocks.push(off_kink(&[n, rng.random_range(1..4), side, side], rng));
    }
    LossCase {
        t_logits: uniform(&[n, c], -3.0, 3.0, rng),
        s_logits: uniform(&[n, c], -3.0, 3.0, rng),
        t_blocks,
        s_blocks,
        features: uniform(&[n, 3], -1.0, 1.0, rng),
        augmented: uniform(&[n, c], -3.0, 3.0, rng),
        labels: (0..n).map(|_| rng.random_range(0..c)).collect(),
    }
}

fn acts(g: &mut Graph, blocks: &[Tensor], replace: Option<(usize, Var)>) -> ActivationSet {
    ActivationSet {
        blocks: blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let v = match replace {
                    Some((k, v)) if k == i => v,
                    _ => g.constant(b.clone()),
                };
                (format!("tap{i}"), v)
            })
            .collect(),
        penultimate: None,
    }
}

/// Which tensor of a [`LossCase`] is the differentiated input.
#[derive(Clone, Copy)]
enum Wrt {
    Teacher,
    Student,
    StudentBlock(usize),
    TeacherBlock(usize),
    Features,
    Augmented,
}

impl LossCase {
    fn point(&self, wrt: Wrt) -> &Tensor {
        match wrt {
            Wrt::Teacher => &self.t_logits,
            Wrt::Student => &self.s_logits,
            Wrt::StudentBlock(i) => &self.s_blocks[i],
            Wrt::TeacherBlock(i) => &self.t_blocks[i],
            Wrt::Features => &self.features,
            Wrt::Augmented => &self.augmented,
        }
    }

    /// Bind every tensor as a constant except the one under test.
    fn bind(&self, g: &mut Graph, x: Var, wrt: Wrt) -> Bound {
        let mut pick = |which: Wrt, t: &Tensor| {
            if std::mem::discriminant(&which) == std::mem::discriminant(&wrt) {
                x
            } else {
                g.constant(t.clone())
            }
        };
        let t = pick(Wrt::Teacher, &self.t_logits);
        let s = pick(Wrt::Student, &self.s_logits);
        let features = pick(Wrt::Features, &self.features);
        let augmented = pick(Wrt::Augmented, &self.augmented);
        let t_acts = acts(
            g,
            &self.t_blocks,
            match wrt {
                Wrt::TeacherBlock(i) => Some((i, x)),
                _ => None,
            },
        );
        let s_acts = acts(
            g,
            &self.s_blocks,
            match wrt {
                Wrt::StudentBlock(i) => Some((i, x)),
                _ => None,
            },
        );
        Bound {
            t,
            s,
            t_acts,
            s_acts,
            features,
            augmented,
        }
    }
}

struct Bound {
    t: Var,
    s: Var,
    t_acts: ActivationSet,
    s_acts: ActivationSet,
    features: Var,
    augmented: Var,
}

type LossFn = fn(&mut Graph, &Bound, &LossCase) -> Result<Var>;

fn kl_of_logits(g: &mut Graph, b: &Bound, _: &LossCase) -> Result<Var> {
    let t = g.softmax(b.t, 1)?;
    let s = g.softmax(b.s, 1)?;
    forward_kl(g, t, s)
}

fn student_objective(g: &mut Graph, b: &Bound, _: &LossCase) -> Result<Var> {
    Ok(student_loss(g, b.t, b.s, &b.t_acts, &b.s_acts, 250.0)?.total)
}

fn generator_with(g: &mut Graph, b: &Bound, extras: &[ExtraLoss]) -> Result<Var> {
    let inputs = ExtraInputs {
        teacher_augmented: vec![b.augmented],
        teacher_features: Some(b.features),
    };
    generator_loss(g, b.t, b.s, extras, &inputs)
}

fn generator_plain(g: &mut Graph, b: &Bound, _: &LossCase) -> Result<Var> {
    generator_with(g, b, &[])
}

fn generator_teacher_entropy(g: &mut Graph, b: &Bound, _: &LossCase) -> Result<Var> {
    generator_with(g, b, &[ExtraLoss::new(ExtraKind::TeacherEntropy, 0.7)])
}

fn generator_student_entropy(g: &mut Graph, b: &Bound, _: &LossCase) -> Result<Var> {
    generator_with(g, b, &[ExtraLoss::new(ExtraKind::StudentEntropy, 0.7)])
}

fn generator_consistency(g: &mut Graph, b: &Bound, _: &LossCase) -> Result<Var> {
    let kind = ExtraKind::Consistency {
        augmentation: Augmentation::GaussianNoise { sigma: 0.1 },
    };
    generator_with(g, b, &[ExtraLoss::new(kind, 0.7)])
}

fn generator_diversity(g: &mut Graph, b: &Bound, _: &LossCase) -> Result<Var> {
    generator_with(g, b, &[ExtraLoss::new(ExtraKind::Diversity, 0.7)])
}

fn kd_at(g: &mut Graph, b: &Bound, c: &LossCase) -> Result<Var> {
    kd_at_loss(g, b.t, b.s, &c.labels, &b.t_acts, &b.s_acts, &KdAtConfig::default())
}

fn ce(g: &mut Graph, b: &Bound, c: &LossCase) -> Result<Var> {
    cross_entropy(g, b.s, &c.labels)
}

/// Objectives with the inputs each is differentiated against.
fn objectives(c: &LossCase) -> Vec<(&'static str, LossFn, Vec<Wrt>)> {
    let blocks: Vec<Wrt> = (0..c.s_blocks.len())
        .flat_map(|i| [Wrt::StudentBlock(i), Wrt::TeacherBlock(i)])
        .collect();
    let with_blocks = |base: &[Wrt]| base.iter().copied().chain(blocks.iter().copied()).collect::<Vec<_>>();
    vec![
        ("forward_kl", kl_of_logits as LossFn, vec![Wrt::Teacher, Wrt::Student]),
        ("student_loss(beta=250)", student_objective, with_blocks(&[Wrt::Teacher, Wrt::Student])),
        ("generator_loss", generator_plain, vec![Wrt::Teacher, Wrt::Student]),
        ("generator_loss+teacher_entropy", generator_teacher_entropy, vec![Wrt::Teacher, Wrt::Student]),
        ("generator_loss+student_entropy", generator_student_entropy, vec![Wrt::Teacher, Wrt::Student]),
        (
            "generator_loss+consistency",
            generator_consistency,
            vec![Wrt::Teacher, Wrt::Student, Wrt::Augmented],
        ),
        (
            "generator_loss+diversity",
            generator_diversity,
            vec![Wrt::Teacher, Wrt::Student, Wrt::Features],
        ),
        ("kd_at_loss", kd_at, with_blocks(&[Wrt::Teacher, Wrt::Student])),
        ("cross_entropy", ce, vec![Wrt::Student]),
    ]
}

fn check_loss(c: &LossCase, f: LossFn, wrts: &[Wrt]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &wrt in wrts {
        let eval = |g: &mut Graph, x: Var| -> Result<Var> {
            let b = c.bind(g, x, wrt);
            f(g, &b, c)
        };
        worst = worst.max(finite_difference_check(eval, c.point(wrt), H)?);
    }
    Ok(worst)
}

pub fn run() -> Result<Vec<Outcome>> {
    let start = Instant::now();
    let mut rng = zskt_core::rng(0x6ad);
    let mut rows: Vec<(String, f64)> = Vec::new();
    for kind in OpKind::ALL {
        let mut worst: f64 = 0.0;
        for _ in 0..INSTANCES {
            let c = case(kind, &mut rng);
            worst = worst.max(check_op(kind, &c, &mut rng)?);
        }
        rows.push((kind.name().to_string(), worst));
    }
    let names: Vec<&str> = objectives(&loss_case(&mut zskt_core::rng(0))).iter().map(|o| o.0).collect();
    let mut loss_worst = vec![0.0f64; names.len()];
    for _ in 0..INSTANCES {
        let c = loss_case(&mut rng);
        for (k, (_, f, wrts)) in objectives(&c).into_iter().enumerate() {
            loss_worst[k] = loss_worst[k].max(check_loss(&c, f, &wrts)?);
        }
    }
    rows.extend(names.iter().map(|n| n.to_string()).zip(loss_worst));
    let elapsed = start.elapsed().as_secs_f64();
    let (worst_name, worst) = rows
        .iter()
        .fold(("", 0.0f64), |acc, (n, e)| if *e > acc.1 { (n.as_str(), *e) } else { acc });
    let failing: Vec<String> = rows
        .iter()
        .filter(|(_, e)| e.is_nan() || *e >= TOL)
        .map(|(n, e)| format!("{n}={e:.2e}"))
        .collect();
    let mut detail = format!(
        "{} ops + {} objectives x {INSTANCES} instances, worst rel err {worst:.2e} ({worst_name}), {elapsed:.1}s",
        OpKind::ALL.len(),
        names.len()
    );
    if !failing.is_empty() {
        detail.push_str(&format!("; over tolerance: {}", failing.join(", ")));
    }
    Ok(vec![Outcome::gate(
        "C1",
        format!("gradient suite (rel err < {TOL:.0e}, < {BUDGET_SECONDS:.0}s)"),
        failing.is_empty() && elapsed < BUDGET_SECONDS,
        detail,
    )])
}
