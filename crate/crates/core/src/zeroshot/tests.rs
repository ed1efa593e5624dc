use super::*;
use crate::nn::{ConvNetSpec, TapPolicy};
use crate::NoClock;

fn small_convnet(widths: [usize; 3]) -> NetSpec {
    NetSpec::ConvNet(ConvNetSpec {
        input: [1, 8, 8],
        classes: 4,
        widths,
        width: 1,
        depth: 1,
        stem_stride: 1,
        taps: TapPolicy::Group,
    })
}

fn small_gen() -> GeneratorSpec {
    GeneratorSpec {
        channels: 4,
        ..GeneratorSpec::new(6, [1, 8, 8])
    }
}

fn small_cfg(iterations: usize) -> ZeroShotConfig {
    ZeroShotConfig {
        iterations,
        z_dim: 6,
        batch: 5,
        ..ZeroShotConfig::default()
    }
}

fn teacher() -> Network {
    let mut t = Network::classifier(&small_convnet([4, 4, 8]), 11).unwrap();
    t.set_mode(Mode::Eval);
    t
}

#[test]
fn loop_bookkeeping_and_frozen_teacher() {
    let t = teacher();
    let before = t.clone();
    let mut seen = 0;
    let run = run_zero_shot(&t, &small_convnet([2, 2, 4]), &small_gen(), &small_cfg(3), &NoClock, &mut |_| seen += 1)
        .unwrap();
    assert_eq!(run.generator_updates, 3);
    assert_eq!(run.student_updates, 30);
    assert_eq!(run.telemetry.records.len(), 3);
    assert_eq!(seen, 3);
    assert_eq!(t, before);
    for r in &run.telemetry.records {
        assert_eq!(r.histogram.iter().sum::<usize>(), 5);
        assert!((r.loss_g + r.switch_kl).abs() < 1e-10, "{} vs {}", r.loss_g, r.switch_kl);
        assert!(r.loss_s.is_finite());
    }
    assert_eq!(run.last_batch.x.shape(), &[5, 1, 8, 8]);
    assert_eq!(run.student.mode(), Mode::Eval);
}

#[test]
fn runs_are_deterministic() {
    let t = teacher();
    let a = run_zero_shot(&t, &small_convnet([2, 2, 4]), &small_gen(), &small_cfg(2), &NoClock, &mut |_| ()).unwrap();
    let b = run_zero_shot(&t, &small_convnet([2, 2, 4]), &small_gen(), &small_cfg(2), &NoClock, &mut |_| ()).unwrap();
    assert_eq!(a.student, b.student);
    assert_eq!(a.telemetry, b.telemetry);
    let c = run_zero_shot(
        &t,
        &small_convnet([2, 2, 4]),
        &small_gen(),
        &ZeroShotConfig { seed: 1, ..small_cfg(2) },
        &NoClock,
        &mut |_| (),
    )
    .unwrap();
    assert_ne!(a.student.checksum(), c.student.checksum());
}

#[test]
fn phases_touch_only_their_network() {
    let t = teacher();
    let cfg = small_cfg(1);
    let mut rng = crate::rng(0);
    let student = Network::classifier(&small_convnet([2, 2, 4]), 1).unwrap();
    let mut gen = Network::generator(&small_gen(), 2).unwrap();
    let mut opt = gen.optimizer(Optimizer::adam());
    let z = Tensor::randn(&[5, 6], &mut rng);
    let (s_before, g_before) = (student.clone(), gen.checksum());
    let step = generator_step(&t, &student, &mut gen, &mut opt, &z, &cfg, 1e-2, 0, &mut rng).unwrap();
    assert_eq!(student, s_before);
    assert_ne!(gen.checksum(), g_before);

    let mut student = student;
    let mut sopt = student.optimizer(Optimizer::adam());
    let gen_after = gen.clone();
    let (tl, tb, _) = t.forward_with_activations(&step.x).unwrap();
    student_step(&mut student, &mut sopt, &step.x, &(tl, tb), 250.0, Divergence::ForwardKl, 1e-2, 0).unwrap();
    assert_ne!(student.checksum(), s_before.checksum());
    assert_eq!(gen, gen_after);
}

#[test]
fn extras_and_flags_run() {
    let t = teacher();
    let cfg = ZeroShotConfig {
        generator_steps: 2,
        student_steps: 1,
        resample_z: true,
        lr_stepping: LrStepping::GradientStep,
        extras: vec![
            ExtraLoss::new(ExtraKind::TeacherEntropy, 0.1),
            ExtraLoss::new(ExtraKind::Diversity, 0.1),
            ExtraLoss::new(
                ExtraKind::Consistency {
                    augmentation: losses::Augmentation::GaussianBlur { kernel: 3 },
                },
                0.1,
            ),
        ],
        ..small_cfg(2)
    };
    let run = run_zero_shot(&t, &small_convnet([2, 2, 4]), &small_gen(), &cfg, &NoClock, &mut |_| ()).unwrap();
    assert_eq!(run.generator_updates, 4);
    assert_eq!(run.student_updates, 2);
}

#[test]
fn class_mismatch_and_invalid_config() {
    let t = teacher();
    let mut spec = small_convnet([2, 2, 4]);
    if let NetSpec::ConvNet(s) = &mut spec {
        s.classes = 3;
    }
    assert!(matches!(
        run_zero_shot(&t, &spec, &small_gen(), &small_cfg(1), &NoClock, &mut |_| ()),
        Err(Error::ClassMismatch { expected: 4, found: 3 })
    ));
    assert!(matches!(
        run_zero_shot(&t, &small_convnet([2, 2, 4]), &small_gen(), &small_cfg(0), &NoClock, &mut |_| ()),
        Err(Error::InvalidConfig(_))
    ));
    let bad = ZeroShotConfig {
        beta: -1.0,
        ..small_cfg(1)
    };
    assert!(bad.validate().is_err());
}

fn toy_teacher() -> Network {
    let mut t = Network::classifier(&NetSpec::mlp(2, &[16], 3), 5).unwrap();
    t.set_mode(Mode::Eval);
    t
}

#[test]
fn toy_identical_student_leaves_points_in_place() {
    let t = toy_teacher();
    let points = Tensor::randn(&[7, 2], &mut crate::rng(1));
    let cfg = ToyConfig {
        iterations: 1,
        ..ToyConfig::default()
    };
    let run = run_toy_direct_from(&t, t.clone(), points.clone(), &cfg, &NoClock).unwrap();
    assert_eq!(run.telemetry.records[0].loss_g, 0.0);
    assert_eq!(run.points.snapshots[1].1, points);
}

#[test]
fn toy_points_ascend_kl() {
    let t = toy_teacher();
    let student = Network::classifier(&NetSpec::mlp(2, &[16], 3), 6).unwrap();
    let points = Tensor::randn(&[6, 2], &mut crate::rng(2));
    let cfg = ToyConfig {
        iterations: 1,
        point_lr: 1e-3,
        ..ToyConfig::default()
    };
    let run = run_toy_direct_from(&t, student.clone(), points.clone(), &cfg, &NoClock).unwrap();
    let moved = &run.points.snapshots[1].1;

    // numeric gradient of the batch KL with the student in train mode, as in
    // the point step
    let mut s = student.clone();
    s.set_mode(Mode::Train);
    let kl = |p: &Tensor| -> f64 {
        let tp = softmax(&t.predict(p, 64).unwrap());
        let sp = softmax(&s.predict(p, 64).unwrap());
        let mut total = 0.0;
        for (a, b) in tp.data().iter().zip(sp.data()) {
            total += a * (a / b).ln();
        }
        total / p.batch() as f64
    };
    let h = 1e-6;
    let mut dot = 0.0;
    for i in 0..points.len() {
        let mut plus = points.clone();
        plus.data_mut()[i] += h;
        let mut minus = points.clone();
        minus.data_mut()[i] -= h;
        let grad = (kl(&plus) - kl(&minus)) / (2.0 * h);
        let step = moved.data()[i] - points.data()[i];
        dot += grad * step;
    }
    assert!(dot > 0.0);
}

#[test]
fn toy_snapshots_follow_cadence() {
    let t = toy_teacher();
    let ring = Ring::around([(-1.0, 1.0), (-1.0, 1.0)], 1.5);
    let cfg = ToyConfig {
        iterations: 5,
        student_steps: 2,
        snapshot_every: 2,
        points: 9,
        ..ToyConfig::default()
    };
    let run = run_toy_direct(&t, &NetSpec::mlp(2, &[16], 3), &ring, &cfg, &NoClock).unwrap();
    let iters: Vec<usize> = run.points.snapshots.iter().map(|s| s.0).collect();
    assert_eq!(iters, vec![0, 2, 4, 5]);
    let start = &run.points.snapshots[0].1;
    for p in start.data().chunks(2) {
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        assert!(r >= ring.inner - 1e-12 && r <= ring.outer + 1e-12);
    }
}

#[test]
fn noise_matching_zero_steps_is_init() {
    let t = teacher();
    let spec = small_convnet([2, 2, 4]);
    let cfg = NoiseMatchConfig {
        steps: 0,
        ..NoiseMatchConfig::default()
    };
    let (s, losses) = match_on_noise(&t, &spec, NoiseKind::UniformPixel { low: 0.0, high: 1.0 }, &cfg, &mut |_, _| ()).unwrap();
    assert!(losses.is_empty());
    let init = Network::classifier(&spec, crate::rng(cfg.seed).next_u64()).unwrap();
    assert_eq!(s.params(), init.params());

    let cfg = NoiseMatchConfig {
        steps: 3,
        batch: 4,
        ..NoiseMatchConfig::default()
    };
    let (_, losses) = match_on_noise(&t, &spec, NoiseKind::Gaussian { mean: 0.0, std: 1.0 }, &cfg, &mut |_, _| ()).unwrap();
    assert!(losses.iter().all(|l| l.is_finite()));
}
