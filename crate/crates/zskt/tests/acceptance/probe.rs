//! Probe metric identities on small planar classifiers.

use zskt_core::baselines::{train_scratch, TrainConfig};
use zskt_core::data::make_toy_blobs;
use zskt_core::nn::NetSpec;
use zskt_core::probe::{mte, transition_curves, ProbeConfig, TransitionCurve};

use crate::Outcome;

pub const SELF_TOL: f64 = 1e-12;
/// `0.8 − 0.6` is not representable exactly; allow one rounding step.
pub const HAND_TOL: f64 = 1e-15;

pub fn run() -> zskt::Result<Vec<Outcome>> {
    let classes = 4;
    let (train, test) = make_toy_blobs(classes, 100, 0.3, 7)?;
    let spec = NetSpec::mlp(2, &[16, 16], classes);
    let cfg = TrainConfig::adam_cosine(300);
    let (a, _) = train_scratch(&spec, &train, None, &cfg)?;
    let (b, _) = train_scratch(&NetSpec::mlp(2, &[8], classes), &train, None, &TrainConfig { seed: 1, ..cfg })?;
    let pc = ProbeConfig {
        max_images: 60,
        ..ProbeConfig::default()
    };

    let same = transition_curves(&a, &a, &test, &pc)?;
    let self_mte = mte(&same.curves)?;

    let hand = TransitionCurve {
        image_id: 0,
        source: 0,
        target: 1,
        initial: (0.0, 0.0),
        p_a: vec![0.8],
        p_b: vec![0.6],
        y_a: vec![],
        y_b: vec![],
    };
    let hand_mte = mte(&[hand])?;

    let cross = transition_curves(&a, &b, &test, &pc)?;
    let counts_ok = same.curves.len() == same.agreeing * (classes - 1)
        && cross.curves.len() == cross.agreeing * (classes - 1)
        && same.agreeing == same.images_considered
        && cross.curves.iter().all(|c| c.p_a.len() == pc.steps);

    Ok(vec![
        Outcome::gate(
            "C6a",
            format!("MTE(A, A) = 0 (tol {SELF_TOL:.0e})"),
            self_mte.abs() < SELF_TOL,
            format!("MTE = {self_mte:e} over {} curves", same.curves.len()),
        ),
        Outcome::gate(
            "C6b",
            format!("hand case K=1, p_A=0.8, p_B=0.6 gives 0.2 (tol {HAND_TOL:.0e})"),
            (hand_mte - 0.2).abs() <= HAND_TOL,
            format!("MTE = {hand_mte:?}"),
        ),
        Outcome::gate(
            "C6c",
            "curve count = agreeing images x (C - 1)",
            counts_ok,
            format!(
                "self: {} curves / {} agreeing; cross: {} curves / {} agreeing of {}, C = {classes}",
                same.curves.len(),
                same.agreeing,
                cross.curves.len(),
                cross.agreeing,
                cross.images_considered
            ),
        ),
    ])
}
