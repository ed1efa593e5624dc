//! Exact relations between the objectives.

use rand::Rng as _;
use zskt_core::autodiff::Graph;
use zskt_core::losses::{forward_kl, generator_loss, student_loss, ExtraInputs};
use zskt_core::nn::ActivationSet;
use zskt_core::{Result, Tensor};

use crate::Outcome;

pub const BATCHES: usize = 1000;
pub const PAIRS: usize = 10_000;
pub const SUM_TOL: f64 = 1e-10;

pub fn run() -> Result<Vec<Outcome>> {
    let mut rng = zskt_core::rng(0x1d);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..BATCHES {
        let n = rng.random_range(1..65);
        let c = rng.random_range(2..11);
        let scale = rng.random_range(0.1..12.0);
        let mut g = Graph::inference();
        let t = g.constant(Tensor::uniform(&[n, c], -scale, scale, &mut rng));
        let s = g.constant(Tensor::uniform(&[n, c], -scale, scale, &mut rng));
        let none = ActivationSet::default();
        let ls = student_loss(&mut g, t, s, &none, &none, 250.0)?;
        let lg = generator_loss(&mut g, t, s, &[], &ExtraInputs::default())?;
        let sum = g.value(lg).item() + g.value(ls.divergence).item();
        worst_sum = worst_sum.max(sum.abs());
    }

    let mut min_kl = f64::INFINITY;
    for k in 0..PAIRS {
        let c = rng.random_range(2..11);
        let scale = rng.random_range(0.1..30.0);
        let mut g = Graph::inference();
        let tl = g.constant(Tensor::uniform(&[1, c], -scale, scale, &mut rng));
        let t = g.softmax(tl, 1)?;
        // every tenth pair compares a distribution with itself
        let s = if k % 10 == 0 {
            t
        } else {
            let sl = g.constant(Tensor::uniform(&[1, c], -scale, scale, &mut rng));
            g.softmax(sl, 1)?
        };
        let kl = forward_kl(&mut g, t, s)?;
        min_kl = min_kl.min(g.value(kl).item());
    }

    Ok(vec![
        Outcome::gate(
            "C2a",
            format!("L_G + KL part of L_S = 0 (|sum| <= {SUM_TOL:.0e}, {BATCHES} batches)"),
            worst_sum <= SUM_TOL,
            format!("max |sum| = {worst_sum:.3e}"),
        ),
        Outcome::gate(
            "C2b",
            format!("KL >= 0 ({PAIRS} pairs)"),
            min_kl >= 0.0,
            format!("min KL = {min_kl:.3e}"),
        ),
    ])
}
