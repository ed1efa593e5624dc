//! Planar toy run through the `toy` command, one seed at a time.

use std::time::Instant;

use zskt::commands::{execute, seed_dir, Command, Inputs};
use zskt::outputs::read_kv;

use crate::{scratch, workspace, Outcome};

pub const SEEDS: [u64; 3] = [0, 1, 2];
pub const TEACHER_MIN: f64 = 0.98;
pub const AGREEMENT_MIN: f64 = 0.95;
pub const SECONDS_PER_SEED: f64 = 120.0;

pub fn metric(dir: &std::path::Path, file: &str, key: &str) -> zskt::Result<f64> {
    read_kv(&dir.join(file))?
        .into_iter()
        .find(|(k, _)| k == key)
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| zskt::Error::Config(format!("{key} missing from {}", dir.join(file).display())))
}

pub fn run() -> zskt::Result<Vec<Outcome>> {
    let out = scratch("toy");
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let inputs = Inputs {
            config: Some(workspace().join("configs/toy.toml")),
            seed: Some(seed),
            out: out.clone(),
            quiet: true,
            ..Inputs::default()
        };
        let start = Instant::now();
        execute(Command::Toy, &inputs)?;
        let secs = start.elapsed().as_secs_f64();
        let dir = seed_dir(&out, seed);
        let teacher = metric(&dir, "metrics.txt", "teacher_test_accuracy")?;
        let grid = metric(&dir, "metrics.txt", "grid_agreement")?;
        pass &= teacher >= TEACHER_MIN && grid >= AGREEMENT_MIN && secs < SECONDS_PER_SEED;
        parts.push(format!("seed {seed}: teacher {teacher:.4}, grid {grid:.4}, {secs:.1}s"));
    }
    Ok(vec![Outcome::gate(
        "C3",
        format!(
            "toy: teacher >= {TEACHER_MIN}, 200x200 grid agreement >= {AGREEMENT_MIN}, < {SECONDS_PER_SEED:.0}s per seed, 3/3 seeds"
        ),
        pass,
        parts.join("; "),
    )])
}
