//! Digit experiments at desk scale, driven through the commands with
//! `configs/digits.toml`: one teacher, noise matching, three zero-shot
//! students, three few-shot KD+AT students and their transition errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use zskt::commands::{execute, seed_dir, Command, Inputs};
use zskt::report::mean_std;

use crate::toy::metric;
use crate::{scratch, workspace, Outcome};

pub const TEACHER_MIN: f64 = 0.97;
pub const NOISE_STUDENT_MIN: f64 = 0.85;
pub const NOISE_SECONDS: f64 = 1800.0;
pub const ZEROSHOT_MIN: f64 = 0.85;
pub const SEEDS: [u64; 3] = [0, 1, 2];

pub const TITLES: [(&str, &str); 3] = [
    ("C4", "noise matching: teacher >= 0.97, student >= 0.85 within 20k steps, <= 30 min"),
    ("C5", "zero-shot student on digits >= 0.85, 3 seeds"),
    ("C7", "MTE(zero-shot, teacher) < MTE(KD+AT M=10, teacher), 3/3 seeds"),
];

struct Runner {
    root: PathBuf,
    config: PathBuf,
}

impl Runner {
    /// Run `cmd` for one seed into `<root>/<name>/seed-<seed>` and return
    /// that directory and the wall time.
    fn run(
        &self,
        cmd: Command,
        name: &str,
        seed: u64,
        teacher: Option<&Path>,
        student: Option<&Path>,
    ) -> zskt::Result<(PathBuf, f64)> {
        let out = self.root.join(name);
        let start = Instant::now();
        execute(
            cmd,
            &Inputs {
                config: Some(self.config.clone()),
                seed: Some(seed),
                out: out.clone(),
                teacher: teacher.map(Path::to_path_buf),
                student: student.map(Path::to_path_buf),
                data: Some(workspace().join("data/mnist")),
                quiet: false,
            },
        )?;
        Ok((seed_dir(&out, seed), start.elapsed().as_secs_f64()))
    }
}

fn summary(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("mean {m:.4} +- {s:.4} (sample std)")
}

pub fn run() -> zskt::Result<Vec<Outcome>> {
    let r = Runner {
        root: scratch("digits"),
        config: workspace().join("configs/digits.toml"),
    };
    let cfg = zskt::config::Config::load(&r.config)?;

    let (tdir, tsecs) = r.run(Command::TrainTeacher, "teacher", 0, None, None)?;
    let teacher = tdir.join("teacher.zskt");
    let teacher_acc = metric(&tdir, "metrics.txt", "test_accuracy")?;
    let teacher_note = format!("teacher test acc {teacher_acc:.4} ({tsecs:.0}s)");

    let (ndir, nsecs) = r.run(Command::MatchNoise, "noise", 0, Some(&teacher), None)?;
    let noise_acc = metric(&ndir, "metrics.txt", "test_accuracy")?;
    let c4 = Outcome::report(
        TITLES[0].0,
        TITLES[0].1,
        teacher_acc >= TEACHER_MIN
            && noise_acc >= NOISE_STUDENT_MIN
            && cfg.noise_match.steps <= 20_000
            && nsecs <= NOISE_SECONDS,
        format!(
            "{teacher_note}; student test acc {noise_acc:.4} after {} steps in {nsecs:.0}s",
            cfg.noise_match.steps
        ),
    );

    let mut zs_acc = Vec::new();
    let mut zs_students = Vec::new();
    for seed in SEEDS {
        let (d, _) = r.run(Command::ZeroShot, "zeroshot", seed, Some(&teacher), None)?;
        zs_acc.push(metric(&d, "metrics.txt", "test_accuracy")?);
        zs_students.push(d.join("student.zskt"));
    }
    let c5 = Outcome::report(
        TITLES[1].0,
        TITLES[1].1,
        zs_acc.iter().all(|&a| a >= ZEROSHOT_MIN),
        format!(
            "test acc {} -> {}; {} iterations, batch {}",
            zs_acc.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(", "),
            summary(&zs_acc),
            cfg.zeroshot.iterations,
            cfg.zeroshot.batch
        ),
    );

    let mut wins = 0;
    let mut parts = Vec::new();
    for (k, seed) in SEEDS.into_iter().enumerate() {
        let (kd, _) = r.run(Command::Distill, "kdat", seed, Some(&teacher), None)?;
        let kd_student = kd.join("student.zskt");
        let (pz, _) = r.run(Command::Probe, "probe-zeroshot", seed, Some(&teacher), Some(&zs_students[k]))?;
        let (pk, _) = r.run(Command::Probe, "probe-kdat", seed, Some(&teacher), Some(&kd_student))?;
        let (mz, mk) = (metric(&pz, "mte.txt", "mte")?, metric(&pk, "mte.txt", "mte")?);
        if mz < mk {
            wins += 1;
        }
        parts.push(format!(
            "seed {seed}: zero-shot {mz:.4} vs KD+AT {mk:.4} (KD+AT test acc {:.4})",
            metric(&kd, "metrics.txt", "test_accuracy")?
        ));
    }
    let c7 = Outcome::report(
        TITLES[2].0,
        TITLES[2].1,
        wins == SEEDS.len(),
        format!("{wins}/{} seeds; {}", SEEDS.len(), parts.join("; ")),
    );
    Ok(vec![c4, c5, c7])
}
