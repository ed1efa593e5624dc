//! Subcommand implementations. Each seed writes into `<out>/seed-<n>/`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use zskt_core::baselines::{self, accuracy, agreement, grid_agreement};
use zskt_core::data::{make_toy_blobs, Dataset, NormStats};
use zskt_core::probe::{mte, noise_audit, transition_curves};
use zskt_core::zeroshot::{match_on_noise, run_toy_direct, run_zero_shot, Ring};
use zskt_core::Clock;

use crate::checkpoint::{encode_network, encode_records, load_network, Precision};
use crate::config::{noise_in_input_space, Config, DataConfig};
use crate::error::{Error, Result};
use crate::outputs::{
    content_digest, curves_csv, histogram_csv, kv, points_csv, telemetry_csv, trajectory_csv, RunWriter, TelemetryRow,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    TrainTeacher,
    ZeroShot,
    Toy,
    MatchNoise,
    Distill,
    Finetune,
    Probe,
    NoiseAudit,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::TrainTeacher => "train-teacher",
            Command::ZeroShot => "zeroshot",
            Command::Toy => "toy",
            Command::MatchNoise => "match-noise",
            Command::Distill => "distill",
            Command::Finetune => "finetune",
            Command::Probe => "probe",
            Command::NoiseAudit => "noise-audit",
            Command::Report => "report",
        }
    }
}

/// Command-line inputs shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Inputs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub teacher: Option<PathBuf>,
    pub student: Option<PathBuf>,
    pub data: Option<PathBuf>,
    /// Suppress progress lines on stderr.
    pub quiet: bool,
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Config after applying `--config`, `--seed` and `--data`.
pub fn resolve_config(inputs: &Inputs) -> Result<Config> {
    let mut cfg = match &inputs.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = inputs.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(dir) = &inputs.data {
        match &mut cfg.data {
            DataConfig::Digits { dir: d, .. } => *d = dir.clone(),
            DataConfig::Blobs { .. } => return Err(Error::Usage("--data applies to image datasets only".into())),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Train and test splits for one seed.
struct Data {
    train: Dataset,
    test: Dataset,
    norm: Option<NormStats>,
}

fn load_data(cfg: &Config, seed: u64) -> Result<Data> {
    match &cfg.data {
        DataConfig::Digits {
            dir,
            train_limit,
            test_limit,
        } => {
            let (train, test, norm) = crate::datasets::load_digits(dir, *train_limit, *test_limit)?;
            Ok(Data {
                train,
                test,
                norm: Some(norm),
            })
        }
        DataConfig::Blobs {
            classes,
            per_class,
            spread,
        } => {
            let (train, test) = make_toy_blobs(*classes, *per_class, *spread, seed)?;
            Ok(Data { train, test, norm: None })
        }
    }
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str, cmd: Command) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Usage(format!("{} needs --{flag}", cmd.name())))
}

fn input_digest(path: &Path) -> Result<String> {
    Ok(content_digest(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn supervised_rows(losses: &[f64], cfg: &zskt_core::baselines::TrainConfig) -> Result<Vec<TelemetryRow>> {
    losses
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            Ok(TelemetryRow {
                iter: i,
                loss_g: None,
                loss_s: l,
                t_maxprob: None,
                s_maxprob: None,
                lr: cfg.schedule.lr(i as f64, cfg.iterations.max(1) as f64, cfg.lr)?,
                histogram: Vec::new(),
            })
        })
        .collect()
}

struct Progress {
    quiet: bool,
    label: String,
    every: usize,
}

impl Progress {
    fn new(inputs: &Inputs, cmd: Command, seed: u64, total: usize) -> Self {
        Self {
            quiet: inputs.quiet,
            label: format!("{} seed {seed}", cmd.name()),
            every: (total / 10).max(1),
        }
    }

    fn tick(&self, i: usize, what: impl FnOnce() -> String) {
        if !self.quiet && (i + 1).is_multiple_of(self.every) {
            eprintln!("[{}] {}", self.label, what());
        }
    }
}

/// Run one subcommand for every configured seed.
pub fn execute(cmd: Command, inputs: &Inputs) -> Result<()> {
    if cmd == Command::Report {
        let written = crate::report::build_report(&inputs.out)?;
        if !inputs.quiet {
            eprintln!("[report] wrote {}", written.join(", "));
        }
        return Ok(());
    }
    let cfg = resolve_config(inputs)?;
    if cfg.parallel && cfg.seeds.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg
                .seeds
                .iter()
                .map(|&seed| {
                    let cfg = &cfg;
                    s.spawn(move || run_seed(cmd, inputs, cfg, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Usage("worker thread panicked".into()))))
                .collect::<Result<Vec<()>>>()
        })?;
    } else {
        for &seed in &cfg.seeds {
            run_seed(cmd, inputs, &cfg, seed)?;
        }
    }
    Ok(())
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn run_seed(cmd: Command, inputs: &Inputs, cfg: &Config, seed: u64) -> Result<()> {
    let start = Instant::now();
    let dir = seed_dir(&inputs.out, seed);
    let mut w = RunWriter::new(&dir)?;
    let echo = Config {
        seeds: vec![seed],
        parallel: false,
        ..cfg.clone()
    }
    .to_toml();
    let data = load_data(cfg, seed)?;
    let mut inputs_used = Vec::new();
    for (flag, path) in [("teacher", &inputs.teacher), ("student", &inputs.student)] {
        if let Some(p) = path {
            inputs_used.push(kv(&format!("input.{flag}"), p.display()));
            inputs_used.push(kv(&format!("input.{flag}.digest"), input_digest(p)?));
        }
    }
    let mut metrics = Vec::new();
    match cmd {
        Command::TrainTeacher => train_teacher(cfg, seed, &data, &mut w, &mut metrics)?,
        Command::ZeroShot => zeroshot(cmd, inputs, cfg, seed, &data, &mut w, &mut metrics)?,
        Command::Toy => toy(inputs, cfg, seed, &data, &mut w, &mut metrics)?,
        Command::MatchNoise => match_noise(cmd, inputs, cfg, seed, &data, &mut w, &mut metrics)?,
        Command::Distill => distill(cmd, inputs, cfg, seed, &data, &mut w, &mut metrics)?,
        Command::Finetune => finetune(cmd, inputs, cfg, seed, &data, &mut w, &mut metrics)?,
        Command::Probe => probe(cmd, inputs, cfg, seed, &data, &mut w)?,
        Command::NoiseAudit => audit(cmd, inputs, cfg, seed, &data, &mut w, &mut metrics)?,
        Command::Report => unreachable!("handled before seeds"),
    }
    if !metrics.is_empty() {
        w.write_kv("metrics.txt", &metrics)?;
    }
    let mut echo_full = echo;
    if !inputs_used.is_empty() {
        echo_full.push_str(&format!(
            "\n# inputs\n{}",
            inputs_used.iter().map(|(k, v)| format!("# {k} = {v}\n")).collect::<String>()
        ));
    }
    w.finish(cmd.name(), seed, &echo_full, start.elapsed().as_secs_f64())
}

fn train_teacher(cfg: &Config, seed: u64, data: &Data, w: &mut RunWriter, metrics: &mut Vec<(String, String)>) -> Result<()> {
    let tc = baselines::TrainConfig { seed, ..cfg.train.clone() };
    let (net, report) = baselines::train_scratch(&cfg.teacher_spec(), &data.train, Some(&data.test), &tc)?;
    w.write("teacher.zskt", &encode_network(&net, Precision::F64))?;
    w.write("telemetry.csv", &telemetry_csv(&supervised_rows(&report.losses, &tc)?, data.train.classes())?)?;
    metrics.push(kv("train_accuracy", report.train_accuracy));
    metrics.push(kv("test_accuracy", report.test_accuracy.unwrap_or(f64::NAN)));
    metrics.push(kv("params", net.param_count()));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn zeroshot(
    cmd: Command,
    inputs: &Inputs,
    cfg: &Config,
    seed: u64,
    data: &Data,
    w: &mut RunWriter,
    metrics: &mut Vec<(String, String)>,
) -> Result<()> {
    let teacher = load_network(require(&inputs.teacher, "teacher", cmd)?, cfg.teacher.as_ref())?;
    let gen = cfg.generator_spec(teacher.spec(), data.norm.as_ref())?;
    let zc = zskt_core::zeroshot::ZeroShotConfig { seed, ..cfg.zeroshot.clone() };
    let progress = Progress::new(inputs, cmd, seed, zc.iterations);
    let clock = WallClock(Instant::now());
    let test = &data.test;
    let run = run_zero_shot(&teacher, &cfg.student_spec(), &gen, &zc, &clock, &mut |r| {
        progress.tick(r.iter, || {
            format!(
                "iter {} L_G {:.4} L_S {:.4} t_maxprob {:.3} ({:.0}s)",
                r.iter + 1,
                r.loss_g,
                r.loss_s,
                r.teacher_maxprob,
                r.wall_time
            )
        })
    })?;
    let rows: Vec<TelemetryRow> = run.telemetry.records.iter().map(TelemetryRow::from).collect();
    w.write("student.zskt", &encode_network(&run.student, Precision::F64))?;
    w.write("generator.zskt", &encode_network(&run.generator, Precision::F64))?;
    w.write("telemetry.csv", &telemetry_csv(&rows, test.classes())?)?;
    let batch = vec![("x_p".to_string(), run.last_batch.x.clone()), ("z".to_string(), run.last_batch.z.clone())];
    w.write("pseudo.zskt", &encode_records(&batch, Precision::F64))?;
    metrics.push(kv("test_accuracy", accuracy(&run.student, test)?));
    metrics.push(kv("teacher_test_accuracy", accuracy(&teacher, test)?));
    metrics.push(kv("test_agreement", agreement(&run.student, &teacher, test.inputs())?));
    Ok(())
}

fn toy(inputs: &Inputs, cfg: &Config, seed: u64, data: &Data, w: &mut RunWriter, metrics: &mut Vec<(String, String)>) -> Result<()> {
    if !matches!(cfg.data, DataConfig::Blobs { .. }) {
        return Err(Error::Usage("toy needs planar data (data.kind = \"blobs\")".into()));
    }
    let teacher = match &inputs.teacher {
        Some(p) => load_network(p, cfg.teacher.as_ref())?,
        None => {
            let tc = baselines::TrainConfig { seed, ..cfg.train.clone() };
            baselines::train_scratch(&cfg.teacher_spec(), &data.train, None, &tc)?.0
        }
    };
    let bounds = data.train.bounding_box()?;
    let ring = Ring::around(bounds, cfg.toy.ring_scale);
    let tc = zskt_core::zeroshot::ToyConfig { seed, ..cfg.toy.clone() };
    let run = run_toy_direct(&teacher, &cfg.student_spec(), &ring, &tc, &WallClock(Instant::now()))?;
    let rows: Vec<TelemetryRow> = run.telemetry.records.iter().map(TelemetryRow::from).collect();
    let pts: Vec<[f64; 2]> = data.train.inputs().data().chunks(2).map(|p| [p[0], p[1]]).collect();
    w.write("teacher.zskt", &encode_network(&teacher, Precision::F64))?;
    w.write("student.zskt", &encode_network(&run.student, Precision::F64))?;
    w.write("telemetry.csv", &telemetry_csv(&rows, data.train.classes())?)?;
    w.write("trajectory.csv", &trajectory_csv(&run.points)?)?;
    w.write("data.csv", &points_csv(&pts, data.train.labels())?)?;
    metrics.push(kv("teacher_test_accuracy", accuracy(&teacher, &data.test)?));
    metrics.push(kv("student_test_accuracy", accuracy(&run.student, &data.test)?));
    metrics.push(kv("grid_agreement", grid_agreement(&teacher, &run.student, bounds, cfg.eval.grid)?));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn match_noise(
    cmd: Command,
    inputs: &Inputs,
    cfg: &Config,
    seed: u64,
    data: &Data,
    w: &mut RunWriter,
    metrics: &mut Vec<(String, String)>,
) -> Result<()> {
    let teacher = load_network(require(&inputs.teacher, "teacher", cmd)?, cfg.teacher.as_ref())?;
    let noise = match &data.norm {
        Some(norm) => noise_in_input_space(cfg.noise, norm)?,
        None => cfg.noise,
    };
    let nc = zskt_core::zeroshot::NoiseMatchConfig { seed, ..cfg.noise_match.clone() };
    let progress = Progress::new(inputs, cmd, seed, nc.steps);
    let (student, losses) = match_on_noise(&teacher, &cfg.student_spec(), noise, &nc, &mut |i, l| {
        progress.tick(i, || format!("step {} loss {l:.4}", i + 1))
    })?;
    let rows: Vec<TelemetryRow> = losses
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            Ok(TelemetryRow {
                iter: i,
                loss_g: None,
                loss_s: l,
                t_maxprob: None,
                s_maxprob: None,
                lr: zskt_core::optim::cosine_lr(i as f64, nc.steps.max(1) as f64, nc.lr)?,
                histogram: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    w.write("student.zskt", &encode_network(&student, Precision::F64))?;
    w.write("telemetry.csv", &telemetry_csv(&rows, data.test.classes())?)?;
    metrics.push(kv("test_accuracy", accuracy(&student, &data.test)?));
    metrics.push(kv("teacher_test_accuracy", accuracy(&teacher, &data.test)?));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn distill(
    cmd: Command,
    inputs: &Inputs,
    cfg: &Config,
    seed: u64,
    data: &Data,
    w: &mut RunWriter,
    metrics: &mut Vec<(String, String)>,
) -> Result<()> {
    let teacher = load_network(require(&inputs.teacher, "teacher", cmd)?, cfg.teacher.as_ref())?;
    let few = zskt_core::baselines::FewShotConfig { seed, ..cfg.few_shot };
    let tc = baselines::TrainConfig { seed, ..cfg.distill.clone() };
    let (student, report) = baselines::distill_kd_at(&teacher, &cfg.student_spec(), &data.train, &few, &cfg.kd, &tc)?;
    w.write("student.zskt", &encode_network(&student, Precision::F64))?;
    w.write("telemetry.csv", &telemetry_csv(&supervised_rows(&report.losses, &tc)?, data.train.classes())?)?;
    metrics.push(kv("per_class", few.per_class));
    metrics.push(kv("train_accuracy", report.train_accuracy));
    metrics.push(kv("test_accuracy", accuracy(&student, &data.test)?));
    metrics.push(kv("test_agreement", agreement(&student, &teacher, data.test.inputs())?));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finetune(
    cmd: Command,
    inputs: &Inputs,
    cfg: &Config,
    seed: u64,
    data: &Data,
    w: &mut RunWriter,
    metrics: &mut Vec<(String, String)>,
) -> Result<()> {
    let teacher = load_network(require(&inputs.teacher, "teacher", cmd)?, cfg.teacher.as_ref())?;
    let student = load_network(require(&inputs.student, "student", cmd)?, cfg.student.as_ref())?;
    let before = accuracy(&student, &data.test)?;
    let few = zskt_core::baselines::FewShotConfig { seed, ..cfg.few_shot };
    let tc = baselines::TrainConfig { seed, ..cfg.finetune.clone() };
    let (tuned, report) = baselines::finetune_few_shot(student, &teacher, &data.train, &few, &cfg.kd, &tc)?;
    w.write("student.zskt", &encode_network(&tuned, Precision::F64))?;
    w.write(
        "telemetry.csv",
        &telemetry_csv(&supervised_rows(&report.train.losses, &tc)?, data.train.classes())?,
    )?;
    metrics.push(kv("per_class", few.per_class));
    metrics.push(kv("subset_agreement_before", report.agreement_before));
    metrics.push(kv("subset_agreement_after", report.agreement_after));
    metrics.push(kv("test_accuracy_before", before));
    metrics.push(kv("test_accuracy", accuracy(&tuned, &data.test)?));
    metrics.push(kv("test_agreement", agreement(&tuned, &teacher, data.test.inputs())?));
    Ok(())
}

/// Network A is the teacher, B the student.
fn probe(cmd: Command, inputs: &Inputs, cfg: &Config, seed: u64, data: &Data, w: &mut RunWriter) -> Result<()> {
    let a = load_network(require(&inputs.teacher, "teacher", cmd)?, cfg.teacher.as_ref())?;
    let b = load_network(require(&inputs.student, "student", cmd)?, cfg.student.as_ref())?;
    let pc = zskt_core::probe::ProbeConfig { seed, ..cfg.probe.clone() };
    let result = transition_curves(&a, &b, &data.test, &pc)?;
    w.write("curves.csv", &curves_csv(&result.curves)?)?;
    let value = if result.curves.is_empty() {
        if !inputs.quiet {
            eprintln!("[probe seed {seed}] warning: the networks agree on none of the test images; mte is NaN");
        }
        f64::NAN
    } else {
        mte(&result.curves)?
    };
    w.write_kv(
        "mte.txt",
        &[
            kv("mte", value),
            kv("steps", pc.steps),
            kv("step_size", pc.step_size),
            kv("images_considered", result.images_considered),
            kv("agreeing", result.agreeing),
            kv("skipped", result.skipped),
            kv("curves", result.curves.len()),
        ],
    )
}

#[allow(clippy::too_many_arguments)]
fn audit(
    cmd: Command,
    inputs: &Inputs,
    cfg: &Config,
    seed: u64,
    data: &Data,
    w: &mut RunWriter,
    metrics: &mut Vec<(String, String)>,
) -> Result<()> {
    let net = load_network(require(&inputs.teacher, "teacher", cmd)?, cfg.teacher.as_ref())?;
    let norm = data
        .norm
        .as_ref()
        .ok_or_else(|| Error::Usage("noise-audit needs image data".into()))?;
    let a = noise_audit(&net, cfg.audit.images, (cfg.audit.pixel_low, cfg.audit.pixel_high), norm, seed)?;
    w.write("histogram.csv", &histogram_csv(&a)?)?;
    let (top, frac) = a
        .fractions
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (c, &f)| if f > best.1 { (c, f) } else { best });
    metrics.push(kv("entropy", a.entropy));
    metrics.push(kv("top_class", top));
    metrics.push(kv("top_fraction", frac));
    Ok(())
}
