//! Command-line definition.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Command, Inputs};

#[derive(Debug, Parser)]
#[command(name = "zskt", version, about = "Data-free knowledge transfer experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Train a teacher with cross-entropy on the configured data.
    TrainTeacher(Common),
    /// Adversarial zero-shot transfer from --teacher.
    Zeroshot(Common),
    /// Planar toy run with directly optimized pseudo points.
    Toy(Common),
    /// Train a student to match --teacher on random noise.
    MatchNoise(Common),
    /// Few-shot distillation with KD+AT from --teacher.
    Distill(Common),
    /// Finetune --student on a few-shot subset with KD+AT from --teacher.
    Finetune(Common),
    /// Transition curves and MTE of --student against --teacher.
    Probe(Common),
    /// Class histogram of --teacher on uniform pixel noise.
    NoiseAudit(Common),
    /// Aggregate the seed directories under --out into a table and plots.
    Report(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; each seed writes to `seed-<n>/` below it.
    #[arg(long, default_value = "runs/latest")]
    pub out: PathBuf,
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long)]
    pub student: Option<PathBuf>,
    /// Directory with IDX files, overriding the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// No progress output.
    #[arg(long, short)]
    pub quiet: bool,
}

impl Sub {
    pub fn split(self) -> (Command, Inputs) {
        let (cmd, c) = match self {
            Sub::TrainTeacher(c) => (Command::TrainTeacher, c),
            Sub::Zeroshot(c) => (Command::ZeroShot, c),
            Sub::Toy(c) => (Command::Toy, c),
            Sub::MatchNoise(c) => (Command::MatchNoise, c),
            Sub::Distill(c) => (Command::Distill, c),
            Sub::Finetune(c) => (Command::Finetune, c),
            Sub::Probe(c) => (Command::Probe, c),
            Sub::NoiseAudit(c) => (Command::NoiseAudit, c),
            Sub::Report(c) => (Command::Report, c),
        };
        (
            cmd,
            Inputs {
                config: c.config,
                seed: c.seed,
                out: c.out,
                teacher: c.teacher,
                student: c.student,
                data: c.data,
                quiet: c.quiet,
            },
        )
    }
}
