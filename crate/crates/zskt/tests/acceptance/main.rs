//! Acceptance suite. Prints one line per criterion:
//!
//! ```text
//! PASS C1 gradient suite (...) | details
//! ```
//!
//! Structural criteria gate the exit status. The three long digit
//! experiments (C4, C5, C7) report PASS/FAIL without failing the process,
//! since their outcome depends on how far desk-scale training gets.
//! Set `ZSKT_ACCEPTANCE_SKIP_DIGITS=1` to skip those experiments.

mod digits;
mod formats;
mod gradients;
mod identities;
mod probe;
mod toy;

use std::path::PathBuf;
use std::time::Instant;

pub enum Status {
    Pass,
    Fail,
    Skip,
}

pub struct Outcome {
    pub id: &'static str,
    pub title: String,
    pub status: Status,
    /// Whether a failure fails the suite.
    pub gating: bool,
    pub detail: String,
}

impl Outcome {
    pub fn gate(id: &'static str, title: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            id,
            title: title.into(),
            status: if pass { Status::Pass } else { Status::Fail },
            gating: true,
            detail: detail.into(),
        }
    }

    pub fn report(id: &'static str, title: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            gating: false,
            ..Self::gate(id, title, pass, detail)
        }
    }

    pub fn skip(id: &'static str, title: impl Into<String>, why: impl Into<String>) -> Self {
        Self {
            id,
            title: title.into(),
            status: Status::Skip,
            gating: false,
            detail: why.into(),
        }
    }

    fn print(&self) {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail if self.gating => "FAIL",
            Status::Fail => "FAIL (report-only)",
            Status::Skip => "SKIP",
        };
        println!("{tag} {} {} | {}", self.id, self.title, self.detail);
    }
}

/// Workspace root, for configs and data.
pub fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Scratch directory for run outputs, wiped per section.
pub fn scratch(name: &str) -> PathBuf {
    let dir = workspace().join("target/acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

type Section = (&'static str, fn() -> zskt::Result<Vec<Outcome>>);

fn main() {
    let skip_digits = std::env::var("ZSKT_ACCEPTANCE_SKIP_DIGITS").is_ok_and(|v| !v.is_empty() && v != "0");
    let sections: [Section; 6] = [
        ("C1", || gradients::run().map_err(Into::into)),
        ("C2", || identities::run().map_err(Into::into)),
        ("C3", toy::run),
        ("C6", probe::run),
        ("C8-C9", formats::run),
        ("C4-C5-C7", digits::run),
    ];
    let mut failed = 0;
    for (name, run) in sections {
        if name == "C4-C5-C7" && skip_digits {
            for (id, title) in digits::TITLES {
                Outcome::skip(id, title, "ZSKT_ACCEPTANCE_SKIP_DIGITS is set").print();
            }
            continue;
        }
        let start = Instant::now();
        match run() {
            Ok(outcomes) => {
                for o in &outcomes {
                    o.print();
                    if o.gating && matches!(o.status, Status::Fail) {
                        failed += 1;
                    }
                }
            }
            Err(e) => {
                println!("FAIL {name} error[{}]: {e}", e.class());
                failed += 1;
            }
        }
        eprintln!("[acceptance] {name} took {:.1}s", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        std::process::exit(1);
    }
    println!("all gating criteria passed");
}
