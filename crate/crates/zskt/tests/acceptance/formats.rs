//! Repeatability of every command and the file-format guards.

#[path = "../common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};

use zskt::checkpoint::{
    decode_network, decode_records, encode_network, encode_records, load_network, network_records, Precision,
    DIGEST_RECORD,
};
use zskt::commands::{execute, seed_dir, Command, Inputs};
use zskt::datasets::{idx_paths, read_maybe_gz};
use zskt_core::data::{dataset_from_idx, encode_idx, Split};
use zskt_core::nn::{GeneratorSpec, Network};
use zskt_core::Tensor;

use crate::{scratch, Outcome};

fn run_twice(
    cmd: Command,
    config: &Path,
    root: &Path,
    teacher: Option<PathBuf>,
    student: Option<PathBuf>,
) -> zskt::Result<(usize, Vec<String>)> {
    let dirs = [root.join(format!("{}-a", cmd.name())), root.join(format!("{}-b", cmd.name()))];
    for out in &dirs {
        execute(
            cmd,
            &Inputs {
                config: Some(config.to_path_buf()),
                out: out.clone(),
                teacher: teacher.clone(),
                student: student.clone(),
                quiet: true,
                ..Inputs::default()
            },
        )?;
    }
    Ok(common::tree_differences(&dirs[0], &dirs[1]))
}

fn determinism() -> zskt::Result<Outcome> {
    let root = scratch("determinism");
    let digits = common::write_config(&root, "digits.toml", &common::tiny_digits_toml(&common::digits_dir()));
    let blobs = common::write_config(&root, "blobs.toml", common::TINY_BLOBS_TOML);
    let mut compared = 0;
    let mut diffs = Vec::new();
    let mut note = |cmd: Command, r: (usize, Vec<String>)| {
        compared += r.0;
        diffs.extend(r.1.into_iter().map(|d| format!("{}:{d}", cmd.name())));
    };

    note(Command::TrainTeacher, run_twice(Command::TrainTeacher, &digits, &root, None, None)?);
    let teacher = seed_dir(&root.join("train-teacher-a"), 3).join("teacher.zskt");
    note(Command::ZeroShot, run_twice(Command::ZeroShot, &digits, &root, Some(teacher.clone()), None)?);
    let student = seed_dir(&root.join("zeroshot-a"), 3).join("student.zskt");
    for cmd in [Command::MatchNoise, Command::Distill, Command::NoiseAudit] {
        note(cmd, run_twice(cmd, &digits, &root, Some(teacher.clone()), None)?);
    }
    for cmd in [Command::Finetune, Command::Probe] {
        note(cmd, run_twice(cmd, &digits, &root, Some(teacher.clone()), Some(student.clone()))?);
    }
    note(Command::Toy, run_twice(Command::Toy, &blobs, &root, None, None)?);

    Ok(Outcome::gate(
        "C8",
        "determinism: repeated commands give byte-identical checkpoints and CSVs",
        diffs.is_empty() && compared > 0,
        if diffs.is_empty() {
            format!("8 commands, {compared} files compared, wall time excluded from manifests")
        } else {
            format!("differing files: {}", diffs.join(", "))
        },
    ))
}

/// Expect `result` to fail with error class `want`.
fn expect_class<T>(label: &str, result: zskt::Result<T>, want: &str, failures: &mut Vec<String>) {
    match result {
        Ok(_) => failures.push(format!("{label}: accepted")),
        Err(e) if e.class() != want => failures.push(format!("{label}: {} instead of {want}", e.class())),
        Err(_) => {}
    }
}

fn core<T>(r: zskt_core::Result<T>) -> zskt::Result<T> {
    r.map_err(Into::into)
}

fn same_bits(a: &[(String, Tensor)], b: &[(String, Tensor)]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((na, ta), (nb, tb))| {
            na == nb
                && ta.shape() == tb.shape()
                && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

fn guards() -> zskt::Result<Outcome> {
    let mut failures = Vec::new();
    let mut checks = 0;

    // IDX guards on the real test split
    let [_, _, images_path, labels_path] = idx_paths(&common::digits_dir())?;
    let images = read_maybe_gz(&images_path)?;
    let labels = read_maybe_gz(&labels_path)?;
    let mut bad = images.clone();
    bad[3] ^= 0xff;
    expect_class("idx bad magic", core(dataset_from_idx(&bad, &labels, Split::Test)), "bad-magic", &mut failures);
    expect_class(
        "idx swapped files",
        core(dataset_from_idx(&labels, &images, Split::Test)),
        "bad-magic",
        &mut failures,
    );
    expect_class(
        "idx truncated header",
        core(dataset_from_idx(&images[..10], &labels, Split::Test)),
        "truncated",
        &mut failures,
    );
    expect_class(
        "idx truncated pixels",
        core(dataset_from_idx(&images[..images.len() - 1], &labels, Split::Test)),
        "truncated",
        &mut failures,
    );
    expect_class(
        "idx truncated labels",
        core(dataset_from_idx(&images, &labels[..labels.len() - 1], Split::Test)),
        "truncated",
        &mut failures,
    );
    let mut short = labels.clone();
    let n = u32::from_be_bytes([short[4], short[5], short[6], short[7]]) - 1;
    short[4..8].copy_from_slice(&n.to_be_bytes());
    short.pop();
    expect_class(
        "idx count mismatch",
        core(dataset_from_idx(&images, &short, Split::Test)),
        "count-mismatch",
        &mut failures,
    );
    checks += 6;
    let ds = core(dataset_from_idx(&images, &labels, Split::Test))?;
    let (ei, el) = core(encode_idx(&ds))?;
    if ei != images || el != labels {
        failures.push("idx round trip changed bytes".into());
    }
    checks += 1;

    // checkpoint guards
    let conv = zskt::config::digit_student();
    let net = core(Network::build(&conv, 11))?;
    let bytes = encode_network(&net, Precision::F64);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    expect_class("checkpoint bad magic", decode_network(&bad, None), "bad-magic", &mut failures);
    let mut bad = bytes.clone();
    bad[4] = 9;
    expect_class("checkpoint version", decode_network(&bad, None), "version-mismatch", &mut failures);
    for cut in [8, 20, bytes.len() / 2, bytes.len() - 1] {
        expect_class(
            &format!("checkpoint cut at {cut}"),
            decode_network(&bytes[..cut], None),
            "truncated",
            &mut failures,
        );
    }
    let mut records = decode_records(&bytes)?;
    if let Some((_, t)) = records.iter_mut().find(|(n, _)| n == DIGEST_RECORD) {
        t.data_mut()[0] = (t.data()[0] + 1.0) % 256.0;
    }
    expect_class(
        "checkpoint digest",
        decode_network(&encode_records(&records, Precision::F64), None),
        "spec-digest-mismatch",
        &mut failures,
    );
    checks += 7;

    // bit-identical round trips: random conv, generator, and a trained teacher
    let generator = core(Network::generator(&GeneratorSpec::new(16, [1, 28, 28]), 5))?;
    let trained = scratch("roundtrip-teacher");
    execute(
        Command::TrainTeacher,
        &Inputs {
            config: Some(common::write_config(
                &trained,
                "c.toml",
                &common::tiny_digits_toml(&common::digits_dir()),
            )),
            out: trained.clone(),
            quiet: true,
            ..Inputs::default()
        },
    )?;
    let trained_path = seed_dir(&trained, 3).join("teacher.zskt");
    let teacher = load_network(&trained_path, None)?;
    for (label, n) in [("conv", &net), ("generator", &generator), ("trained teacher", &teacher)] {
        let encoded = encode_network(n, Precision::F64);
        let back = decode_network(&encoded, Some(n.spec()))?;
        if !same_bits(&network_records(n), &network_records(&back)) || encode_network(&back, Precision::F64) != encoded {
            failures.push(format!("{label} round trip not bit-identical"));
        }
        checks += 1;
    }
    if encode_network(&teacher, Precision::F64) != std::fs::read(&trained_path).map_err(|e| zskt::Error::io(&trained_path, e))? {
        failures.push("re-encoding a saved teacher changed its bytes".into());
    }
    checks += 1;

    Ok(Outcome::gate(
        "C9",
        "format guards reject corrupt IDX and checkpoints with their error classes; round trips bit-identical",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checks} checks")
        } else {
            failures.join("; ")
        },
    ))
}

pub fn run() -> zskt::Result<Vec<Outcome>> {
    Ok(vec![determinism()?, guards()?])
}
