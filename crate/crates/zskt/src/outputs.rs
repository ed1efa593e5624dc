//! Run artifacts: CSV tables, key=value reports and the manifest.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use zskt_core::probe::{NoiseAudit, TransitionCurve};
use zskt_core::zeroshot::{PseudoPointSet, Record};

use crate::checkpoint::{hex, write_file};
use crate::error::{Error, Result};

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.to_string()))
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One telemetry row. Supervised runs leave the generator and
/// probability columns empty.
#[derive(Clone, Debug, PartialEq)]
pub struct TelemetryRow {
    pub iter: usize,
    pub loss_g: Option<f64>,
    pub loss_s: f64,
    pub t_maxprob: Option<f64>,
    pub s_maxprob: Option<f64>,
    pub lr: f64,
    pub histogram: Vec<usize>,
}

impl From<&Record> for TelemetryRow {
    fn from(r: &Record) -> Self {
        Self {
            iter: r.iter,
            loss_g: Some(r.loss_g),
            loss_s: r.loss_s,
            t_maxprob: Some(r.teacher_maxprob),
            s_maxprob: Some(r.student_maxprob),
            lr: r.lr,
            histogram: r.histogram.clone(),
        }
    }
}

pub fn telemetry_csv(rows: &[TelemetryRow], classes: usize) -> Result<Vec<u8>> {
    let mut header: Vec<String> = ["iter", "L_G", "L_S", "t_maxprob", "s_maxprob", "lr"].map(String::from).to_vec();
    header.extend((0..classes).map(|c| format!("class_{c}")));
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            let mut row = vec![
                r.iter.to_string(),
                cell(r.loss_g),
                r.loss_s.to_string(),
                cell(r.t_maxprob),
                cell(r.s_maxprob),
                r.lr.to_string(),
            ];
            row.extend((0..classes).map(|c| r.histogram.get(c).map(|n| n.to_string()).unwrap_or_default()));
            row
        }),
    )
}

pub fn trajectory_csv(points: &PseudoPointSet) -> Result<Vec<u8>> {
    let header = ["snapshot", "point_id", "x", "y"].map(String::from);
    csv_bytes(
        &header,
        points.snapshots.iter().flat_map(|(iter, t)| {
            t.data()
                .chunks(2)
                .enumerate()
                .map(move |(i, p)| vec![iter.to_string(), i.to_string(), p[0].to_string(), p[1].to_string()])
        }),
    )
}

/// Planar samples with labels, for plotting toy data.
pub fn points_csv(points: &[[f64; 2]], labels: &[usize]) -> Result<Vec<u8>> {
    let header = ["x", "y", "label"].map(String::from);
    csv_bytes(
        &header,
        points
            .iter()
            .zip(labels)
            .map(|(p, l)| vec![p[0].to_string(), p[1].to_string(), l.to_string()]),
    )
}

pub fn curves_csv(curves: &[TransitionCurve]) -> Result<Vec<u8>> {
    let header = ["image_id", "i", "j", "step", "p_j_A", "p_j_B"].map(String::from);
    csv_bytes(
        &header,
        curves.iter().flat_map(|c| {
            c.p_a.iter().zip(&c.p_b).enumerate().map(move |(k, (a, b))| {
                vec![
                    c.image_id.to_string(),
                    c.source.to_string(),
                    c.target.to_string(),
                    (k + 1).to_string(),
                    a.to_string(),
                    b.to_string(),
                ]
            })
        }),
    )
}

pub fn histogram_csv(audit: &NoiseAudit) -> Result<Vec<u8>> {
    let header = ["class", "count", "fraction"].map(String::from);
    csv_bytes(
        &header,
        audit
            .counts
            .iter()
            .zip(&audit.fractions)
            .enumerate()
            .map(|(c, (n, f))| vec![c.to_string(), n.to_string(), f.to_string()]),
    )
}

/// Rows of a CSV file as string maps keyed by header, for reports.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

/// `key=value` lines in the given order.
pub fn kv_text(pairs: &[(String, String)]) -> String {
    pairs.iter().fold(String::new(), |mut s, (k, v)| {
        let _ = writeln!(s, "{k}={v}");
        s
    })
}

pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("expected key=value, got {l:?}")))
        })
        .collect()
}

pub fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    parse_kv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// SHA-256 over git's blob framing (`"blob <len>\0"` + content).
pub fn content_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

/// Collects artifacts of one run and writes them with a manifest.
pub struct RunWriter<'a> {
    dir: &'a Path,
    digests: Vec<(String, String)>,
}

impl<'a> RunWriter<'a> {
    pub fn new(dir: &'a Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir, digests: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.dir.join(name), bytes)?;
        self.digests.push((name.to_string(), content_digest(bytes)));
        Ok(())
    }

    pub fn write_kv(&mut self, name: &str, pairs: &[(String, String)]) -> Result<()> {
        self.write(name, kv_text(pairs).as_bytes())
    }

    /// Write `manifest.txt` last. Wall time is the only field that varies
    /// between identical runs.
    pub fn finish(self, command: &str, seed: u64, config_echo: &str, wall_seconds: f64) -> Result<()> {
        let mut pairs = vec![
            ("command".to_string(), command.to_string()),
            ("seed".to_string(), seed.to_string()),
            ("config_digest".to_string(), content_digest(config_echo.as_bytes())),
        ];
        pairs.extend(self.digests.iter().map(|(n, d)| (format!("digest.{n}"), d.clone())));
        pairs.push(("wall_seconds".to_string(), format!("{wall_seconds:.3}")));
        let mut text = kv_text(&pairs);
        text.push_str("\n# config\n");
        text.extend(config_echo.lines().map(|l| format!("# {l}\n")));
        write_file(&self.dir.join("manifest.txt"), text.as_bytes())
    }
}

/// Shorthand for building `(key, value)` report lines.
pub fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}
