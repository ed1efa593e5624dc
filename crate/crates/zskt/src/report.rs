//! Aggregate per-seed run directories into a table and plots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::outputs::{kv, kv_text, read_csv, read_kv};
use crate::plot::{chart, Series, Style};

/// Files holding scalar `key=value` results.
const METRIC_FILES: [&str; 2] = ["metrics.txt", "mte.txt"];

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub name: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); 0 for a single run.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Run directories under `root`, in name order; `root` itself counts when
/// it holds results directly.
pub fn run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let has_results = |d: &Path| METRIC_FILES.iter().any(|f| d.join(f).is_file());
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && has_results(p))
        .collect();
    dirs.sort();
    if has_results(root) {
        dirs.insert(0, root.to_path_buf());
    }
    if dirs.is_empty() {
        return Err(Error::Usage(format!("no run results under {}", root.display())));
    }
    Ok(dirs)
}

pub fn summarize(dirs: &[PathBuf]) -> Result<Vec<MetricSummary>> {
    let mut order = Vec::new();
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for d in dirs {
        for f in METRIC_FILES {
            let path = d.join(f);
            if !path.is_file() {
                continue;
            }
            for (k, v) in read_kv(&path)? {
                if let Ok(x) = v.parse::<f64>() {
                    if !values.contains_key(&k) {
                        order.push(k.clone());
                    }
                    values.entry(k).or_default().push(x);
                }
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|name| {
            let vals = values.remove(&name).unwrap_or_default();
            let (mean, std) = mean_std(&vals);
            MetricSummary {
                name,
                values: vals,
                mean,
                std,
            }
        })
        .collect())
}

fn column(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

fn run_label(d: &Path) -> String {
    d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn loss_plot(dirs: &[PathBuf], out: &Path) -> Result<bool> {
    let mut series = Vec::new();
    for d in dirs {
        let path = d.join("telemetry.csv");
        if !path.is_file() {
            continue;
        }
        let (header, rows) = read_csv(&path)?;
        let it = column(&header, "iter").unwrap_or(0);
        for name in ["L_S", "L_G"] {
            let Some(c) = column(&header, name) else { continue };
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| !r[c].is_empty())
                .map(|r| (num(&r[it]), num(&r[c])))
                .collect();
            if !points.is_empty() {
                series.push(Series {
                    label: format!("{} {name}", run_label(d)),
                    points,
                });
            }
        }
    }
    if series.is_empty() {
        return Ok(false);
    }
    chart(&out.join("losses.svg"), "Training losses", "iteration", "loss", &series, Style::Lines)?;
    Ok(true)
}

/// Mean transition curves pooled over all runs with ±2 standard errors.
fn transition_plot(dirs: &[PathBuf], out: &Path) -> Result<bool> {
    let mut per_step: BTreeMap<usize, [Vec<f64>; 2]> = BTreeMap::new();
    for d in dirs {
        let path = d.join("curves.csv");
        if !path.is_file() {
            continue;
        }
        let (header, rows) = read_csv(&path)?;
        let (Some(s), Some(a), Some(b)) = (column(&header, "step"), column(&header, "p_j_A"), column(&header, "p_j_B"))
        else {
            continue;
        };
        for r in rows {
            let e = per_step.entry(num(&r[s]) as usize).or_default();
            e[0].push(num(&r[a]));
            e[1].push(num(&r[b]));
        }
    }
    if per_step.is_empty() {
        return Ok(false);
    }
    let mut series = Vec::new();
    for (idx, name) in ["A (reference)", "B"].iter().enumerate() {
        let mut mean = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (step, vals) in &per_step {
            let (m, sd) = mean_std(&vals[idx]);
            let se = sd / (vals[idx].len() as f64).sqrt();
            let x = *step as f64;
            mean.push((x, m));
            lo.push((x, m - 2.0 * se));
            hi.push((x, m + 2.0 * se));
        }
        series.push(Series {
            label: format!("p_j {name}"),
            points: mean,
        });
        series.push(Series {
            label: format!("{name} -2se"),
            points: lo,
        });
        series.push(Series {
            label: format!("{name} +2se"),
            points: hi,
        });
    }
    chart(&out.join("transitions.svg"), "Transition curves", "step", "p_j", &series, Style::Lines)?;
    Ok(true)
}

fn trajectory_plot(dirs: &[PathBuf], out: &Path) -> Result<bool> {
    let Some(d) = dirs.iter().find(|d| d.join("trajectory.csv").is_file()) else {
        return Ok(false);
    };
    let mut series = Vec::new();
    let data = d.join("data.csv");
    if data.is_file() {
        let (_, rows) = read_csv(&data)?;
        let mut by_label: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in rows {
            by_label.entry(r[2].clone()).or_default().push((num(&r[0]), num(&r[1])));
        }
        series.extend(by_label.into_iter().map(|(l, points)| Series {
            label: format!("class {l}"),
            points,
        }));
    }
    let (_, rows) = read_csv(&d.join("trajectory.csv"))?;
    let snaps: Vec<usize> = {
        let mut s: Vec<usize> = rows.iter().map(|r| num(&r[0]) as usize).collect();
        s.dedup();
        s
    };
    for (name, snap) in [("pseudo start", snaps.first()), ("pseudo end", snaps.last())] {
        if let Some(&snap) = snap {
            series.push(Series {
                label: name.to_string(),
                points: rows
                    .iter()
                    .filter(|r| num(&r[0]) as usize == snap)
                    .map(|r| (num(&r[2]), num(&r[3])))
                    .collect(),
            });
        }
    }
    chart(
        &out.join("trajectory.svg"),
        &format!("Pseudo points ({})", run_label(d)),
        "x",
        "y",
        &series,
        Style::Dots,
    )?;
    Ok(true)
}

fn histogram_plot(dirs: &[PathBuf], out: &Path) -> Result<bool> {
    let mut series = Vec::new();
    for d in dirs {
        let path = d.join("histogram.csv");
        if path.is_file() {
            let (_, rows) = read_csv(&path)?;
            series.push(Series {
                label: run_label(d),
                points: rows.iter().map(|r| (num(&r[0]), num(&r[2]))).collect(),
            });
        }
    }
    if series.is_empty() {
        return Ok(false);
    }
    chart(&out.join("histogram.svg"), "Predicted classes on noise", "class", "fraction", &series, Style::Lines)?;
    Ok(true)
}

/// Write `report.md`, `summary.txt` and whichever plots the runs support.
/// Returns the names of the files written.
pub fn build_report(root: &Path) -> Result<Vec<String>> {
    let dirs = run_dirs(root)?;
    let metrics = summarize(&dirs)?;
    let mut md = format!(
        "# Report\n\nRuns: {}\n\n| metric | mean | std | n | values |\n|---|---|---|---|---|\n",
        dirs.iter().map(|d| run_label(d)).collect::<Vec<_>>().join(", ")
    );
    let mut pairs = vec![kv("runs", dirs.len())];
    for m in &metrics {
        let vals: Vec<String> = m.values.iter().map(|v| format!("{v:.6}")).collect();
        md.push_str(&format!(
            "| {} | {:.6} | {:.6} | {} | {} |\n",
            m.name,
            m.mean,
            m.std,
            m.values.len(),
            vals.join(", ")
        ));
        pairs.push(kv(&format!("{}.mean", m.name), m.mean));
        pairs.push(kv(&format!("{}.std", m.name), m.std));
        pairs.push(kv(&format!("{}.n", m.name), m.values.len()));
    }
    let mut written = vec!["report.md".to_string(), "summary.txt".to_string()];
    for (name, made) in [
        ("losses.svg", loss_plot(&dirs, root)?),
        ("transitions.svg", transition_plot(&dirs, root)?),
        ("trajectory.svg", trajectory_plot(&dirs, root)?),
        ("histogram.svg", histogram_plot(&dirs, root)?),
    ] {
        if made {
            md.push_str(&format!("\n![{name}]({name})\n"));
            written.push(name.to_string());
        }
    }
    crate::checkpoint::write_file(&root.join("report.md"), md.as_bytes())?;
    crate::checkpoint::write_file(&root.join("summary.txt"), kv_text(&pairs).as_bytes())?;
    Ok(written)
}
