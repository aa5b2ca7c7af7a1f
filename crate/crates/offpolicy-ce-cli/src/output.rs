//! Files written by a run. Everything except `timing.csv` is a pure function
//! of the config and seeds.
//!
//! * `resolved_config.json`: the config with defaults filled.
//! * `runs.csv`: one summary row per trial.
//! * `audit/trial-NNN.csv`: `j,objective,gamma,gamma_prev,threshold,updated,trace,mean_0..`.
//! * `evaluations.csv`: `trial,j,objective` for Ĵ at the reported mean.
//! * `aggregate.csv`: `series,j,count,mean,std` across trials by iteration,
//!   for the series `sample` (the sampled Ĵ), `gamma` and `reported`.
//! * `timing.csv`: `trial,j,elapsed_seconds` wall-clock trace.
//! * `plot.svg` (optional): mean ± std of one aggregate series.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use offpolicy_ce::ce::{AuditRow, StopReason};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::run::{RunRecord, TrialStatus};
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub trial: usize,
    pub seed: u64,
    pub status: TrialStatus,
    pub stop: Option<StopReason>,
    pub iterations: usize,
    pub updates: usize,
    pub objective_final: Option<f64>,
    pub objective_behaviour: Option<f64>,
    pub performance_scale: Option<f64>,
    /// Space-separated final parameter.
    pub w_final: String,
    pub error: Option<String>,
}

impl RunSummary {
    pub fn of(r: &RunRecord) -> Self {
        Self {
            trial: r.trial,
            seed: r.seed,
            status: r.status,
            stop: r.stop,
            iterations: r.rows.len(),
            updates: r.updates,
            objective_final: r.objective_final,
            objective_behaviour: r.objective_behaviour,
            performance_scale: r.performance_scale,
            w_final: join(&r.w_final),
            error: r.error.clone(),
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub series: String,
    pub j: usize,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate_series(name: &str, points: impl Iterator<Item = (usize, f64)>) -> Vec<AggregateRow> {
    let mut by_j: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (j, y) in points {
        by_j.entry(j).or_default().push(y);
    }
    by_j.into_iter()
        .map(|(j, ys)| {
            let (mean, std) = mean_std(&ys);
            AggregateRow {
                series: name.to_string(),
                j,
                count: ys.len(),
                mean,
                std,
            }
        })
        .collect()
}

/// Mean and std of each trace across trials, aligned by iteration index.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let audits: Vec<&[AuditRow]> = records.iter().map(|r| r.rows.as_slice()).collect();
    let evals = records.iter().flat_map(|r| r.evaluations.iter().copied());
    aggregate_parts(&audits, evals)
}

fn aggregate_parts(audits: &[&[AuditRow]], evals: impl Iterator<Item = (usize, f64)>) -> Vec<AggregateRow> {
    let rows = || audits.iter().flat_map(|a| a.iter());
    let mut out = aggregate_series("sample", rows().map(|row| (row.j, row.objective)));
    out.extend(aggregate_series("gamma", rows().map(|row| (row.j, row.gamma))));
    out.extend(aggregate_series("reported", evals));
    out
}

/// The aggregate recomputed from a run directory's audits and evaluations.
pub fn aggregate_rows_from(dir: &Path, audits: &[Vec<AuditRow>]) -> Result<Vec<AggregateRow>, CliError> {
    let evals: Vec<EvaluationRow> = read_rows(&dir.join("evaluations.csv"))?;
    let audits: Vec<&[AuditRow]> = audits.iter().map(|a| a.as_slice()).collect();
    Ok(aggregate_parts(&audits, evals.iter().map(|e| (e.j, e.objective))))
}

pub fn audit_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["j", "objective", "gamma", "gamma_prev", "threshold", "updated", "trace"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..dim).map(|i| format!("mean_{i}")));
    h
}

pub fn write_audit(path: &Path, dim: usize, rows: &[AuditRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(audit_header(dim))?;
    for r in rows {
        let mut rec = vec![
            r.j.to_string(),
            r.objective.to_string(),
            r.gamma.to_string(),
            r.gamma_prev.to_string(),
            r.threshold.to_string(),
            r.updated.to_string(),
            r.trace.to_string(),
        ];
        rec.extend(r.mean.iter().map(|m| m.to_string()));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T, CliError> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::Io(format!("{}: bad column {i} in {:?}", path.display(), rec)))
}

pub fn read_audit(path: &Path) -> Result<Vec<AuditRow>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = r.headers()?.len().saturating_sub(7);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(AuditRow {
            j: field(&rec, 0, path)?,
            objective: field(&rec, 1, path)?,
            gamma: field(&rec, 2, path)?,
            gamma_prev: field(&rec, 3, path)?,
            threshold: field(&rec, 4, path)?,
            updated: field(&rec, 5, path)?,
            trace: field(&rec, 6, path)?,
            mean: (0..dim).map(|i| field(&rec, 7 + i, path)).collect::<Result<_, _>>()?,
        });
    }
    Ok(rows)
}

pub fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub const RUNS_HEADER: &[&str] = &[
    "trial",
    "seed",
    "status",
    "stop",
    "iterations",
    "updates",
    "objective_final",
    "objective_behaviour",
    "performance_scale",
    "w_final",
    "error",
];
pub const AGGREGATE_HEADER: &[&str] = &["series", "j", "count", "mean", "std"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub trial: usize,
    pub j: usize,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TimingRow {
    trial: usize,
    j: usize,
    elapsed_seconds: f64,
}

pub fn audit_path(dir: &Path, trial: usize) -> PathBuf {
    dir.join("audit").join(format!("trial-{trial:03}.csv"))
}

/// Writes every output file of a run into `dir`.
pub fn emit_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    records: &[RunRecord],
    plot: Option<&str>,
) -> Result<(), CliError> {
    fs::create_dir_all(dir.join("audit"))
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let resolved = cfg.resolved();
    fs::write(dir.join("resolved_config.json"), serde_json::to_string_pretty(&resolved)? + "\n")?;

    let summaries: Vec<RunSummary> = records.iter().map(RunSummary::of).collect();
    write_rows(&dir.join("runs.csv"), RUNS_HEADER, &summaries)?;

    let dim = resolved.behaviour.len();
    for r in records {
        write_audit(&audit_path(dir, r.trial), dim, &r.rows)?;
    }

    let evals: Vec<EvaluationRow> = records
        .iter()
        .flat_map(|r| r.evaluations.iter().map(|&(j, objective)| EvaluationRow { trial: r.trial, j, objective }))
        .collect();
    write_rows(&dir.join("evaluations.csv"), &["trial", "j", "objective"], &evals)?;

    let agg = aggregate(records);
    write_rows(&dir.join("aggregate.csv"), AGGREGATE_HEADER, &agg)?;

    let timing: Vec<TimingRow> = records
        .iter()
        .flat_map(|r| {
            r.rows.iter().zip(&r.elapsed).map(|(row, &t)| TimingRow {
                trial: r.trial,
                j: row.j,
                elapsed_seconds: t,
            })
        })
        .collect();
    write_rows(&dir.join("timing.csv"), &["trial", "j", "elapsed_seconds"], &timing)?;

    if let Some(series) = plot {
        fs::write(dir.join("plot.svg"), svg_plot(&agg, series))?;
    }
    Ok(())
}

/// Summaries and audits read back from a run directory.
pub fn load_run(dir: &Path) -> Result<(Vec<RunSummary>, Vec<Vec<AuditRow>>), CliError> {
    let runs: Vec<RunSummary> = read_rows(&dir.join("runs.csv"))?;
    let audits = runs
        .iter()
        .map(|r| read_audit(&audit_path(dir, r.trial)))
        .collect::<Result<_, _>>()?;
    Ok((runs, audits))
}

/// A line plot of mean ± std for one aggregate series.
pub fn svg_plot(rows: &[AggregateRow], series: &str) -> String {
    let pts: Vec<&AggregateRow> = rows.iter().filter(|r| r.series == series).collect();
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{series}: mean \u{00b1} std over trials</text>\n"
    );
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let x_lo = pts[0].j as f64;
    let x_hi = (pts[pts.len() - 1].j as f64).max(x_lo + 1.0);
    let y_lo = pts.iter().map(|p| p.mean - p.std).fold(f64::INFINITY, f64::min);
    let mut y_hi = pts.iter().map(|p| p.mean + p.std).fold(f64::NEG_INFINITY, f64::max);
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let sx = |x: f64| pad + (x - x_lo) / (x_hi - x_lo) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y_lo) / (y_hi - y_lo) * (h - 2.0 * pad);
    let band: Vec<String> = pts
        .iter()
        .map(|p| format!("{:.2},{:.2}", sx(p.j as f64), sy(p.mean + p.std)))
        .chain(pts.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.j as f64), sy(p.mean - p.std))))
        .collect();
    let line: Vec<String> = pts
        .iter()
        .map(|p| format!("{:.2},{:.2}", sx(p.j as f64), sy(p.mean)))
        .collect();
    svg.push_str(&format!(
        "<polygon points=\"{}\" fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\"/>\n\
         <polyline points=\"{}\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\"/>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{pad}\" y=\"{tl}\" font-family=\"sans-serif\" font-size=\"11\">j = {x_lo}</text>\n\
         <text x=\"{r}\" y=\"{tl}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">j = {x_hi}</text>\n\
         <text x=\"4\" y=\"{b}\" font-family=\"sans-serif\" font-size=\"11\">{y_lo:.3e}</text>\n\
         <text x=\"4\" y=\"{pad}\" font-family=\"sans-serif\" font-size=\"11\">{y_hi:.3e}</text>\n</svg>\n",
        band.join(" "),
        line.join(" "),
        b = h - pad,
        r = w - pad,
        tl = h - pad + 16.0,
    ));
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_records_give_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("runs.csv");
        write_rows::<RunSummary>(&p, RUNS_HEADER, &[]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.trim_end(), RUNS_HEADER.join(","));
        assert!(read_rows::<RunSummary>(&p).unwrap().is_empty());
        assert!(aggregate(&[]).is_empty());
    }

    #[test]
    fn audit_round_trip() {
        let rows = vec![
            AuditRow {
                j: 0,
                objective: 0.1 + 0.2,
                gamma: -1e-300,
                gamma_prev: 0.0,
                threshold: 0.7,
                updated: true,
                mean: vec![1.0 / 3.0, -2.5e10],
                trace: 4.0,
            },
            AuditRow {
                j: 1,
                objective: f64::MIN_POSITIVE,
                gamma: 1.0,
                gamma_prev: 0.5,
                threshold: -0.25,
                updated: false,
                mean: vec![std::f64::consts::PI, 0.0],
                trace: 3.999999999999999,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_audit(&p, 2, &rows).unwrap();
        assert_eq!(read_audit(&p).unwrap(), rows);
    }

    #[test]
    fn plot_has_band_and_line() {
        let rows = vec![
            AggregateRow { series: "sample".into(), j: 0, count: 2, mean: 1.0, std: 0.5 },
            AggregateRow { series: "sample".into(), j: 1, count: 2, mean: 2.0, std: 0.1 },
        ];
        let svg = svg_plot(&rows, "sample");
        assert!(svg.contains("<polygon") && svg.contains("<polyline"));
    }
}
