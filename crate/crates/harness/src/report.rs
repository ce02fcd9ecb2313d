//! Cross-run comparison tables from finished run directories.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::metrics::relative_objective;
use crate::HarnessError;

/// Mean evaluation figures of one run and phase.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub run: PathBuf,
    pub method: String,
    pub agent: String,
    pub phase: String,
    pub objective_absolute: f64,
    pub objective_relative: Option<f64>,
    pub constraint_nmae: f64,
    pub constraint_nsum: f64,
    pub train_step_mean_s: Option<f64>,
}

struct MeanRow {
    phase: String,
    objective: f64,
    nmae: f64,
    nsum: f64,
}

fn read_means(dir: &Path) -> Result<Vec<MeanRow>, HarnessError> {
    let mut r = csv::Reader::from_path(dir.join("eval_report.csv"))?;
    let h = r.headers()?.clone();
    let col = |name: &str| h.iter().position(|c| c == name).ok_or_else(|| HarnessError::Report(format!("{}: missing column {name}", dir.display())));
    let (seed, phase, obj, nmae, nsum) = (col("seed")?, col("phase")?, col("objective_absolute")?, col("constraint_nmae")?, col("constraint_nsum")?);
    let num = |s: &str| s.parse::<f64>().map_err(|e| HarnessError::Report(format!("{}: {e}", dir.display())));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if &rec[seed] == "mean" {
            out.push(MeanRow { phase: rec[phase].to_string(), objective: num(&rec[obj])?, nmae: num(&rec[nmae])?, nsum: num(&rec[nsum])? });
        }
    }
    Ok(out)
}

fn mean_train_step(dir: &Path) -> Result<Option<f64>, HarnessError> {
    let path = dir.join("runtime.csv");
    if !path.exists() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path)?;
    let (mut total, mut steps) = (0.0, 0usize);
    for rec in r.records() {
        let rec = rec?;
        if &rec[2] == "train" {
            steps += rec[3].parse::<usize>().unwrap_or(0);
            total += rec[8].parse::<f64>().unwrap_or(0.0);
        }
    }
    Ok((steps > 0).then(|| total / steps as f64))
}

/// Final mean objective of a reference run.
pub fn reference_objective(dir: &Path) -> Result<f64, HarnessError> {
    read_means(dir)?
        .into_iter()
        .find(|m| m.phase == "final")
        .map(|m| m.objective)
        .ok_or_else(|| HarnessError::Report(format!("{}: no final mean row", dir.display())))
}

/// One row per run and phase; relative objectives use the reference run's
/// final mean objective for both phases.
pub fn build_report(runs: &[PathBuf], reference: Option<&Path>) -> Result<Vec<ReportRow>, HarnessError> {
    let reference = reference.map(reference_objective).transpose()?;
    let mut rows = Vec::new();
    for dir in runs {
        let cfg = RunConfig::load(&dir.join("config.toml"))?;
        let step = mean_train_step(dir)?;
        for m in read_means(dir)? {
            rows.push(ReportRow {
                run: dir.clone(),
                method: cfg.run.method.name().to_string(),
                agent: cfg.run.agent.name().to_string(),
                phase: m.phase,
                objective_absolute: m.objective,
                objective_relative: reference.and_then(|r| relative_objective(m.objective, r)),
                constraint_nmae: m.nmae,
                constraint_nsum: m.nsum,
                train_step_mean_s: step,
            });
        }
    }
    Ok(rows)
}

pub fn write_report<W: Write>(rows: &[ReportRow], w: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["run", "method", "agent", "phase", "objective_absolute", "objective_relative", "constraint_nmae", "constraint_nsum", "train_step_mean_s"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.run.display().to_string(),
            r.method.clone(),
            r.agent.clone(),
            r.phase.clone(),
            r.objective_absolute.to_string(),
            opt(r.objective_relative),
            r.constraint_nmae.to_string(),
            r.constraint_nsum.to_string(),
            opt(r.train_step_mean_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}
