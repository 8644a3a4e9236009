//! Runs an experiment into its output directory and rebuilds reports from disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use nalgebra::DMatrix;
use noise_lab_core::optim::{run, NamedMatrix, RunRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    read_json, write_json, write_run, RunArtifacts, RunManifest, EXPERIMENT_FILE, MANIFEST_FILE, PREDICTIONS_FILE,
    REPORT_FILE,
};
use crate::checks::{evaluate, ComparisonRow};
use crate::config::{Experiment, ResolvedRun};
use crate::predict::{run_predictions, PredictionOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLine {
    pub run: String,
    pub variant: String,
    pub sweep_value: Option<f64>,
    pub steps_completed: usize,
    pub diverged: bool,
    pub expect_divergence: bool,
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub anchor: String,
    pub scaled: Option<String>,
    pub runs: Vec<RunLine>,
    pub rows: Vec<ComparisonRow>,
    pub pass: bool,
}

impl ExperimentReport {
    pub fn failures(&self) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().filter(|r| !r.pass)
    }
}

pub fn experiment_dir(out_root: &Path, exp: &Experiment) -> PathBuf {
    out_root.join(&exp.id)
}

/// `WΣ̄_xWᵀ` and `UᵀΣ̄_εU` with `Σ̄ = Σ/TrΣ`, for two-layer models.
fn latent_matrices(r: &ResolvedRun, rec: &RunRecord) -> Vec<NamedMatrix> {
    let Ok(p) = rec.terminal_params() else { return Vec::new() };
    let (Ok(u), Ok(w)) = (p.get("U"), p.get("W")) else { return Vec::new() };
    let sx: DMatrix<f64> = r.config.data.sigma_x();
    let se: DMatrix<f64> = r.config.data.sigma_eps();
    if sx.trace() <= 0.0 || se.trace() <= 0.0 {
        return Vec::new();
    }
    let lhs = w * (&sx / sx.trace()) * w.transpose();
    let rhs = u.transpose() * (&se / se.trace()) * u;
    vec![NamedMatrix::from_matrix("latent_input", &lhs), NamedMatrix::from_matrix("latent_output", &rhs)]
}

fn manifest(exp: &Experiment, r: &ResolvedRun, rec: &RunRecord) -> RunManifest {
    RunManifest {
        experiment: exp.id.clone(),
        anchor: exp.anchor.clone(),
        scaled: exp.scaled.clone(),
        run: r.name.clone(),
        variant: r.variant.clone(),
        sweep_axis: exp.sweep.as_ref().filter(|_| r.sweep_value.is_some()).map(|(a, _)| {
            serde_json::to_value(a).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
        }),
        sweep_value: r.sweep_value,
        expect_divergence: r.expect_divergence,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: r.config.clone(),
        summary: rec.summary(),
        files: Vec::new(),
    }
}

/// Trains every run (in parallel across runs), evaluates predictions,
/// writes all artifacts and the report.
pub fn execute(exp: &Experiment, out_root: &Path) -> anyhow::Result<ExperimentReport> {
    let dir = experiment_dir(out_root, exp);
    write_json(&dir.join(EXPERIMENT_FILE), exp)?;
    run_predictions(exp, &dir)?;
    let records: Vec<RunRecord> = exp
        .runs
        .par_iter()
        .map(|r| run::<f64>(&r.config).with_context(|| format!("run {:?}", r.name)))
        .collect::<anyhow::Result<_>>()?;
    for (r, rec) in exp.runs.iter().zip(&records) {
        write_run(&dir.join(&r.name), rec, manifest(exp, r, rec), &latent_matrices(r, rec))?;
    }
    build_report(&dir)
}

/// Predictions only, written into the experiment directory.
pub fn predict_only(exp: &Experiment, out_root: &Path) -> anyhow::Result<Vec<PredictionOutput>> {
    let dir = experiment_dir(out_root, exp);
    write_json(&dir.join(EXPERIMENT_FILE), exp)?;
    run_predictions(exp, &dir)
}

/// Rebuilds the report of an experiment directory, or summarizes a lone run
/// directory, and writes `report.json` next to the inputs.
pub fn build_report(dir: &Path) -> anyhow::Result<ExperimentReport> {
    let report = if dir.join(EXPERIMENT_FILE).exists() {
        let exp: Experiment = read_json(&dir.join(EXPERIMENT_FILE))?;
        let predictions: Vec<PredictionOutput> = if dir.join(PREDICTIONS_FILE).exists() {
            read_json(&dir.join(PREDICTIONS_FILE))?
        } else {
            Vec::new()
        };
        let mut runs = BTreeMap::new();
        for r in &exp.runs {
            let d = dir.join(&r.name);
            if d.join(MANIFEST_FILE).exists() {
                runs.insert(r.name.clone(), RunArtifacts::load(&d)?);
            }
        }
        let rows = evaluate(&exp, &runs, &predictions);
        let lines = exp.runs.iter().filter_map(|r| runs.get(&r.name)).map(run_line).collect();
        ExperimentReport {
            pass: rows.iter().all(|r| r.pass),
            experiment: exp.id,
            anchor: exp.anchor,
            scaled: exp.scaled,
            runs: lines,
            rows,
        }
    } else if dir.join(MANIFEST_FILE).exists() {
        let a = RunArtifacts::load(dir)?;
        let m = &a.manifest;
        ExperimentReport {
            experiment: m.experiment.clone(),
            anchor: m.anchor.clone(),
            scaled: m.scaled.clone(),
            pass: !a.diverged() || m.expect_divergence,
            runs: vec![run_line(&a)],
            rows: Vec::new(),
        }
    } else {
        anyhow::bail!("{} holds neither {EXPERIMENT_FILE} nor {MANIFEST_FILE}", dir.display());
    };
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

fn run_line(a: &RunArtifacts) -> RunLine {
    let m = &a.manifest;
    RunLine {
        run: m.run.clone(),
        variant: m.variant.clone(),
        sweep_value: m.sweep_value,
        steps_completed: m.summary.steps_completed,
        diverged: m.summary.diverged,
        expect_divergence: m.expect_divergence,
        final_loss: m.summary.final_row.as_ref().map(|r| r.loss),
    }
}

fn num(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into())
}

pub fn render(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "== {} ({})", report.experiment, report.anchor);
    if let Some(sc) = &report.scaled {
        let _ = writeln!(s, "   scaled: {sc}");
    }
    for r in &report.runs {
        let status = if r.diverged { "diverged" } else { "completed" };
        let _ = writeln!(s, "   run {:<20} {status} {} steps, final loss {}", r.run, r.steps_completed, num(r.final_loss));
    }
    for r in &report.rows {
        let _ = writeln!(
            s,
            "   {} {:<22} {:<34} measured {:<11} threshold {:<11} {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.check,
            r.subject,
            num(r.measured),
            num(r.threshold),
            r.detail
        );
    }
    s
}
