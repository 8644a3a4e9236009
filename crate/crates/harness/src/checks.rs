//! Declared comparisons between run artifacts, predictions and thresholds.
//!
//! Checks read only what a run directory stores, so a report can be rebuilt
//! from disk at any time.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail};
use serde::{Deserialize, Serialize};

use crate::artifacts::RunArtifacts;
use crate::config::Experiment;
use crate::predict::PredictionOutput;

/// `averaged_balance` reads the run's averaged balance residual; any other
/// name is a diagnostics column read at the last recorded step.
pub type Metric = String;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// The metric ends below `max`.
    Below { run: String, metric: Metric, max: f64 },
    /// `metric(baseline) / metric(run) ≥ min`.
    RatioAbove { run: String, baseline: String, metric: Metric, min: f64 },
    /// Each column never decreases between recorded steps.
    NonDecreasing { run: String, columns: Vec<String> },
    /// Relative change of `column` over the baseline run is below `max`
    /// times the relative change over `run`.
    ChangeRatio { run: String, baseline: String, column: String, max: f64 },
    Divergence { run: String, expected: bool },
    /// `(max − min)/mean` of the terminal squared block norms, per run.
    LayerNormSpread { runs: Vec<String>, blocks: Vec<String>, max: f64 },
    /// Terminal squared block norms against a prediction value.
    LayerNormPrediction { runs: Vec<String>, blocks: Vec<String>, prediction: String, key: String, rel_tol: f64 },
    /// Terminal `‖num‖²/‖den‖²` along a sweep crosses 1 within `within`
    /// local grid spacings of `at`.
    SweepCrossing { variant: String, numerator: String, denominator: String, at: f64, within: f64 },
    /// Terminal `‖num‖²/‖den‖²` is monotone along a sweep.
    SweepMonotone { variant: String, numerator: String, denominator: String },
    /// `column` of the variant lies above the baseline's at some sweep points
    /// and below it at others.
    SweepStraddles { variant: String, baseline: String, column: String },
    /// `sgn(U_i W_i)` agrees across hidden units at the end of training.
    SignAligned { run: String },
    /// Every charge whose id starts with `prefix` shrinks in magnitude by at
    /// least `factor` from the first to the last record.
    ChargeDecay { run: String, prefix: String, factor: f64 },
}

impl CheckSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            CheckSpec::Below { .. } => "below",
            CheckSpec::RatioAbove { .. } => "ratio_above",
            CheckSpec::NonDecreasing { .. } => "non_decreasing",
            CheckSpec::ChangeRatio { .. } => "change_ratio",
            CheckSpec::Divergence { .. } => "divergence",
            CheckSpec::LayerNormSpread { .. } => "layer_norm_spread",
            CheckSpec::LayerNormPrediction { .. } => "layer_norm_prediction",
            CheckSpec::SweepCrossing { .. } => "sweep_crossing",
            CheckSpec::SweepMonotone { .. } => "sweep_monotone",
            CheckSpec::SweepStraddles { .. } => "sweep_straddles",
            CheckSpec::SignAligned { .. } => "sign_aligned",
            CheckSpec::ChargeDecay { .. } => "charge_decay",
        }
    }

    fn runs(&self) -> Vec<&str> {
        match self {
            CheckSpec::Below { run, .. }
            | CheckSpec::NonDecreasing { run, .. }
            | CheckSpec::Divergence { run, .. }
            | CheckSpec::SignAligned { run }
            | CheckSpec::ChargeDecay { run, .. } => vec![run],
            CheckSpec::RatioAbove { run, baseline, .. } | CheckSpec::ChangeRatio { run, baseline, .. } => {
                vec![run, baseline]
            }
            CheckSpec::LayerNormSpread { runs, .. } | CheckSpec::LayerNormPrediction { runs, .. } => {
                runs.iter().map(String::as_str).collect()
            }
            _ => Vec::new(),
        }
    }

    fn variants(&self) -> Vec<&str> {
        match self {
            CheckSpec::SweepCrossing { variant, .. } | CheckSpec::SweepMonotone { variant, .. } => vec![variant],
            CheckSpec::SweepStraddles { variant, baseline, .. } => vec![variant, baseline],
            _ => Vec::new(),
        }
    }

    pub fn validate(&self, exp: &Experiment) -> anyhow::Result<()> {
        for r in self.runs() {
            if exp.run(r).is_none() {
                bail!("unknown run {r:?}");
            }
        }
        for v in self.variants() {
            if exp.variant_runs(v).iter().all(|r| r.sweep_value.is_none()) {
                bail!("variant {v:?} is not swept");
            }
        }
        if let CheckSpec::LayerNormPrediction { prediction, .. } = self {
            if !exp.predictions.iter().any(|p| p.name() == prediction) {
                bail!("unknown prediction {prediction:?}");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub anchor: String,
    pub check: String,
    pub subject: String,
    pub measured: Option<f64>,
    pub threshold: Option<f64>,
    pub pass: bool,
    pub detail: String,
}

struct Ctx<'a> {
    anchor: &'a str,
    runs: &'a BTreeMap<String, RunArtifacts>,
    predictions: &'a [PredictionOutput],
    exp: &'a Experiment,
}

impl<'a> Ctx<'a> {
    fn run(&self, name: &str) -> anyhow::Result<&'a RunArtifacts> {
        self.runs.get(name).ok_or_else(|| anyhow!("run {name:?} has no artifacts"))
    }

    fn row(&self, check: &CheckSpec, subject: impl Into<String>, measured: Option<f64>, threshold: Option<f64>, pass: bool, detail: impl Into<String>) -> ComparisonRow {
        ComparisonRow {
            anchor: self.anchor.to_string(),
            check: check.kind().to_string(),
            subject: subject.into(),
            measured,
            threshold,
            pass,
            detail: detail.into(),
        }
    }

    fn metric(&self, run: &str, metric: &str) -> anyhow::Result<f64> {
        let r = self.run(run)?;
        if metric == "averaged_balance" {
            return r
                .manifest
                .summary
                .averaged_balance_residual
                .ok_or_else(|| anyhow!("run {run:?} recorded no averaged balance"));
        }
        r.diagnostics.last(metric)?.ok_or_else(|| anyhow!("run {run:?} has no value for {metric:?}"))
    }

    fn final_norm_sq(&self, run: &str, block: &str) -> anyhow::Result<f64> {
        let n = self.metric(run, &format!("norm_{block}"))?;
        Ok(n * n)
    }

    /// `(sweep value, run name)` in sweep order.
    fn sweep(&self, variant: &str) -> Vec<(f64, String)> {
        self.exp
            .variant_runs(variant)
            .into_iter()
            .filter_map(|r| r.sweep_value.map(|v| (v, r.name.clone())))
            .collect()
    }

    fn sweep_ratios(&self, variant: &str, num: &str, den: &str) -> anyhow::Result<Vec<(f64, f64)>> {
        self.sweep(variant)
            .into_iter()
            .map(|(v, r)| Ok((v, self.final_norm_sq(&r, num)? / self.final_norm_sq(&r, den)?)))
            .collect()
    }

    fn eval(&self, c: &CheckSpec) -> anyhow::Result<Vec<ComparisonRow>> {
        let mut rows = Vec::new();
        match c {
            CheckSpec::Below { run, metric, max } => {
                let m = self.metric(run, metric)?;
                rows.push(self.row(c, format!("{run}:{metric}"), Some(m), Some(*max), m < *max, ""));
            }
            CheckSpec::RatioAbove { run, baseline, metric, min } => {
                let (a, b) = (self.metric(run, metric)?, self.metric(baseline, metric)?);
                let ratio = b / a;
                rows.push(self.row(
                    c,
                    format!("{baseline}/{run}:{metric}"),
                    Some(ratio),
                    Some(*min),
                    ratio >= *min,
                    format!("{baseline}={b:.4e}, {run}={a:.4e}"),
                ));
            }
            CheckSpec::NonDecreasing { run, columns } => {
                let r = self.run(run)?;
                for col in columns {
                    let v = r.diagnostics.values(col)?;
                    let worst = v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
                    let steps = v.len().saturating_sub(1);
                    let pass = steps > 0 && worst >= 0.0;
                    rows.push(self.row(
                        c,
                        format!("{run}:{col}"),
                        Some(if steps > 0 { worst } else { f64::NAN }),
                        Some(0.0),
                        pass,
                        format!("smallest step-to-step change over {steps} recorded intervals"),
                    ));
                }
            }
            CheckSpec::ChangeRatio { run, baseline, column, max } => {
                let rel = |name: &str| -> anyhow::Result<f64> {
                    let v = self.run(name)?.diagnostics.values(column)?;
                    match (v.first(), v.last()) {
                        (Some(a), Some(b)) if *a != 0.0 => Ok(((b - a) / a).abs()),
                        _ => bail!("run {name:?}: column {column:?} has no usable values"),
                    }
                };
                let (a, b) = (rel(run)?, rel(baseline)?);
                let ratio = b / a;
                rows.push(self.row(
                    c,
                    format!("{baseline}/{run}:{column}"),
                    Some(ratio),
                    Some(*max),
                    ratio < *max,
                    format!("relative change {baseline}={b:.4e}, {run}={a:.4e}"),
                ));
            }
            CheckSpec::Divergence { run, expected } => {
                let r = self.run(run)?;
                let d = r.diverged();
                let detail = match &r.manifest.summary.divergence {
                    Some(dv) => format!("diverged at step {}: {}", dv.step, dv.reason),
                    None => format!("completed {} steps", r.manifest.summary.steps_completed),
                };
                rows.push(self.row(c, run.clone(), Some(d as u8 as f64), Some(*expected as u8 as f64), d == *expected, detail));
            }
            CheckSpec::LayerNormSpread { runs, blocks, max } => {
                for run in runs {
                    let n = blocks.iter().map(|b| self.final_norm_sq(run, b)).collect::<anyhow::Result<Vec<_>>>()?;
                    let (lo, hi) = n.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
                    let mean = n.iter().sum::<f64>() / n.len() as f64;
                    let spread = (hi - lo) / mean;
                    rows.push(self.row(c, run.clone(), Some(spread), Some(*max), spread < *max, format!("{blocks:?} = {n:.4?}")));
                }
            }
            CheckSpec::LayerNormPrediction { runs, blocks, prediction, key, rel_tol } => {
                let p = self
                    .predictions
                    .iter()
                    .find(|p| p.name == *prediction)
                    .ok_or_else(|| anyhow!("prediction {prediction:?} was not evaluated"))?;
                let want = *p.values.get(key).ok_or_else(|| anyhow!("prediction {prediction:?} has no {key:?}"))?;
                for run in runs {
                    for b in blocks {
                        let got = self.final_norm_sq(run, b)?;
                        let rel = (got - want).abs() / want.abs();
                        rows.push(self.row(
                            c,
                            format!("{run}:{b}"),
                            Some(rel),
                            Some(*rel_tol),
                            rel <= *rel_tol,
                            format!("‖{b}‖² = {got:.4}, predicted {want:.4}"),
                        ));
                    }
                }
            }
            CheckSpec::SweepCrossing { variant, numerator, denominator, at, within } => {
                let pts = self.sweep_ratios(variant, numerator, denominator)?;
                let mut best: Option<(f64, f64)> = None;
                for w in pts.windows(2) {
                    let ((v0, r0), (v1, r1)) = (w[0], w[1]);
                    if (r0 - 1.0) * (r1 - 1.0) <= 0.0 && r0 != r1 {
                        let vc = v0 + (1.0 - r0) * (v1 - v0) / (r1 - r0);
                        let dist = (vc - at).abs() / (v1 - v0).abs();
                        if best.is_none_or(|(_, d)| dist < d) {
                            best = Some((vc, dist));
                        }
                    }
                }
                let detail = format!("ratios {:?}", pts.iter().map(|(v, r)| format!("{v}:{r:.4}")).collect::<Vec<_>>());
                let (m, pass) = match best {
                    Some((vc, d)) => (Some(vc), d <= *within),
                    None => (None, false),
                };
                rows.push(self.row(c, format!("{variant}:{numerator}/{denominator}"), m, Some(*at), pass, detail));
            }
            CheckSpec::SweepMonotone { variant, numerator, denominator } => {
                let pts = self.sweep_ratios(variant, numerator, denominator)?;
                let d: Vec<f64> = pts.windows(2).map(|w| w[1].1 - w[0].1).collect();
                let pass = !d.is_empty() && (d.iter().all(|x| *x >= 0.0) || d.iter().all(|x| *x <= 0.0));
                let detail = format!("ratios {:?}", pts.iter().map(|(v, r)| format!("{v}:{r:.4}")).collect::<Vec<_>>());
                rows.push(self.row(c, format!("{variant}:{numerator}/{denominator}"), None, None, pass, detail));
            }
            CheckSpec::SweepStraddles { variant, baseline, column } => {
                let (a, b) = (self.sweep(variant), self.sweep(baseline));
                if a.len() != b.len() {
                    bail!("sweeps {variant:?} and {baseline:?} differ in length");
                }
                let mut diffs = Vec::new();
                for ((v, ra), (_, rb)) in a.iter().zip(&b) {
                    diffs.push((*v, self.metric(ra, column)? - self.metric(rb, column)?));
                }
                let above = diffs.iter().any(|(_, d)| *d > 0.0);
                let below = diffs.iter().any(|(_, d)| *d < 0.0);
                let detail = format!(
                    "{variant} − {baseline}: {:?}",
                    diffs.iter().map(|(v, d)| format!("{v}:{d:.4}")).collect::<Vec<_>>()
                );
                rows.push(self.row(c, format!("{variant}/{baseline}:{column}"), None, None, above && below, detail));
            }
            CheckSpec::SignAligned { run } => {
                let r = self.run(run)?;
                let (u, w) = (r.matrix("U", "terminal")?, r.matrix("W", "terminal")?);
                if u.nrows() != 1 || w.ncols() != 1 || u.ncols() != w.nrows() {
                    bail!("run {run:?}: sign alignment needs a rank-1 factorization");
                }
                let prods: Vec<f64> = (0..u.ncols()).map(|i| u[(0, i)] * w[(i, 0)]).collect();
                let pos = prods.iter().filter(|p| **p > 0.0).count();
                let neg = prods.iter().filter(|p| **p < 0.0).count();
                let pass = pos == prods.len() || neg == prods.len();
                rows.push(self.row(c, run.clone(), Some(pos.min(neg) as f64), Some(0.0), pass, format!("{pos} positive, {neg} negative unit products")));
            }
            CheckSpec::ChargeDecay { run, prefix, factor } => {
                let r = self.run(run)?;
                let ids: Vec<String> = r.charge_ids().into_iter().filter(|i| i.starts_with(prefix.as_str())).collect();
                if ids.is_empty() {
                    bail!("run {run:?} has no charges starting with {prefix:?}");
                }
                for id in ids {
                    let series: Vec<f64> = r.charges.iter().filter(|c| c.charge_id == id).map(|c| c.charge).collect();
                    let (first, last) = (series[0].abs(), series[series.len() - 1].abs());
                    let ratio = first / last;
                    rows.push(self.row(c, format!("{run}:{id}"), Some(ratio), Some(*factor), ratio >= *factor, format!("|C| {first:.4e} → {last:.4e}")));
                }
            }
        }
        Ok(rows)
    }
}

/// Evaluates every check of `exp`; a check that cannot be evaluated fails
/// with the reason in its detail.
pub fn evaluate(
    exp: &Experiment,
    runs: &BTreeMap<String, RunArtifacts>,
    predictions: &[PredictionOutput],
) -> Vec<ComparisonRow> {
    let ctx = Ctx { anchor: &exp.anchor, runs, predictions, exp };
    let mut rows = Vec::new();
    for r in &exp.runs {
        if let Some(a) = runs.get(&r.name) {
            let d = a.diverged();
            if d && !r.expect_divergence {
                rows.push(ctx.row(&CheckSpec::Divergence { run: r.name.clone(), expected: false }, r.name.clone(), Some(1.0), Some(0.0), false, "unexpected divergence"));
            }
        }
    }
    for c in &exp.checks {
        match ctx.eval(c) {
            Ok(mut r) => rows.append(&mut r),
            Err(e) => rows.push(ctx.row(c, "", None, None, false, format!("not evaluable: {e:#}"))),
        }
    }
    rows
}
