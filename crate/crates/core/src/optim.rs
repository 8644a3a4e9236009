//! Discrete GD and minibatch SGD with weight decay, learning-rate schedules
//! and per-cadence diagnostics.
//!
//! Time is `t = Σ_k η_k`. Batches are drawn uniformly with replacement from
//! the run's own random stream.

use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_dataset, DataSpec, Dataset, InputCov, Teacher};
use crate::equilibria::{balance_matrices, gamma_pair, global_min_balance_residual, normalized_difference, sharpness};
use crate::error::{Error, Result};
use crate::models::{InitScheme, ModelSpec};
use crate::params::ParamBlocks;
use crate::rng::{self, Stream, RNG_NAME};
use crate::scalar::{lit, to_f64, Float};
use crate::symmetry::{SymmetryDescriptor, SymmetryKind};

/// Any non-finite entry or a squared parameter norm above this ends a run.
pub const DIVERGENCE_NORM_SQ: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gd,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { eta: f64 },
    /// `start` before step `switch`, `end` from then on.
    Step { start: f64, end: f64, switch: usize },
    /// Linear ramp from `start` to `end` over the first `ramp` steps.
    Linear { start: f64, end: f64, ramp: usize },
}

impl LrSchedule {
    pub fn eta_at(&self, step: usize) -> f64 {
        match self {
            LrSchedule::Constant { eta } => *eta,
            LrSchedule::Step { start, end, switch } => {
                if step < *switch {
                    *start
                } else {
                    *end
                }
            }
            LrSchedule::Linear { start, end, ramp } => {
                if step >= *ramp {
                    *end
                } else {
                    start + (end - start) * step as f64 / *ramp as f64
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        match self {
            LrSchedule::Constant { eta } if ok(*eta) => Ok(()),
            LrSchedule::Step { start, end, .. } | LrSchedule::Linear { start, end, .. }
                if ok(*start) && ok(*end) && start <= end =>
            {
                Ok(())
            }
            _ => Err(Error::Config(
                "optim.lr: learning rates must be positive and the warmup start must not exceed its end".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticSet {
    /// Charges of the run's symmetries.
    pub charges: bool,
    /// Predicted flow `G` from the full-dataset noise at each record.
    pub flow: bool,
    /// Fixed point `λ*` of the flow at each record; implies `flow`.
    pub lambda_star: bool,
    /// Sharpness trace of a two-layer linear model.
    pub sharpness: bool,
    /// Balance residuals of a two-layer model.
    pub balance: bool,
    /// First step whose balance matrices enter the running average.
    pub average_from: Option<usize>,
}

impl Default for DiagnosticSet {
    fn default() -> Self {
        Self { charges: true, flow: false, lambda_star: false, sharpness: false, balance: false, average_from: None }
    }
}

fn default_cadence() -> usize {
    10
}

fn default_window() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub algorithm: Algorithm,
    pub lr: LrSchedule,
    /// Minibatch size; ignored by GD.
    pub batch: usize,
    #[serde(default)]
    pub gamma: f64,
    pub steps: usize,
    pub seed: u64,
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    /// Recorded points in the least-squares window for the measured `dC/dt`.
    #[serde(default = "default_window")]
    pub dcdt_window: usize,
    #[serde(default)]
    pub diagnostics: DiagnosticSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: SymmetryKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub data: DataSpec,
    pub init: InitScheme,
    pub optim: OptimConfig,
    #[serde(default)]
    pub symmetries: Vec<SymmetrySpec>,
    /// Also track every symmetry the model declares.
    #[serde(default)]
    pub declared_symmetries: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        self.optim.lr.validate()?;
        let o = &self.optim;
        if self.model.d_x() != self.data.d_x || self.model.d_y() != self.data.d_y() {
            return Err(Error::Config(format!(
                "model maps {} → {} but data provides {} → {}",
                self.model.d_x(),
                self.model.d_y(),
                self.data.d_x,
                self.data.d_y()
            )));
        }
        if o.algorithm == Algorithm::Sgd && (o.batch == 0 || o.batch > self.data.n) {
            return Err(Error::Config(format!("optim.batch must lie in 1..={}", self.data.n)));
        }
        if !(o.gamma.is_finite() && o.gamma >= 0.0) {
            return Err(Error::Config("optim.gamma must be finite and non-negative".into()));
        }
        if o.cadence == 0 {
            return Err(Error::Config("optim.cadence must be at least 1".into()));
        }
        if o.dcdt_window < 3 {
            return Err(Error::Config("optim.dcdt_window must be at least 3".into()));
        }
        Ok(())
    }

    /// Every tracked symmetry with its id, explicit ones first.
    pub fn symmetry_kinds(&self) -> Vec<(String, SymmetryKind)> {
        let mut out: Vec<(String, SymmetryKind)> =
            self.symmetries.iter().map(|s| (s.id.clone(), s.kind.clone())).collect();
        if self.declared_symmetries {
            for (id, k) in self.model.declared_symmetries() {
                if !out.iter().any(|(i, _)| *i == id) {
                    out.push((id, k));
                }
            }
        }
        out
    }

    pub fn descriptors<T: Float>(&self) -> Result<Vec<SymmetryDescriptor<T>>> {
        let layout = self.model.layout()?;
        self.symmetry_kinds()
            .into_iter()
            .map(|(id, k)| SymmetryDescriptor::new(id, k, &layout))
            .collect()
    }
}

fn advance<T: Float>(p: &ParamBlocks<T>, g: &ParamBlocks<T>, eta: T) -> Result<ParamBlocks<T>> {
    let mut next = p.clone();
    next.axpy(-eta, g);
    if !next.is_finite() {
        return Err(Error::Diverged("non-finite parameter".into()));
    }
    if next.norm_sq() > lit(DIVERGENCE_NORM_SQ) {
        return Err(Error::Diverged(format!("squared parameter norm exceeded {DIVERGENCE_NORM_SQ:e}")));
    }
    Ok(next)
}

/// `θ' = θ − ηg` with `g` the batch-mean gradient; returns `(θ', g)`.
pub fn sgd_step<T: Float>(
    spec: &ModelSpec,
    p: &ParamBlocks<T>,
    x: &DMatrix<T>,
    y: &DMatrix<T>,
    eta: T,
    gamma: T,
) -> Result<(ParamBlocks<T>, ParamBlocks<T>)> {
    let g = spec.grad(p, x, y, gamma)?;
    if !g.is_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    Ok((advance(p, &g, eta)?, g))
}

/// Full-dataset step; linear models use cached moments.
pub fn gd_step<T: Float>(
    spec: &ModelSpec,
    p: &ParamBlocks<T>,
    data: &Dataset<T>,
    eta: T,
    gamma: T,
) -> Result<(ParamBlocks<T>, ParamBlocks<T>)> {
    let g = spec.full_grad(p, data, gamma)?;
    if !g.is_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    Ok((advance(p, &g, eta)?, g))
}

/// Draws `batch` indices uniformly with replacement.
pub fn sample_batch<R: Rng>(rng: &mut R, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.gen_range(0..n)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub step: usize,
    pub time: f64,
    pub eta: f64,
    pub loss: f64,
    pub theta_norm_sq: f64,
    /// Frobenius norms in block order.
    pub block_norms: Vec<f64>,
    pub sharpness: Option<f64>,
    pub balance_residual: Option<f64>,
    pub latent_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeRow {
    pub step: usize,
    pub time: f64,
    pub charge_id: String,
    pub charge: f64,
    pub flow_pred: Option<f64>,
    pub dcdt_meas: Option<f64>,
    pub lambda_star: Option<f64>,
    pub rel_dist: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedMatrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub values: Vec<f64>,
}

impl NamedMatrix {
    pub fn from_matrix<T: Float>(name: impl Into<String>, m: &DMatrix<T>) -> Self {
        let values = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| to_f64(m[(i, j)]))
            .collect();
        Self { name: name.into(), rows: m.nrows(), cols: m.ncols(), values }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for row in self.values.chunks(self.cols) {
            out.write_record(row.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Running mean of `WΓ_WWᵀ` and `UᵀΓ_UU` over recorded steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedBalance {
    pub from_step: usize,
    pub samples: usize,
    pub residual: f64,
    pub lhs: NamedMatrix,
    pub rhs: NamedMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub config: RunConfig,
    pub seed: u64,
    pub rng: &'static str,
    pub block_names: Vec<String>,
    pub rows: Vec<DiagnosticRow>,
    pub charges: Vec<ChargeRow>,
    pub initial: Vec<NamedMatrix>,
    pub terminal: Vec<NamedMatrix>,
    pub averaged_balance: Option<AveragedBalance>,
    pub divergence: Option<Divergence>,
    pub steps_completed: usize,
}

/// Compact view of a run for manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub rng: String,
    pub scalar: String,
    pub steps_completed: usize,
    pub diverged: bool,
    pub divergence: Option<Divergence>,
    pub final_row: Option<DiagnosticRow>,
    pub initial_row: Option<DiagnosticRow>,
    pub averaged_balance_residual: Option<f64>,
    /// Noise scale multiplying `Tr[ΣA]` in the predicted flow: `η/S` for SGD, 0 for GD.
    pub flow_noise_scale: String,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    pub fn terminal_params(&self) -> Result<ParamBlocks<f64>> {
        ParamBlocks::new(self.terminal.iter().map(|m| (m.name.clone(), m.to_matrix())))
    }

    pub fn initial_params(&self) -> Result<ParamBlocks<f64>> {
        ParamBlocks::new(self.initial.iter().map(|m| (m.name.clone(), m.to_matrix())))
    }

    pub fn charge_series(&self, id: &str) -> Vec<&ChargeRow> {
        self.charges.iter().filter(|c| c.charge_id == id).collect()
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            seed: self.seed,
            rng: self.rng.to_string(),
            scalar: "f64".into(),
            steps_completed: self.steps_completed,
            diverged: self.diverged(),
            divergence: self.divergence.clone(),
            final_row: self.rows.last().cloned(),
            initial_row: self.rows.first().cloned(),
            averaged_balance_residual: self.averaged_balance.as_ref().map(|a| a.residual),
            flow_noise_scale: match self.config.optim.algorithm {
                Algorithm::Sgd => "eta/batch".into(),
                Algorithm::Gd => "0".into(),
            },
        }
    }

    /// Columns: `step,time,eta,loss,theta_norm_sq,norm_<block>...,sharpness,balance_residual,latent_residual`.
    pub fn write_diagnostics_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["step", "time", "eta", "loss", "theta_norm_sq"].map(String::from).to_vec();
        header.extend(self.block_names.iter().map(|b| format!("norm_{b}")));
        header.extend(["sharpness", "balance_residual", "latent_residual"].map(String::from));
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.step.to_string(),
                r.time.to_string(),
                r.eta.to_string(),
                r.loss.to_string(),
                r.theta_norm_sq.to_string(),
            ];
            rec.extend(r.block_norms.iter().map(|v| v.to_string()));
            rec.extend([opt(r.sharpness), opt(r.balance_residual), opt(r.latent_residual)]);
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Columns: `step,time,charge_id,C,G_pred,dCdt_meas,lambda_star,rel_dist`.
    pub fn write_charges_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "time", "charge_id", "C", "G_pred", "dCdt_meas", "lambda_star", "rel_dist"])?;
        for c in &self.charges {
            out.write_record([
                c.step.to_string(),
                c.time.to_string(),
                c.charge_id.clone(),
                c.charge.to_string(),
                opt(c.flow_pred),
                opt(c.dcdt_meas),
                opt(c.lambda_star),
                opt(c.rel_dist),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Least-squares slope of `y` against `t`.
pub fn ls_slope(t: &[f64], y: &[f64]) -> Option<f64> {
    let n = t.len();
    if n < 3 || n != y.len() {
        return None;
    }
    let mt = t.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sty, mut stt) = (0.0, 0.0);
    for (a, b) in t.iter().zip(y) {
        sty += (a - mt) * (b - my);
        stt += (a - mt) * (a - mt);
    }
    if stt == 0.0 {
        None
    } else {
        Some(sty / stt)
    }
}

fn two_layer_blocks<T: Float>(spec: &ModelSpec, p: &ParamBlocks<T>) -> Option<(DMatrix<T>, DMatrix<T>)> {
    match spec {
        ModelSpec::TwoLayerLinear { .. }
        | ModelSpec::Rank1Factorization { .. }
        | ModelSpec::TwoLayerNonlinear { .. }
        | ModelSpec::ScaleInvariantNet { .. } => Some((p.get("U").ok()?.clone(), p.get("W").ok()?.clone())),
        ModelSpec::DeepLinear { .. } => None,
    }
}

fn is_two_layer_linear(spec: &ModelSpec) -> bool {
    matches!(spec, ModelSpec::TwoLayerLinear { .. } | ModelSpec::Rank1Factorization { .. })
}

struct Recorder<T: Float> {
    descs: Vec<SymmetryDescriptor<T>>,
    history: Vec<(Vec<f64>, Vec<f64>)>,
    avg: Option<(usize, usize, DMatrix<T>, DMatrix<T>)>,
}

impl<T: Float> Recorder<T> {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        cfg: &RunConfig,
        data: &Dataset<T>,
        p: &ParamBlocks<T>,
        step: usize,
        time: f64,
        eta: f64,
        rows: &mut Vec<DiagnosticRow>,
        charges: &mut Vec<ChargeRow>,
    ) -> Result<()> {
        let spec = &cfg.model;
        let o = &cfg.optim;
        let diag = &o.diagnostics;
        let gamma = lit::<T>(o.gamma);
        let loss = to_f64(spec.full_loss(p, data, gamma)?);
        let two = two_layer_blocks(spec, p);
        let linear = is_two_layer_linear(spec);
        let sharp = match (&two, diag.sharpness && linear) {
            (Some((u, w)), true) => Some(to_f64(sharpness(u, w, &data.moments().xx, spec.d_y()))),
            _ => None,
        };
        let (mut bal, mut latent) = (None, None);
        if diag.balance {
            if let Some((u, w)) = &two {
                if linear {
                    let pair = gamma_pair(u, w, data, gamma)?;
                    let (a, b) = balance_matrices(u, w, &pair)?;
                    bal = Some(to_f64(normalized_difference(&a, &b)));
                    if let Some(from) = diag.average_from {
                        if step >= from {
                            let acc = self.avg.get_or_insert_with(|| (step, 0, a.clone() * T::zero(), b.clone() * T::zero()));
                            acc.1 += 1;
                            acc.2 += a;
                            acc.3 += b;
                        }
                    }
                }
                let sx = cfg.data.sigma_x::<T>();
                let se = cfg.data.sigma_eps::<T>();
                if se.trace() > T::zero() && sx.trace() > T::zero() {
                    latent = Some(to_f64(global_min_balance_residual(u, w, &sx, &se)?));
                }
            }
        }
        rows.push(DiagnosticRow {
            step,
            time,
            eta,
            loss,
            theta_norm_sq: to_f64(p.norm_sq()),
            block_norms: p.block_norms().into_iter().map(to_f64).collect(),
            sharpness: sharp,
            balance_residual: bal,
            latent_residual: latent,
        });
        if !(diag.charges || diag.flow || diag.lambda_star) || self.descs.is_empty() {
            return Ok(());
        }
        let want_flow = diag.flow || diag.lambda_star;
        let grads = if want_flow { Some(spec.per_sample_grads(p, data.x(), data.y(), gamma)?) } else { None };
        let noise_scale = match o.algorithm {
            Algorithm::Sgd => eta / o.batch as f64,
            Algorithm::Gd => 0.0,
        };
        for (k, d) in self.descs.iter().enumerate() {
            let c = to_f64(d.charge(p)?);
            let (ts, cs) = &mut self.history[k];
            ts.push(time);
            cs.push(c);
            let lo = ts.len().saturating_sub(o.dcdt_window);
            let dcdt = ls_slope(&ts[lo..], &cs[lo..]);
            let (mut flow, mut lam, mut rel) = (None, None, None);
            if let Some(g) = &grads {
                let prof = d.spectral_profile(p, g)?;
                let tr = to_f64(prof.trace_at(T::zero()));
                flow = Some(-4.0 * o.gamma * c + noise_scale * tr);
                if diag.lambda_star {
                    let ls = prof.solve(gamma, lit(noise_scale))?;
                    let l = to_f64(ls.lambda);
                    lam = Some(l);
                    if l.is_finite() {
                        let cstar = to_f64(prof.charge_at(ls.lambda));
                        if cstar != 0.0 {
                            rel = Some((c - cstar).powi(2) / (cstar * cstar));
                        }
                    }
                }
            }
            charges.push(ChargeRow {
                step,
                time,
                charge_id: d.id().to_string(),
                charge: c,
                flow_pred: flow,
                dcdt_meas: dcdt,
                lambda_star: lam,
                rel_dist: rel,
            });
        }
        Ok(())
    }
}

fn named<T: Float>(p: &ParamBlocks<T>) -> Vec<NamedMatrix> {
    p.iter().map(|(n, m)| NamedMatrix::from_matrix(n, m)).collect()
}

/// Generates the dataset from `cfg.data` and trains.
pub fn run<T: Float>(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let data = generate_dataset::<T>(&cfg.data)?;
    run_with_dataset(cfg, &data)
}

/// Trains on an explicit dataset; `cfg.data` still supplies the population
/// covariances used by the latent balance residual.
pub fn run_with_dataset<T: Float>(cfg: &RunConfig, data: &Dataset<T>) -> Result<RunRecord> {
    cfg.validate()?;
    let spec = &cfg.model;
    let o = &cfg.optim;
    if data.d_x() != spec.d_x() || data.d_y() != spec.d_y() {
        return Err(Error::Config("dataset dimensions do not match the model".into()));
    }
    let descs = cfg.descriptors::<T>()?;
    let mut p: ParamBlocks<T> = spec.init(&cfg.init, o.seed)?;
    let initial = named(&p);
    let mut batches = rng::stream(o.seed, Stream::Batches);
    let gamma = lit::<T>(o.gamma);
    let mut rec = Recorder { history: vec![(Vec::new(), Vec::new()); descs.len()], descs, avg: None };
    let (mut rows, mut charges) = (Vec::new(), Vec::new());
    let mut time = 0.0;
    let mut divergence = None;
    let mut done = 0;
    rec.record(cfg, data, &p, 0, time, o.lr.eta_at(0), &mut rows, &mut charges)?;
    for step in 0..o.steps {
        let eta = o.lr.eta_at(step);
        let out = match o.algorithm {
            Algorithm::Gd => gd_step(spec, &p, data, lit(eta), gamma),
            Algorithm::Sgd => {
                let idx = sample_batch(&mut batches, data.n(), o.batch);
                let (x, y) = data.batch(&idx);
                sgd_step(spec, &p, &x, &y, lit(eta), gamma)
            }
        };
        match out {
            Ok((next, _)) => p = next,
            Err(Error::Diverged(reason)) => {
                divergence = Some(Divergence { step: step + 1, reason });
                break;
            }
            Err(e) => return Err(e),
        }
        time += eta;
        done = step + 1;
        if done % o.cadence == 0 || done == o.steps {
            rec.record(cfg, data, &p, done, time, o.lr.eta_at(done.min(o.steps - 1)), &mut rows, &mut charges)?;
        }
    }
    let averaged_balance = rec.avg.map(|(from, k, a, b)| {
        let inv = T::one() / lit::<T>(k as f64);
        let (a, b) = (a * inv, b * inv);
        AveragedBalance {
            from_step: from,
            samples: k,
            residual: to_f64(normalized_difference(&a, &b)),
            lhs: NamedMatrix::from_matrix("W_GammaW_Wt", &a),
            rhs: NamedMatrix::from_matrix("Ut_GammaU_U", &b),
        }
    });
    Ok(RunRecord {
        config: cfg.clone(),
        seed: o.seed,
        rng: RNG_NAME,
        block_names: p.layout().names().map(String::from).collect(),
        rows,
        charges,
        initial,
        terminal: named(&p),
        averaged_balance,
        divergence,
        steps_completed: done,
    })
}

/// Configuration field a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Constant rate, or the post-warmup rate of a schedule.
    Eta,
    Batch,
    Gamma,
    /// Hidden width `d` of a two-layer model.
    Width,
    /// Input and output dimension of an autoencoding two-layer model.
    DataDim,
    /// Split-variance parameter of the input covariance.
    Phi,
    Steps,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "eta" | "optim.lr.eta" => SweepAxis::Eta,
            "batch" | "optim.batch" => SweepAxis::Batch,
            "gamma" | "optim.gamma" => SweepAxis::Gamma,
            "width" | "model.d" => SweepAxis::Width,
            "data_dim" => SweepAxis::DataDim,
            "phi" | "data.input_cov.phi" => SweepAxis::Phi,
            "steps" | "optim.steps" => SweepAxis::Steps,
            other => return Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        })
    }
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("sweep value {v} is not a valid {what}")))
    }
}

impl SweepAxis {
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = base.clone();
        match self {
            SweepAxis::Eta => match &mut c.optim.lr {
                LrSchedule::Constant { eta } => *eta = value,
                LrSchedule::Step { end, .. } | LrSchedule::Linear { end, .. } => *end = value,
            },
            SweepAxis::Batch => c.optim.batch = as_count(value, "batch size")?,
            SweepAxis::Gamma => c.optim.gamma = value,
            SweepAxis::Steps => c.optim.steps = as_count(value, "step count")?,
            SweepAxis::Phi => c.data.input_cov = InputCov::Split { phi: value },
            SweepAxis::Width => {
                let w = as_count(value, "width")?;
                match &mut c.model {
                    ModelSpec::TwoLayerLinear { d, .. }
                    | ModelSpec::TwoLayerNonlinear { d, .. }
                    | ModelSpec::ScaleInvariantNet { d, .. }
                    | ModelSpec::Rank1Factorization { d } => *d = w,
                    ModelSpec::DeepLinear { .. } => {
                        return Err(Error::Config("width sweeps need a two-layer model".into()))
                    }
                }
            }
            SweepAxis::DataDim => {
                let k = as_count(value, "dimension")?;
                if c.data.teacher != Teacher::Identity {
                    return Err(Error::Config("data_dim sweeps need an autoencoding (identity) teacher".into()));
                }
                c.data.d_x = k;
                match &mut c.model {
                    ModelSpec::TwoLayerLinear { d_x, d_y, .. }
                    | ModelSpec::TwoLayerNonlinear { d_x, d_y, .. }
                    | ModelSpec::ScaleInvariantNet { d_x, d_y, .. } => {
                        *d_x = k;
                        *d_y = k;
                    }
                    _ => return Err(Error::Config("data_dim sweeps need a two-layer model".into())),
                }
                if let InputCov::Diagonal { .. } = c.data.input_cov {
                    return Err(Error::Config("data_dim sweeps need an isotropic or split input covariance".into()));
                }
                use crate::data::LabelNoise;
                if let LabelNoise::Diagonal { .. } = c.data.label_noise {
                    return Err(Error::Config("data_dim sweeps need a non-diagonal label-noise spec".into()));
                }
            }
        }
        Ok(c)
    }
}

/// The configurations a sweep runs: member `i` uses seed `base seed + i`.
pub fn sweep_configs(base: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<RunConfig>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut c = axis.apply(base, v)?;
            c.optim.seed = base.optim.seed + i as u64;
            c.validate()?;
            Ok(c)
        })
        .collect()
}

/// Independent runs along one axis, executed in parallel, returned in order.
pub fn sweep<T: Float>(base: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<RunRecord>> {
    let cfgs = sweep_configs(base, axis, values)?;
    cfgs.par_iter().map(run::<T>).collect()
}

/// Worst normalized violation of the one-step charge identity
/// `ΔC = −2ηgᵀAθ + η²gᵀAg` over a training segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub symmetry: String,
    pub steps: usize,
    /// `max |ΔC − (−2ηgᵀAθ + η²gᵀAg)| / (|C| + η²‖g‖²)`.
    pub max_violation: f64,
    /// Same for the weight-decay-free form `ΔC = η²gᵀAg`.
    pub max_violation_no_drift: f64,
    pub charge_monotone: bool,
}

pub fn check_charge_identity<T: Float>(
    spec: &ModelSpec,
    data: &Dataset<T>,
    start: &ParamBlocks<T>,
    descs: &[SymmetryDescriptor<T>],
    algorithm: Algorithm,
    eta: f64,
    batch: usize,
    gamma: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<IdentityCheck>> {
    let mut rng = rng::stream(seed, Stream::Batches);
    let mut p = start.clone();
    let (eta_t, gamma_t) = (lit::<T>(eta), lit::<T>(gamma));
    let mut out: Vec<IdentityCheck> = descs
        .iter()
        .map(|d| IdentityCheck {
            symmetry: d.id().to_string(),
            steps: 0,
            max_violation: 0.0,
            max_violation_no_drift: 0.0,
            charge_monotone: true,
        })
        .collect();
    for _ in 0..steps {
        let (next, g) = match algorithm {
            Algorithm::Gd => gd_step(spec, &p, data, eta_t, gamma_t)?,
            Algorithm::Sgd => {
                let idx = sample_batch(&mut rng, data.n(), batch);
                let (x, y) = data.batch(&idx);
                sgd_step(spec, &p, &x, &y, eta_t, gamma_t)?
            }
        };
        let (gf, tf) = (g.flatten(), p.flatten());
        let gnorm = to_f64(gf.norm_squared());
        for (d, rep) in descs.iter().zip(out.iter_mut()) {
            let c0 = to_f64(d.charge(&p)?);
            let c1 = to_f64(d.charge(&next)?);
            let gag = to_f64(d.quad(gf.as_slice()));
            let gat = to_f64(gf.dot(&d.apply(&tf)));
            let scale = c0.abs() + eta * eta * gnorm;
            let dc = c1 - c0;
            let full = (dc - (-2.0 * eta * gat + eta * eta * gag)).abs() / scale;
            let bare = (dc - eta * eta * gag).abs() / scale;
            rep.max_violation = rep.max_violation.max(full);
            rep.max_violation_no_drift = rep.max_violation_no_drift.max(bare);
            rep.charge_monotone &= dc >= 0.0 || gag < 0.0;
            rep.steps += 1;
        }
        p = next;
    }
    Ok(out)
}
