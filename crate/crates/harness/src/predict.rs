//! Standalone predictors evaluated without training.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use noise_lab_core::equilibria::{
    balanced_layer_norm_sq, deep_linear_equilibrium, deep_linear_stationarity, sharpness_init_end,
};
use noise_lab_core::optim::NamedMatrix;
use serde::{Deserialize, Serialize};

use crate::artifacts::{write_atomic, write_json, PREDICTIONS_FILE};
use crate::config::Experiment;
use crate::ExitError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictionSpec {
    /// Noise-aligned deep linear global minimum for the base data's teacher
    /// and covariances; depth is `widths.len() + 1`.
    DeepLinearEquilibrium { name: String, widths: Vec<usize> },
    /// Expected sharpness at initialization and at the balanced minimum for
    /// each built-in Gaussian init scheme.
    SharpnessInitEnd { name: String, d: usize, d_x: usize, d_y: usize, tr_sigma_x: f64 },
}

impl PredictionSpec {
    pub fn name(&self) -> &str {
        match self {
            PredictionSpec::DeepLinearEquilibrium { name, .. } | PredictionSpec::SharpnessInitEnd { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutput {
    pub name: String,
    pub values: BTreeMap<String, f64>,
    pub files: Vec<String>,
}

fn table(header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(w.into_inner()?)
}

/// `(σ_U², σ_W²)` of the two-layer Gaussian schemes.
pub fn scheme_variances(scheme: &str, d: usize, d_x: usize, d_y: usize) -> Option<(f64, f64)> {
    let (d, d_x, d_y) = (d as f64, d_x as f64, d_y as f64);
    match scheme {
        "xavier" => Some((1.0 / (d_y + d), 1.0 / (d + d_x))),
        "kaiming" => Some((1.0 / d, 1.0 / d_x)),
        "kaiming-unit-output" => Some((1.0, 1.0 / d_x)),
        _ => None,
    }
}

pub const SCHEMES: [&str; 3] = ["xavier", "kaiming", "kaiming-unit-output"];

fn evaluate(exp: &Experiment, spec: &PredictionSpec, dir: &Path) -> anyhow::Result<PredictionOutput> {
    let mut values = BTreeMap::new();
    let mut files = Vec::new();
    let name = spec.name();
    let main = format!("prediction_{name}.csv");
    match spec {
        PredictionSpec::DeepLinearEquilibrium { widths, .. } => {
            let data = &exp.base.data;
            let v: DMatrix<f64> = data.teacher_matrix();
            let (sx, se) = (data.sigma_x::<f64>(), data.sigma_eps::<f64>());
            let depth = widths.len() + 1;
            let eq = deep_linear_equilibrium(&v, &sx, &se, depth, widths, None)
                .map_err(|e| ExitError::runtime(format!("prediction {name:?}: {e}")))?;
            let stat = deep_linear_stationarity(&eq.layers, &sx, &se);
            let tr_s = eq.s_prime.sum();
            let balanced = balanced_layer_norm_sq(tr_s, eq.rank, depth);
            let mut rows = Vec::new();
            for (i, w) in eq.layers.iter().enumerate() {
                let res = if i + 1 < depth { stat[i].to_string() } else { String::new() };
                rows.push(vec![
                    format!("W{}", i + 1),
                    w.nrows().to_string(),
                    w.ncols().to_string(),
                    w.norm_squared().to_string(),
                    eq.sigmas[i].norm_squared().to_string(),
                    res,
                ]);
                let f = format!("prediction_{name}_W{}.csv", i + 1);
                let mut buf = Vec::new();
                NamedMatrix::from_matrix(format!("W{}", i + 1), w).write_csv(&mut buf)?;
                write_atomic(&dir.join(&f), &buf)?;
                files.push(f);
                values.insert(format!("norm_sq.W{}", i + 1), w.norm_squared());
            }
            write_atomic(
                &dir.join(&main),
                &table(&["layer", "rows", "cols", "norm_sq", "sigma_norm_sq", "stationarity_residual"], &rows)?,
            )?;
            values.insert("balanced_norm_sq".into(), balanced);
            values.insert("rank".into(), eq.rank as f64);
            values.insert("trace_s_prime".into(), tr_s);
            values.insert("inner_scale".into(), eq.c);
            values.insert("max_stationarity_residual".into(), stat.iter().cloned().fold(0.0, f64::max));
        }
        PredictionSpec::SharpnessInitEnd { d, d_x, d_y, tr_sigma_x, .. } => {
            let mut rows = Vec::new();
            for s in SCHEMES {
                let (vu, vw) = scheme_variances(s, *d, *d_x, *d_y).expect("built-in scheme");
                let (si, se) = sharpness_init_end(*d, *d_x, *d_y, vu, vw, *tr_sigma_x);
                rows.push(vec![s.to_string(), vu.to_string(), vw.to_string(), si.to_string(), se.to_string(), (si / se).to_string()]);
                values.insert(format!("{s}.s_init"), si);
                values.insert(format!("{s}.s_end"), se);
            }
            write_atomic(&dir.join(&main), &table(&["scheme", "var_u", "var_w", "s_init", "s_end", "ratio"], &rows)?)?;
        }
    }
    files.insert(0, main);
    Ok(PredictionOutput { name: name.to_string(), values, files })
}

/// Evaluates every prediction of `exp` into `dir` and writes the index file.
pub fn run_predictions(exp: &Experiment, dir: &Path) -> anyhow::Result<Vec<PredictionOutput>> {
    let outs = exp
        .predictions
        .iter()
        .map(|p| evaluate(exp, p, dir))
        .collect::<anyhow::Result<Vec<_>>>()?;
    write_json(&dir.join(PREDICTIONS_FILE), &outs)?;
    Ok(outs)
}
