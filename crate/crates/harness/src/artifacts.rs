//! On-disk layout of an experiment directory.
//!
//! ```text
//! <out>/<experiment id>/experiment.json
//!                      /predictions.json, prediction_<name>*.csv
//!                      /report.json
//!                      /<run name>/manifest.json, diagnostics.csv, charges.csv,
//!                                  matrix_<block>_{initial,terminal}.csv
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use noise_lab_core::optim::{ChargeRow, NamedMatrix, RunConfig, RunRecord, RunSummary};
use serde::{Deserialize, Serialize};

pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const REPORT_FILE: &str = "report.json";

pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> noise_lab_core::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub anchor: String,
    pub scaled: Option<String>,
    pub run: String,
    pub variant: String,
    pub sweep_axis: Option<String>,
    pub sweep_value: Option<f64>,
    pub expect_divergence: bool,
    pub tool_version: String,
    /// The resolved configuration the run used.
    pub config: RunConfig,
    pub summary: RunSummary,
    pub files: Vec<String>,
}

fn matrix_file(name: &str, when: &str) -> String {
    format!("matrix_{name}_{when}.csv")
}

/// Writes a run's artifacts into `dir` and returns its manifest.
/// `extra` matrices land in `matrix_<name>.csv`.
pub fn write_run(dir: &Path, record: &RunRecord, mut manifest: RunManifest, extra: &[NamedMatrix]) -> anyhow::Result<RunManifest> {
    let mut files = vec!["diagnostics.csv".to_string(), "charges.csv".to_string()];
    write_atomic(&dir.join("diagnostics.csv"), &csv_bytes(|b| record.write_diagnostics_csv(b))?)?;
    write_atomic(&dir.join("charges.csv"), &csv_bytes(|b| record.write_charges_csv(b))?)?;
    let mut mats: Vec<(&NamedMatrix, &str)> = record.initial.iter().map(|m| (m, "initial")).collect();
    mats.extend(record.terminal.iter().map(|m| (m, "terminal")));
    if let Some(avg) = &record.averaged_balance {
        mats.push((&avg.lhs, "averaged"));
        mats.push((&avg.rhs, "averaged"));
    }
    for (m, when) in mats {
        let f = matrix_file(&m.name, when);
        write_atomic(&dir.join(&f), &csv_bytes(|b| m.write_csv(b))?)?;
        files.push(f);
    }
    for m in extra {
        files.push(write_matrix(dir, &m.name, m)?);
    }
    files.push(MANIFEST_FILE.into());
    manifest.files = files;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn write_matrix(dir: &Path, name: &str, m: &NamedMatrix) -> anyhow::Result<String> {
    let f = format!("matrix_{name}.csv");
    write_atomic(&dir.join(&f), &csv_bytes(|b| m.write_csv(b))?)?;
    Ok(f)
}

/// Numeric CSV with a header; empty cells read as `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>().map(Some)
                    }
                })
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("{} line {}", path.display(), i + 2))?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> anyhow::Result<Vec<Option<f64>>> {
        let Some(j) = self.header.iter().position(|h| h == name) else {
            bail!("missing column {name:?}");
        };
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Column values with empty cells dropped.
    pub fn values(&self, name: &str) -> anyhow::Result<Vec<f64>> {
        Ok(self.column(name)?.into_iter().flatten().collect())
    }

    pub fn last(&self, name: &str) -> anyhow::Result<Option<f64>> {
        Ok(self.column(name)?.into_iter().flatten().last())
    }
}

pub fn read_matrix(path: &Path) -> anyhow::Result<nalgebra::DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut vals = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let row: Vec<f64> = rec.iter().map(|c| c.parse()).collect::<Result<_, _>>()?;
        if *cols.get_or_insert(row.len()) != row.len() {
            bail!("{}: ragged matrix", path.display());
        }
        vals.extend(row);
        rows += 1;
    }
    Ok(nalgebra::DMatrix::from_row_slice(rows, cols.unwrap_or(0), &vals))
}

/// A run directory as read back from disk.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub diagnostics: Table,
    pub charges: Vec<ChargeRow>,
}

impl RunArtifacts {
    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let manifest: RunManifest = read_json(&dir.join(MANIFEST_FILE))?;
        let diagnostics = Table::read(&dir.join("diagnostics.csv"))?;
        let mut charges = Vec::new();
        let path = dir.join("charges.csv");
        let mut rdr = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
        let num = |s: &str| -> anyhow::Result<Option<f64>> {
            Ok(if s.is_empty() { None } else { Some(s.parse()?) })
        };
        for rec in rdr.records() {
            let r = rec?;
            if r.len() != 8 {
                bail!("{}: expected 8 columns", path.display());
            }
            charges.push(ChargeRow {
                step: r[0].parse()?,
                time: r[1].parse()?,
                charge_id: r[2].to_string(),
                charge: r[3].parse()?,
                flow_pred: num(&r[4])?,
                dcdt_meas: num(&r[5])?,
                lambda_star: num(&r[6])?,
                rel_dist: num(&r[7])?,
            });
        }
        Ok(Self { dir: dir.to_path_buf(), manifest, diagnostics, charges })
    }

    pub fn name(&self) -> &str {
        &self.manifest.run
    }

    pub fn diverged(&self) -> bool {
        self.manifest.summary.diverged
    }

    pub fn matrix(&self, block: &str, when: &str) -> anyhow::Result<nalgebra::DMatrix<f64>> {
        read_matrix(&self.dir.join(matrix_file(block, when)))
    }

    /// Charge ids in first-seen order.
    pub fn charge_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.charges {
            if !out.contains(&c.charge_id) {
                out.push(c.charge_id.clone());
            }
        }
        out
    }
}
