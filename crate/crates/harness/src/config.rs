//! Experiment files: a base run, named variants that override parts of it,
//! an optional sweep, predictions and checks.
//!
//! Variant overrides merge table-wise into the base before the run config is
//! deserialized, so every error names the offending field path.

use std::path::Path;

use anyhow::Context;
use noise_lab_core::optim::{sweep_configs, RunConfig, SweepAxis};
use serde::{Deserialize, Serialize};

use crate::checks::CheckSpec;
use crate::predict::PredictionSpec;
use crate::ExitError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub id: String,
    /// Names the experiment in report rows.
    pub anchor: String,
    /// Present when the settings are reduced from a larger published setup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaled: Option<String>,
    pub base: toml::Table,
    #[serde(default, rename = "variant", skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<VariantFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepFile>,
    #[serde(default, rename = "prediction", skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<PredictionSpec>,
    #[serde(default, rename = "check", skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantFile {
    pub name: String,
    #[serde(default)]
    pub expect_divergence: bool,
    #[serde(default)]
    pub set: toml::Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub axis: String,
    pub values: Vec<f64>,
    /// Variants to sweep; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<String>>,
}

/// A fully resolved experiment: every default is explicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub id: String,
    pub anchor: String,
    pub scaled: Option<String>,
    pub base: RunConfig,
    pub runs: Vec<ResolvedRun>,
    pub sweep: Option<(SweepAxis, Vec<f64>)>,
    pub predictions: Vec<PredictionSpec>,
    pub checks: Vec<CheckSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    /// Unique within the experiment; doubles as the output subdirectory.
    pub name: String,
    pub variant: String,
    pub expect_divergence: bool,
    pub sweep_value: Option<f64>,
    pub config: RunConfig,
}

/// Tables merge recursively unless the override changes `kind`, which
/// replaces the whole table.
fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o))
                if o.get("kind").is_none_or(|kind| b.get("kind") == Some(kind)) =>
            {
                merge(b, o)
            }
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn config_error(prefix: &str, e: serde_path_to_error::Error<toml::de::Error>) -> ExitError {
    let path = e.path().to_string();
    let inner = e.into_inner();
    let msg = inner.message().to_string();
    let at = if path == "." { prefix.to_string() } else { format!("{prefix}.{path}") };
    ExitError::config(format!("{at}: {msg}"))
}

fn run_config(table: &toml::Table, prefix: &str) -> Result<RunConfig, ExitError> {
    let de = toml::Value::Table(table.clone());
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| config_error(prefix, e))?;
    cfg.validate().map_err(|e| ExitError::config(format!("{prefix}: {e}")))?;
    Ok(cfg)
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self, ExitError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| config_error("config", e))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self::parse(&text)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Replaces the base optimizer seed; variants inherit it unless they set their own.
    pub fn override_seed(&mut self, seed: u64) {
        let optim = self
            .base
            .entry("optim")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if let toml::Value::Table(t) = optim {
            t.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
    }

    pub fn resolve(&self) -> Result<Experiment, ExitError> {
        let base = run_config(&self.base, "base")?;
        let mut variants = Vec::new();
        if self.variants.is_empty() {
            variants.push(("main".to_string(), false, base.clone()));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if variants.iter().any(|(n, _, _)| *n == v.name) {
                return Err(ExitError::config(format!("variant[{i}].name: duplicate variant {:?}", v.name)));
            }
            let mut t = self.base.clone();
            merge(&mut t, &v.set);
            variants.push((v.name.clone(), v.expect_divergence, run_config(&t, &format!("variant[{i}].set"))?));
        }
        let sweep = match &self.sweep {
            None => None,
            Some(s) => {
                let axis: SweepAxis = s.axis.parse().map_err(|e| ExitError::config(format!("sweep.axis: {e}")))?;
                if s.values.is_empty() {
                    return Err(ExitError::config("sweep.values: empty sweep"));
                }
                if let Some(names) = &s.variants {
                    for n in names {
                        if !variants.iter().any(|(v, _, _)| v == n) {
                            return Err(ExitError::config(format!("sweep.variants: unknown variant {n:?}")));
                        }
                    }
                }
                Some((axis, s.values.clone()))
            }
        };
        let mut runs = Vec::new();
        for (name, expect, cfg) in variants {
            let swept = match (&sweep, &self.sweep) {
                (Some(_), Some(s)) => s.variants.as_ref().is_none_or(|vs| vs.contains(&name)),
                _ => false,
            };
            match (&sweep, swept) {
                (Some((axis, values)), true) => {
                    let cfgs = sweep_configs(&cfg, *axis, values)
                        .map_err(|e| ExitError::config(format!("sweep: variant {name:?}: {e}")))?;
                    for (i, (c, v)) in cfgs.into_iter().zip(values).enumerate() {
                        runs.push(ResolvedRun {
                            name: format!("{name}-{i:02}"),
                            variant: name.clone(),
                            expect_divergence: expect,
                            sweep_value: Some(*v),
                            config: c,
                        });
                    }
                }
                _ => runs.push(ResolvedRun {
                    name: name.clone(),
                    variant: name,
                    expect_divergence: expect,
                    sweep_value: None,
                    config: cfg,
                }),
            }
        }
        let exp = Experiment {
            id: self.id.clone(),
            anchor: self.anchor.clone(),
            scaled: self.scaled.clone(),
            base,
            runs,
            sweep,
            predictions: self.predictions.clone(),
            checks: self.checks.clone(),
        };
        for (i, c) in exp.checks.iter().enumerate() {
            c.validate(&exp).map_err(|e| ExitError::config(format!("check[{i}]: {e}")))?;
        }
        Ok(exp)
    }
}

impl Experiment {
    pub fn run(&self, name: &str) -> Option<&ResolvedRun> {
        self.runs.iter().find(|r| r.name == name)
    }

    pub fn variant_runs(&self, variant: &str) -> Vec<&ResolvedRun> {
        self.runs.iter().filter(|r| r.variant == variant).collect()
    }
}
