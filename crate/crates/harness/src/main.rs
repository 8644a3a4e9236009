use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use noise_lab::artifacts::write_json;
use noise_lab::config::{Experiment, ExperimentFile, SweepFile};
use noise_lab::experiment::{build_report, execute, predict_only, render};
use noise_lab::verify::{run_suite, SUITES};
use noise_lab::{exit_code, ExitError};

/// Simulate SGD and GD on small models, track symmetry charges, and compare
/// against noise-equilibrium predictions.
#[derive(Parser)]
#[command(name = "noise-lab", version)]
struct Cli {
    /// Worker threads for parallel runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output root; defaults to $NOISE_LAB_OUT, then ./runs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the base optimizer seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every run of an experiment, evaluate predictions and checks.
    Run(Common),
    /// Like `run`, with the sweep axis and values optionally given here.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "values")]
        axis: Option<String>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Evaluate an experiment's predictions without training.
    Predict(Common),
    /// Run an invariant suite, or `all`.
    Verify {
        suite: String,
        /// Also write the results as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild reports from experiment or run directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the combined report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_root(out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| std::env::var_os("NOISE_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn load(c: &Common, sweep: Option<SweepFile>) -> anyhow::Result<Experiment> {
    let mut file = ExperimentFile::load(&c.config).map_err(|e| match e.downcast::<ExitError>() {
        Ok(x) => anyhow::Error::new(x),
        Err(e) => anyhow::Error::new(ExitError::config(format!("{e:#}"))),
    })?;
    if let Some(s) = sweep {
        file.sweep = Some(s);
    }
    if let Some(seed) = c.seed {
        file.override_seed(seed);
    }
    Ok(file.resolve()?)
}

fn train(exp: &Experiment, out: &Path) -> anyhow::Result<bool> {
    let report = execute(exp, out)?;
    print!("{}", render(&report));
    println!("artifacts: {}", out.join(&exp.id).display());
    Ok(report.pass)
}

fn main_inner(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring threads")?;
    }
    match cli.cmd {
        Cmd::Run(c) => {
            let exp = load(&c, None)?;
            train(&exp, &out_root(&c.out))
        }
        Cmd::Sweep { common, axis, values } => {
            let sweep = match (axis, values) {
                (Some(axis), Some(values)) => Some(SweepFile { axis, values, variants: None }),
                _ => None,
            };
            let exp = load(&common, sweep)?;
            if exp.sweep.is_none() {
                return Err(ExitError::config("sweep: the config has no [sweep] and no --axis/--values were given").into());
            }
            train(&exp, &out_root(&common.out))
        }
        Cmd::Predict(c) => {
            let exp = load(&c, None)?;
            let out = out_root(&c.out);
            for p in predict_only(&exp, &out)? {
                println!("prediction {}", p.name);
                for (k, v) in &p.values {
                    println!("   {k:<28} {v:.6e}");
                }
                for f in &p.files {
                    println!("   wrote {}", out.join(&exp.id).join(f).display());
                }
            }
            Ok(true)
        }
        Cmd::Verify { suite, out } => {
            let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite.as_str()] };
            let mut all = Vec::new();
            for n in names {
                let Some(res) = run_suite(n) else {
                    return Err(ExitError::config(format!("unknown suite {n:?}; known: {}", SUITES.join(", "))).into());
                };
                for c in res? {
                    println!(
                        "{} {:<26} {:<48} measured {:.3e} tolerance {:.1e}",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.suite,
                        c.name,
                        c.measured,
                        c.tolerance
                    );
                    all.push(c);
                }
            }
            if let Some(path) = out {
                write_json(&path, &all)?;
            }
            Ok(all.iter().all(|c| c.pass))
        }
        Cmd::Report { dirs, out } => {
            let mut reports = Vec::new();
            for d in &dirs {
                let r = build_report(d).map_err(|e| ExitError::config(format!("{}: {e:#}", d.display())))?;
                print!("{}", render(&r));
                reports.push(r);
            }
            if let Some(path) = out {
                write_json(&path, &reports)?;
            }
            Ok(reports.iter().all(|r| r.pass))
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
