//! One PASS/FAIL line per acceptance criterion. Each criterion also carries a
//! wall-clock budget; exceeding it fails the criterion.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use noise_lab::config::ExperimentFile;
use noise_lab::experiment::execute;
use noise_lab::verify::{run_suite, VerifyCheck};

struct Outcome {
    pass: bool,
    detail: String,
}

fn suites(names: &[&str]) -> anyhow::Result<Outcome> {
    let mut checks: Vec<VerifyCheck> = Vec::new();
    for n in names {
        checks.extend(run_suite(n).expect("bundled suite")?);
    }
    let failed: Vec<String> =
        checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {:.3e} > {:.1e}", c.name, c.measured, c.tolerance)).collect();
    let worst = checks.iter().map(|c| c.measured / c.tolerance).fold(0.0, f64::max);
    Ok(Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} checks, worst measured/tolerance {worst:.3}", checks.len())
        } else {
            failed.join("; ")
        },
    })
}

fn experiment(config: &str, out: &std::path::Path) -> anyhow::Result<Outcome> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(config);
    let exp = ExperimentFile::load(&path)?.resolve()?;
    let report = execute(&exp, out)?;
    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| {
            let m = r.measured.map_or("-".into(), |v| format!("{v:.4}"));
            format!("{} {} {} = {m}{}", if r.pass { "ok" } else { "FAILED" }, r.check, r.subject, if r.pass { String::new() } else { format!(" ({})", r.detail) })
        })
        .collect();
    let shown: Vec<&String> = rows.iter().filter(|r| r.starts_with("FAILED")).chain(rows.iter().filter(|r| r.starts_with("ok")).take(6)).collect();
    let more = if rows.len() > shown.len() { format!("; {} more rows ok", rows.len() - shown.len()) } else { String::new() };
    let detail = shown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; ") + &more;
    Ok(Outcome { pass: report.pass && !report.rows.is_empty(), detail })
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture or a name filter are accepted and ignored.
    let out = tempfile::tempdir().expect("temporary output directory");
    let dir = out.path().to_path_buf();
    type Job = Box<dyn Fn() -> anyhow::Result<Outcome>>;
    let d = dir.clone();
    let criteria: Vec<(&str, u64, Job)> = vec![
        ("discrete charge identity", 10, Box::new(|| suites(&["charge-identity"]))),
        ("gradient-flow conservation limit", 30, Box::new(|| suites(&["gradient-flow-limit"]))),
        ("scale-invariance monotonicity", 60, Box::new({ let d = d.clone(); move || experiment("scale_invariance.toml", &d) })),
        ("two-layer balance", 120, Box::new({ let d = d.clone(); move || experiment("two_layer_balance.toml", &d) })),
        ("norm balance versus data anisotropy", 300, Box::new({ let d = d.clone(); move || experiment("phi_sweep.toml", &d) })),
        ("warmup stabilization", 120, Box::new({ let d = d.clone(); move || experiment("warmup.toml", &d) })),
        (
            "deep linear equilibrium",
            300,
            Box::new({
                let d = d.clone();
                move || {
                    let exact = suites(&["deep-linear-stationarity"])?;
                    let trained = experiment("deep_linear.toml", &d)?;
                    Ok(Outcome { pass: exact.pass && trained.pass, detail: format!("{}; {}", exact.detail, trained.detail) })
                }
            }),
        ),
        ("λ* solver oracle", 10, Box::new(|| suites(&["lambda-oracle"]))),
        ("covariance transport", 10, Box::new(|| suites(&["covariance-transport"]))),
        ("rank-1 sign alignment", 30, Box::new(move || experiment("rank1_alignment.toml", &d))),
    ];
    let mut failures = 0;
    for (name, budget, job) in &criteria {
        let start = Instant::now();
        let result = job();
        let elapsed = start.elapsed();
        let within = elapsed <= Duration::from_secs(*budget);
        let (pass, detail) = match result {
            Ok(o) => (o.pass && within, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "{} {name} [{:.1} s of {budget} s{}] {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if within { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
