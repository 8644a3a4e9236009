use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
id = "tiny"
anchor = "tiny"

[base]
declared_symmetries = true
model = { kind = "two_layer_linear", d_x = 2, d = 3, d_y = 2 }
data = { d_x = 2, input_cov = { kind = "isotropic", variance = 1.0 }, teacher = { kind = "identity" }, label_noise = { kind = "isotropic", variance = 0.5 }, n = 32, seed = 1 }
init = { kind = "xavier" }

[base.optim]
algorithm = "sgd"
lr = { kind = "constant", eta = 0.05 }
batch = 4
steps = 200
seed = 3
cadence = 20
"#;

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noise-lab")).args(args).current_dir(dir).env_remove("NOISE_LAB_OUT").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_artifacts_and_report() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "tiny.toml", TINY);
    let o = cli(&["run", "--config", "tiny.toml", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("out/tiny/main");
    for f in ["manifest.json", "diagnostics.csv", "charges.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert!(dir.path().join("out/tiny/report.json").is_file());
    let again = cli(&["report", "out/tiny"], dir.path());
    assert!(again.status.success(), "{}", stderr(&again));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "tiny.toml", TINY);
    for out in ["a", "b"] {
        assert!(cli(&["--threads", "1", "run", "--config", "tiny.toml", "--out", out], dir.path()).status.success());
    }
    for f in ["diagnostics.csv", "charges.csv"] {
        let a = std::fs::read(dir.path().join("a/tiny/main").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b/tiny/main").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn missing_field_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.toml", &TINY.replace("steps = 200\n", ""));
    let o = cli(&["run", "--config", "bad.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("steps"), "{}", stderr(&o));
}

#[test]
fn unknown_suite_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["verify", "no-such-suite"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown suite"));
}

#[test]
fn verify_prints_pass_lines_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["verify", "covariance-transport", "--out", "v.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().count() >= 4 && text.lines().all(|l| l.starts_with("PASS")), "{text}");
    assert!(dir.path().join("v.json").is_file());
}

#[test]
fn report_on_empty_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let o = cli(&["report", "empty"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn infeasible_width_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
id = "narrow"
anchor = "narrow"

[base]
model = { kind = "deep_linear", dims = [4, 4, 4, 4] }
data = { d_x = 4, input_cov = { kind = "isotropic", variance = 1.0 }, teacher = { kind = "random_gaussian", d_y = 4 }, label_noise = { kind = "isotropic", variance = 1.0 }, n = 16, seed = 1 }
init = { kind = "xavier" }
optim = { algorithm = "sgd", lr = { kind = "constant", eta = 0.01 }, batch = 4, steps = 10, seed = 1 }

[[prediction]]
kind = "deep_linear_equilibrium"
name = "eq"
widths = [2, 4]
"#;
    write(dir.path(), "narrow.toml", text);
    let o = cli(&["predict", "--config", "narrow.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("rank exceeds width"), "{}", stderr(&o));
}

#[test]
fn unexpected_divergence_fails_the_run_and_expected_divergence_does_not() {
    let dir = tempfile::tempdir().unwrap();
    let diverging = TINY.replace("eta = 0.05", "eta = 50.0").replace("algorithm = \"sgd\"", "algorithm = \"gd\"");
    write(dir.path(), "div.toml", &diverging);
    let o = cli(&["run", "--config", "div.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let expected = diverging + "\n[[variant]]\nname = \"main\"\nexpect_divergence = true\n";
    write(dir.path(), "div_ok.toml", &expected);
    let o = cli(&["run", "--config", "div_ok.toml", "--out", "out2"], dir.path());
    assert!(o.status.success(), "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
}

#[test]
fn sweep_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "tiny.toml", TINY);
    let o = cli(&["sweep", "--config", "tiny.toml", "--out", "out", "--axis", "eta", "--values", "0.01,0.02"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for run in ["main-00", "main-01"] {
        assert!(dir.path().join("out/tiny").join(run).join("diagnostics.csv").is_file());
    }
    let o = cli(&["sweep", "--config", "tiny.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
