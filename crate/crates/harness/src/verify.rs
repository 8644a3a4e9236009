//! Invariant suites that need no experiment config.

use nalgebra::{DMatrix, SymmetricEigen};
use noise_lab_core::data::{generate_dataset, DataSpec, InputCov, LabelNoise, Teacher};
use noise_lab_core::equilibria::{deep_linear_equilibrium, deep_linear_stationarity};
use noise_lab_core::models::{Activation, InitScheme, ModelSpec, NetVariant};
use noise_lab_core::noise::estimate_full_covariance;
use noise_lab_core::optim::{check_charge_identity, gd_step, Algorithm};
use noise_lab_core::symmetry::{SpectralProfile, SpectralTerm};
use noise_lab_core::{Data, Params, Symmetry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SUITES: [&str; 5] =
    ["charge-identity", "covariance-transport", "lambda-oracle", "deep-linear-stationarity", "gradient-flow-limit"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyCheck {
    pub suite: String,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(suite: &str, name: impl Into<String>, measured: f64, tolerance: f64) -> VerifyCheck {
    VerifyCheck { suite: suite.into(), name: name.into(), measured, tolerance, pass: measured <= tolerance }
}

pub fn run_suite(name: &str) -> Option<anyhow::Result<Vec<VerifyCheck>>> {
    Some(match name {
        "charge-identity" => charge_identity(),
        "covariance-transport" => covariance_transport(),
        "lambda-oracle" => lambda_oracle(100, 1_000_000, 7),
        "deep-linear-stationarity" => deep_linear_stationarity_suite(),
        "gradient-flow-limit" => gradient_flow_limit(),
        _ => return None,
    })
}

fn data(d_x: usize, d_y: usize, n: usize, seed: u64) -> anyhow::Result<Data> {
    let spec = DataSpec {
        d_x,
        input_cov: InputCov::Isotropic { variance: 1.0 },
        teacher: Teacher::RandomGaussian { d_y, rank: None, scale: 1.0 },
        label_noise: LabelNoise::Isotropic { variance: 0.25 },
        n,
        seed,
    };
    Ok(generate_dataset(&spec)?)
}

/// Every model kind with its declared exponential symmetries.
pub fn bundled_models() -> Vec<(String, ModelSpec)> {
    let nl = |activation| ModelSpec::TwoLayerNonlinear { d_x: 3, d: 4, d_y: 2, activation };
    vec![
        ("two_layer_linear".into(), ModelSpec::TwoLayerLinear { d_x: 3, d: 4, d_y: 2 }),
        ("rank1".into(), ModelSpec::Rank1Factorization { d: 4 }),
        ("deep_linear".into(), ModelSpec::DeepLinear { dims: vec![3, 4, 4, 2] }),
        ("relu".into(), nl(Activation::Relu)),
        ("leaky_relu".into(), nl(Activation::LeakyRelu { alpha: 0.1 })),
        ("net_a".into(), ModelSpec::ScaleInvariantNet { variant: NetVariant::A, d_x: 3, d: 4, d_y: 2 }),
        ("net_b".into(), ModelSpec::ScaleInvariantNet { variant: NetVariant::B, d_x: 3, d: 4, d_y: 2 }),
    ]
}

fn descriptors(spec: &ModelSpec) -> anyhow::Result<Vec<Symmetry>> {
    let layout = spec.layout()?;
    Ok(spec
        .declared_symmetries()
        .into_iter()
        .map(|(id, k)| Symmetry::new(id, k, &layout))
        .collect::<noise_lab_core::Result<_>>()?)
}

/// `|ΔC − η²gᵀAg| ≤ 1e-10 (|C| + η²‖g‖²)` at every one of 1000 steps, γ = 0.
pub fn charge_identity() -> anyhow::Result<Vec<VerifyCheck>> {
    let mut out = Vec::new();
    for (name, spec) in bundled_models() {
        let ds = data(spec.d_x(), spec.d_y(), 64, 11)?;
        let p0: Params = spec.init(&InitScheme::Xavier, 5)?;
        let descs = descriptors(&spec)?;
        for alg in [Algorithm::Sgd, Algorithm::Gd] {
            for rep in check_charge_identity(&spec, &ds, &p0, &descs, alg, 0.01, 8, 0.0, 1000, 3)? {
                out.push(check(
                    "charge-identity",
                    format!("{name}/{}/{alg:?}", rep.symmetry),
                    rep.max_violation_no_drift,
                    1e-10,
                ));
            }
        }
    }
    Ok(out)
}

fn dense_exp(a: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let e = SymmetricEigen::new(a.clone());
    let d = e.eigenvalues.map(|m| (lambda * m).exp());
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// `Σ(e^{λA}θ) = e^{−λA} Σ(θ) e^{−λA}` on the two-layer linear model.
pub fn covariance_transport() -> anyhow::Result<Vec<VerifyCheck>> {
    let spec = ModelSpec::TwoLayerLinear { d_x: 3, d: 4, d_y: 2 };
    let ds = data(3, 2, 200, 21)?;
    let p: Params = spec.init(&InitScheme::Xavier, 9)?;
    let mut out = Vec::new();
    for desc in descriptors(&spec)? {
        let a = desc.dense();
        let s0 = match estimate_full_covariance(&spec.per_sample_grads(&p, ds.x(), ds.y(), 0.0)?)? {
            noise_lab_core::noise::NoiseStats::Full { sigma, .. } => sigma,
            _ => unreachable!("full covariance requested"),
        };
        for lambda in [1.0, -1.0, 0.1, -0.1] {
            let e = dense_exp(&a, lambda);
            let moved = Params::from_flat(p.layout(), (&e * p.flatten()).as_slice())?;
            let s1 = match estimate_full_covariance(&spec.per_sample_grads(&moved, ds.x(), ds.y(), 0.0)?)? {
                noise_lab_core::noise::NoiseStats::Full { sigma, .. } => sigma,
                _ => unreachable!("full covariance requested"),
            };
            let einv = dense_exp(&a, -lambda);
            let want = &einv * &s0 * &einv;
            let rel = (&s1 - &want).norm() / want.norm();
            out.push(check("covariance-transport", format!("{}/λ={lambda}", desc.id()), rel, 1e-8));
        }
    }
    Ok(out)
}

/// One random flow profile: 2 to 8 terms with `|μ| ∈ [0.2, 2]`, at least one
/// of each sign, coefficients in `[0.1, 10]`.
pub fn random_profile(rng: &mut ChaCha8Rng) -> SpectralProfile<f64> {
    let k = rng.gen_range(2..=8);
    let terms = (0..k)
        .map(|i| {
            let m = rng.gen_range(0.2..2.0);
            let sign = match i {
                0 => 1.0,
                1 => -1.0,
                _ => if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            };
            SpectralTerm { mu: sign * m, noise: rng.gen_range(0.1..10.0), weight: rng.gen_range(0.1..10.0) }
        })
        .collect();
    SpectralProfile { terms }
}

/// Grid evaluation of `I(λ) = I₁ − I₂` on `λ_j = lo + j h` by repeated
/// multiplication, independent of the solver's closed form.
pub fn grid_flow(p: &SpectralProfile<f64>, gamma: f64, sigma_sq: f64, lo: f64, h: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for t in &p.terms {
        let m = t.mu.abs();
        // Noise part decays like e^{−2λμ}; weight-decay part grows like e^{2λμ}.
        let parts = [(-2.0 * t.mu, sigma_sq * m * t.noise, t.mu > 0.0), (2.0 * t.mu, 4.0 * gamma * m * t.weight, t.mu < 0.0)];
        for (rate, coef, positive) in parts {
            let sign = if positive { 1.0 } else { -1.0 };
            let step = (rate * h).exp();
            let mut v = coef * (rate * lo).exp();
            for o in out.iter_mut() {
                *o += sign * v;
                v *= step;
            }
        }
    }
    out
}

/// Bisection against a grid scan on `[−50, 50]`.
pub fn lambda_oracle(instances: usize, points: usize, seed: u64) -> anyhow::Result<Vec<VerifyCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (-50.0, 50.0);
    let h = (hi - lo) / (points - 1) as f64;
    let (mut worst_err, mut worst_mono, mut worst_sign) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..instances {
        let p = random_profile(&mut rng);
        let gamma = rng.gen_range(0.01..1.0);
        let sigma_sq = rng.gen_range(0.01..1.0);
        let grid = grid_flow(&p, gamma, sigma_sq, lo, h, points);
        let increases = grid.windows(2).filter(|w| w[1] > w[0]).count();
        let changes: Vec<usize> = (0..points - 1).filter(|&j| (grid[j] > 0.0) != (grid[j + 1] > 0.0)).collect();
        worst_mono = worst_mono.max(increases as f64);
        worst_sign = worst_sign.max((changes.len() as f64 - 1.0).abs());
        let solved = p.solve(gamma, sigma_sq)?.lambda;
        let err = match changes.first() {
            Some(&j) => {
                let root = lo + (j as f64 + 0.5) * h;
                (solved - root).abs()
            }
            None => f64::INFINITY,
        };
        worst_err = worst_err.max(err);
    }
    Ok(vec![
        check("lambda-oracle", format!("max |Δλ| over {instances} instances"), worst_err, 1e-4),
        check("lambda-oracle", "grid points where I(λ) increases", worst_mono, 0.0),
        check("lambda-oracle", "|sign changes − 1|", worst_sign, 0.0),
    ])
}

pub fn deep_linear_stationarity_suite() -> anyhow::Result<Vec<VerifyCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut out = Vec::new();
    for (case, depth) in [2usize, 3, 4, 5].into_iter().enumerate() {
        let (d_x, d_y, w) = (4, 3, 5);
        let v = DMatrix::from_fn(d_y, d_x, |_, _| rng.gen_range(-1.0..1.0));
        let spd = |k: usize, rng: &mut ChaCha8Rng| {
            let b = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
            &b * b.transpose() + DMatrix::identity(k, k) * 0.5
        };
        let (sx, se) = (spd(d_x, &mut rng), spd(d_y, &mut rng));
        let eq = deep_linear_equilibrium(&v, &sx, &se, depth, &vec![w; depth - 1], None)?;
        let worst = deep_linear_stationarity(&eq.layers, &sx, &se).into_iter().fold(0.0, f64::max);
        let prod = eq.layers.iter().skip(1).fold(eq.layers[0].clone(), |acc, l| l * acc);
        out.push(check("deep-linear-stationarity", format!("case {case}: D={depth} stationarity"), worst, 1e-8));
        out.push(check(
            "deep-linear-stationarity",
            format!("case {case}: D={depth} product equals teacher"),
            (&prod - &v).norm() / v.norm(),
            1e-8,
        ));
    }
    Ok(out)
}

/// Total GD drift of a charge over a fixed horizon `ηT`.
pub fn gd_charge_drift(eta: f64, steps: usize) -> anyhow::Result<Vec<(String, f64)>> {
    let spec = ModelSpec::TwoLayerLinear { d_x: 4, d: 5, d_y: 3 };
    let ds = data(4, 3, 128, 31)?;
    let mut p: Params = spec.init(&InitScheme::Xavier, 2)?;
    let descs = descriptors(&spec)?;
    let c0: Vec<f64> = descs.iter().map(|d| d.charge(&p)).collect::<noise_lab_core::Result<_>>()?;
    for _ in 0..steps {
        p = gd_step(&spec, &p, &ds, eta, 0.0)?.0;
    }
    descs
        .iter()
        .zip(c0)
        .map(|(d, c)| Ok((d.id().to_string(), (d.charge(&p)? - c).abs())))
        .collect()
}

/// Halving η at fixed ηT halves the GD charge drift, within 20%.
pub fn gradient_flow_limit() -> anyhow::Result<Vec<VerifyCheck>> {
    let (eta, steps) = (0.02, 500);
    let full = gd_charge_drift(eta, steps)?;
    let half = gd_charge_drift(eta / 2.0, 2 * steps)?;
    Ok(full
        .into_iter()
        .zip(half)
        .map(|((id, a), (_, b))| check("gradient-flow-limit", format!("{id}: |drift(η/2)/drift(η) − ½|/½"), ((b / a) - 0.5).abs() / 0.5, 0.2))
        .collect())
}
