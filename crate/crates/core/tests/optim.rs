use nalgebra::DMatrix;
use noise_lab_core::data::{generate_dataset, DataSpec, InputCov, LabelNoise, Teacher};
use noise_lab_core::models::{Activation, InitScheme, ModelSpec, NetVariant};
use noise_lab_core::optim::{
    check_charge_identity, gd_step, run, sample_batch, sgd_step, sweep, Algorithm, DiagnosticSet, LrSchedule,
    OptimConfig, RunConfig, SweepAxis,
};
use noise_lab_core::{Data, Params, Symmetry};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn models() -> Vec<ModelSpec> {
    let nl = |activation| ModelSpec::TwoLayerNonlinear { d_x: 3, d: 4, d_y: 2, activation };
    vec![
        ModelSpec::TwoLayerLinear { d_x: 3, d: 4, d_y: 2 },
        ModelSpec::Rank1Factorization { d: 4 },
        ModelSpec::DeepLinear { dims: vec![3, 4, 3, 2] },
        nl(Activation::Relu),
        nl(Activation::LeakyRelu { alpha: 0.2 }),
        ModelSpec::ScaleInvariantNet { variant: NetVariant::A, d_x: 3, d: 4, d_y: 2 },
        ModelSpec::ScaleInvariantNet { variant: NetVariant::B, d_x: 3, d: 4, d_y: 2 },
    ]
}

fn data_spec(spec: &ModelSpec, n: usize, seed: u64) -> DataSpec {
    DataSpec {
        d_x: spec.d_x(),
        input_cov: InputCov::Isotropic { variance: 1.0 },
        teacher: Teacher::RandomGaussian { d_y: spec.d_y(), rank: None, scale: 1.0 },
        label_noise: LabelNoise::Isotropic { variance: 0.5 },
        n,
        seed,
    }
}

fn descriptors(spec: &ModelSpec) -> Vec<Symmetry> {
    let layout = spec.layout().unwrap();
    spec.declared_symmetries().into_iter().map(|(id, k)| Symmetry::new(id, k, &layout).unwrap()).collect()
}

fn config(spec: ModelSpec, algorithm: Algorithm, eta: f64, steps: usize) -> RunConfig {
    RunConfig {
        data: data_spec(&spec, 64, 2),
        model: spec,
        init: InitScheme::Xavier,
        optim: OptimConfig {
            algorithm,
            lr: LrSchedule::Constant { eta },
            batch: 8,
            gamma: 0.0,
            steps,
            seed: 5,
            cadence: 10,
            dcdt_window: 5,
            diagnostics: DiagnosticSet { flow: true, lambda_star: true, ..DiagnosticSet::default() },
        },
        symmetries: Vec::new(),
        declared_symmetries: true,
    }
}

#[test]
fn charge_changes_by_the_second_order_term_each_step() {
    for spec in models() {
        let data: Data = generate_dataset(&data_spec(&spec, 40, 3)).unwrap();
        let descs = descriptors(&spec);
        let mut p: Params = spec.init(&InitScheme::Xavier, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let eta = 0.05;
        for _ in 0..50 {
            let idx = sample_batch(&mut rng, data.n(), 5);
            let (x, y) = data.batch(&idx);
            let (next, g) = sgd_step(&spec, &p, &x, &y, eta, 0.0).unwrap();
            let gf = g.flatten();
            for d in &descs {
                let dc = d.charge(&next).unwrap() - d.charge(&p).unwrap();
                // A is symmetric, so gᵀAg is the plain quadratic form of the dense generator.
                let want = eta * eta * (gf.transpose() * d.dense() * &gf)[(0, 0)];
                let scale = d.charge(&p).unwrap().abs() + eta * eta * gf.norm_squared();
                assert!((dc - want).abs() <= 1e-10 * scale, "{spec:?}/{}: {dc} vs {want}", d.id());
            }
            p = next;
        }
        let start: Params = spec.init(&InitScheme::Xavier, 4).unwrap();
        for alg in [Algorithm::Sgd, Algorithm::Gd] {
            for rep in check_charge_identity(&spec, &data, &start, &descs, alg, eta, 5, 0.0, 50, 9).unwrap() {
                assert_eq!(rep.steps, 50);
                assert!(rep.max_violation <= 1e-10 && rep.max_violation_no_drift <= 1e-10, "{spec:?}: {rep:?}");
            }
        }
    }
}

#[test]
fn weight_decay_adds_the_drift_term() {
    let spec = ModelSpec::TwoLayerLinear { d_x: 3, d: 4, d_y: 2 };
    let data: Data = generate_dataset(&data_spec(&spec, 40, 3)).unwrap();
    let descs = descriptors(&spec);
    let start: Params = spec.init(&InitScheme::Xavier, 4).unwrap();
    let reps = check_charge_identity(&spec, &data, &start, &descs, Algorithm::Sgd, 0.05, 5, 0.1, 50, 9).unwrap();
    for rep in reps {
        assert!(rep.max_violation <= 1e-10, "{rep:?}");
        assert!(rep.max_violation_no_drift > 1e-6, "{rep:?}");
    }
}

#[test]
fn scaling_charges_never_decrease() {
    for variant in [NetVariant::A, NetVariant::B] {
        let spec = ModelSpec::ScaleInvariantNet { variant, d_x: 3, d: 4, d_y: 2 };
        let data: Data = generate_dataset(&data_spec(&spec, 40, 6)).unwrap();
        let descs = descriptors(&spec);
        let start: Params = spec.init(&InitScheme::Xavier, 1).unwrap();
        for alg in [Algorithm::Sgd, Algorithm::Gd] {
            let mut p = start.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            for _ in 0..200 {
                let next = match alg {
                    Algorithm::Gd => gd_step(&spec, &p, &data, 0.2, 0.0).unwrap().0,
                    Algorithm::Sgd => {
                        let (x, y) = data.batch(&sample_batch(&mut rng, data.n(), 4));
                        sgd_step(&spec, &p, &x, &y, 0.2, 0.0).unwrap().0
                    }
                };
                for d in &descs {
                    assert!(d.charge(&next).unwrap() >= d.charge(&p).unwrap(), "{variant:?}/{}", d.id());
                }
                p = next;
            }
        }
    }
}

#[test]
fn interpolating_minimum_is_a_fixed_point_of_sgd() {
    let spec = ModelSpec::TwoLayerLinear { d_x: 3, d: 3, d_y: 3 };
    let ds = DataSpec { teacher: Teacher::Identity, label_noise: LabelNoise::None, ..data_spec(&spec, 30, 1) };
    let data: Data = generate_dataset(&ds).unwrap();
    let eye = DMatrix::<f64>::identity(3, 3);
    let p = Params::new([("W", eye.clone()), ("U", eye)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut q = p.clone();
    for _ in 0..100 {
        let (x, y) = data.batch(&sample_batch(&mut rng, data.n(), 3));
        q = sgd_step(&spec, &q, &x, &y, 0.1, 0.0).unwrap().0;
    }
    assert!((q.flatten() - p.flatten()).amax() < 1e-14);
}

/// `E[ΔC] = η²(ḡᵀAḡ + Tr[ΣA]/S)` when batches are drawn with replacement.
#[test]
fn expected_charge_change_matches_monte_carlo() {
    let spec = ModelSpec::TwoLayerLinear { d_x: 3, d: 4, d_y: 2 };
    let data: Data = generate_dataset(&data_spec(&spec, 20, 8)).unwrap();
    let p: Params = spec.init(&InitScheme::Xavier, 3).unwrap();
    let rows = spec.per_sample_grads(&p, data.x(), data.y(), 0.0).unwrap();
    let (eta, batch, draws) = (0.1, 4, 40_000);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for d in descriptors(&spec) {
        let a = d.dense();
        let mean = rows.mean();
        let tr: f64 = (0..rows.n())
            .map(|i| {
                let c = rows.row(i) - &mean;
                (c.transpose() * &a * &c)[(0, 0)]
            })
            .sum::<f64>()
            / rows.n() as f64;
        let want = eta * eta * ((mean.transpose() * &a * &mean)[(0, 0)] + tr / batch as f64);
        let c0 = d.charge(&p).unwrap();
        let dcs: Vec<f64> = (0..draws)
            .map(|_| {
                let (x, y) = data.batch(&sample_batch(&mut rng, data.n(), batch));
                d.charge(&sgd_step(&spec, &p, &x, &y, eta, 0.0).unwrap().0).unwrap() - c0
            })
            .collect();
        let m = dcs.iter().sum::<f64>() / draws as f64;
        let var = dcs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((m - want).abs() <= 4.0 * se, "{}: {m} vs {want} (se {se})", d.id());
    }
}

#[test]
fn runs_are_deterministic() {
    let cfg = config(ModelSpec::TwoLayerLinear { d_x: 3, d: 4, d_y: 2 }, Algorithm::Sgd, 0.05, 300);
    let csvs = |cfg: &RunConfig| {
        let rec = run::<f64>(cfg).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        rec.write_diagnostics_csv(&mut a).unwrap();
        rec.write_charges_csv(&mut b).unwrap();
        (a, b)
    };
    let first = csvs(&cfg);
    assert_eq!(first, csvs(&cfg));
    let mut other = cfg.clone();
    other.optim.seed += 1;
    assert_ne!(first, csvs(&other));
}

#[test]
fn single_value_sweep_reproduces_the_run() {
    let cfg = config(ModelSpec::TwoLayerLinear { d_x: 3, d: 4, d_y: 2 }, Algorithm::Sgd, 0.05, 200);
    let alone = run::<f64>(&cfg).unwrap();
    let swept = sweep::<f64>(&cfg, SweepAxis::Eta, &[0.05]).unwrap();
    assert_eq!(swept.len(), 1);
    assert_eq!(swept[0].rows, alone.rows);
    assert_eq!(swept[0].charges, alone.charges);
    assert_eq!(swept[0].terminal, alone.terminal);
}

#[test]
fn divergence_is_recorded_rather_than_raised() {
    let cfg = config(ModelSpec::TwoLayerLinear { d_x: 3, d: 4, d_y: 2 }, Algorithm::Gd, 50.0, 1000);
    let rec = run::<f64>(&cfg).unwrap();
    let div = rec.divergence.as_ref().expect("a rate of 50 must diverge");
    assert_eq!(div.step, rec.steps_completed + 1);
    assert!(rec.steps_completed < 1000);
    assert!(rec.rows.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn step_schedule_switches_at_its_boundary() {
    let mut cfg = config(ModelSpec::TwoLayerLinear { d_x: 3, d: 4, d_y: 2 }, Algorithm::Gd, 0.01, 40);
    cfg.optim.lr = LrSchedule::Step { start: 0.01, end: 0.02, switch: 20 };
    let rec = run::<f64>(&cfg).unwrap();
    let last = rec.rows.last().unwrap();
    assert!((last.time - (20.0 * 0.01 + 20.0 * 0.02)).abs() < 1e-12);
    assert!(rec.rows.iter().find(|r| r.step == 10).unwrap().eta == 0.01);
    assert!(rec.rows.iter().find(|r| r.step == 30).unwrap().eta == 0.02);
}
