use nalgebra::{DMatrix, DVector, SymmetricEigen};
use noise_lab_core::data::{generate_dataset, DataSpec, InputCov, LabelNoise, Teacher};
use noise_lab_core::models::{InitScheme, ModelSpec};
use noise_lab_core::noise::{block_covariance, estimate_full_covariance, trace_only, trace_sigma_a, GradientSet, NoiseStats};
use noise_lab_core::params::BlockLayout;
use noise_lab_core::symmetry::SymmetryKind;
use noise_lab_core::{Data, Params, Symmetry};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn full(stats: &NoiseStats<f64>) -> &DMatrix<f64> {
    match stats {
        NoiseStats::Full { sigma, .. } => sigma,
        _ => panic!("expected a full covariance"),
    }
}

/// Covariance straight from the definition, one outer product at a time.
fn naive_covariance(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rows.nrows();
    let mean: DVector<f64> = (0..n).map(|i| rows.row(i).transpose()).fold(DVector::zeros(rows.ncols()), |a, r| a + r) / n as f64;
    (0..n).fold(DMatrix::zeros(rows.ncols(), rows.ncols()), |acc, i| {
        let d = rows.row(i).transpose() - &mean;
        acc + &d * d.transpose()
    }) / n as f64
}

#[test]
fn monte_carlo_covariance_of_a_known_gaussian() {
    let truth = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 0.5]);
    let chol = truth.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grads: Vec<DVector<f64>> = (0..1000)
        .map(|_| {
            let z = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            DVector::from_vec(vec![1.0, -2.0, 0.5]) + &chol * z
        })
        .collect();
    let stats = estimate_full_covariance(&GradientSet::from_vectors(&grads).unwrap()).unwrap();
    assert!((full(&stats) - &truth).norm() <= 0.1 * truth.norm());
}

#[test]
fn trace_matches_dense_assembly_for_random_generators() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let layout = BlockLayout::new([("a", 3, 1), ("b", 3, 1)]).unwrap();
    let rows = DMatrix::from_fn(10, 6, |_, _| rng.gen_range(-1.0..1.0));
    let grads = GradientSet::new(layout.clone(), rows.clone()).unwrap();
    let sigma = naive_covariance(&rows);
    let rescale = Symmetry::new("r", SymmetryKind::Rescaling { plus: vec!["a".into()], minus: vec!["b".into()] }, &layout).unwrap();
    let m = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
    let sym = (&m + m.transpose()) * 0.5;
    let rows_vec: Vec<Vec<f64>> = (0..6).map(|i| sym.row(i).iter().copied().collect()).collect();
    let generic =
        Symmetry::new("g", SymmetryKind::GenericDense { blocks: vec!["a".into(), "b".into()], matrix: rows_vec }, &layout).unwrap();
    for desc in [rescale, generic] {
        let want = (&sigma * desc.dense()).trace();
        let got = trace_sigma_a(&grads, &desc).unwrap();
        assert!((got - want).abs() < 1e-13 * (1.0 + want.abs()), "{}", desc.id());
        let stats = trace_only(&grads, std::slice::from_ref(&desc)).unwrap();
        assert!((stats.trace(&desc).unwrap() - want).abs() < 1e-13 * (1.0 + want.abs()));
        let f = estimate_full_covariance(&grads).unwrap();
        assert!((f.trace(&desc).unwrap() - want).abs() < 1e-13 * (1.0 + want.abs()));
    }
}

#[test]
fn identity_generator_gives_total_variance_and_constant_streams_give_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layout = BlockLayout::new([("t", 4, 1)]).unwrap();
    let rows = DMatrix::from_fn(20, 4, |_, _| rng.gen_range(-1.0..1.0));
    let grads = GradientSet::new(layout.clone(), rows.clone()).unwrap();
    let scaling = Symmetry::new("s", SymmetryKind::Scaling { blocks: vec!["t".into()] }, &layout).unwrap();
    let total = naive_covariance(&rows).trace();
    assert!((trace_sigma_a(&grads, &scaling).unwrap() - total).abs() < 1e-13);
    assert!(total >= 0.0);
    let flat = DMatrix::from_fn(20, 4, |_, j| j as f64);
    assert_eq!(trace_sigma_a(&GradientSet::new(layout, flat).unwrap(), &scaling).unwrap(), 0.0);
}

#[test]
fn block_covariance_is_the_diagonal_block_of_the_full_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let layout = BlockLayout::new([("a", 2, 2), ("b", 3, 1)]).unwrap();
    let rows = DMatrix::from_fn(15, 7, |_, _| rng.gen_range(-1.0..1.0));
    let grads = GradientSet::new(layout.clone(), rows).unwrap();
    let stats = estimate_full_covariance(&grads).unwrap();
    let sigma = full(&stats);
    for name in ["a", "b"] {
        let info = layout.get(name).unwrap();
        let want = sigma.view((info.offset, info.offset), (info.len(), info.len()));
        assert!((block_covariance(&grads, name).unwrap() - want).norm() < 1e-14);
    }
    let whole = GradientSet::new(BlockLayout::new([("t", 7, 1)]).unwrap(), grads.rows().clone()).unwrap();
    assert!((block_covariance(&whole, "t").unwrap() - sigma).norm() < 1e-14);
}

/// `Tr[ΣB̃] = Σ_r Cov(U_{rk}, U_{rl}) − Σ_c Cov(W_{kc}, W_{lc})`, assembled
/// from the block covariances of U and W.
#[test]
fn double_rotation_trace_from_block_covariances() {
    let spec = ModelSpec::TwoLayerLinear { d_x: 3, d: 4, d_y: 2 };
    let data: Data = generate_dataset(&DataSpec {
        d_x: 3,
        input_cov: InputCov::Isotropic { variance: 1.0 },
        teacher: Teacher::RandomGaussian { d_y: 2, rank: None, scale: 1.0 },
        label_noise: LabelNoise::Isotropic { variance: 0.4 },
        n: 50,
        seed: 5,
    })
    .unwrap();
    let p: Params = spec.init(&InitScheme::Xavier, 6).unwrap();
    let grads = spec.per_sample_grads(&p, data.x(), data.y(), 0.0).unwrap();
    let (su, sw) = (block_covariance(&grads, "U").unwrap(), block_covariance(&grads, "W").unwrap());
    let layout = spec.layout().unwrap();
    for (k, l) in [(0, 1), (2, 3), (1, 1)] {
        let desc = Symmetry::new("r", SymmetryKind::DoubleRotation { upper: "U".into(), lower: "W".into(), k, l }, &layout).unwrap();
        // Column-major flattening: U[r, k] sits at r + k·d_y, W[k, c] at k + c·d.
        let up: f64 = (0..2).map(|r| su[(r + k * 2, r + l * 2)]).sum();
        let down: f64 = (0..3).map(|c| sw[(k + c * 4, l + c * 4)]).sum();
        let got = trace_sigma_a(&grads, &desc).unwrap();
        assert!((got - (up - down)).abs() < 1e-13 * (1.0 + got.abs()), "({k},{l})");
    }
}

#[test]
fn dataset_statistics_follow_their_specification() {
    let spec = DataSpec {
        d_x: 4,
        input_cov: InputCov::Isotropic { variance: 1.0 },
        teacher: Teacher::Identity,
        label_noise: LabelNoise::None,
        n: 100_000,
        seed: 7,
    };
    let data: Data = generate_dataset(&spec).unwrap();
    let cov = data.x().tr_mul(data.x()) / data.n() as f64;
    let i = DMatrix::identity(4, 4);
    assert!((cov - &i).norm() <= 0.05 * i.norm());
    assert_eq!(data.x(), data.y());

    let split = DataSpec { d_x: 6, input_cov: InputCov::Split { phi: 1.0 }, ..spec.clone() };
    assert_eq!(split.input_variances(), vec![1.0; 6]);
    let skew = DataSpec { d_x: 6, input_cov: InputCov::Split { phi: 0.5 }, ..spec };
    assert_eq!(skew.input_variances(), vec![0.5, 0.5, 0.5, 1.5, 1.5, 1.5]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimated_covariances_are_psd(seed in 0u64..100_000, n in 2usize..30, p in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-10.0..10.0));
        let grads = GradientSet::new(BlockLayout::new([("t", p, 1)]).unwrap(), rows.clone()).unwrap();
        let stats = estimate_full_covariance(&grads).unwrap();
        let sigma = full(&stats);
        prop_assert!((sigma - sigma.transpose()).norm() == 0.0);
        let eig = SymmetricEigen::new(sigma.clone()).eigenvalues;
        prop_assert!(eig.min() >= -1e-10 * eig.max().max(0.0));
        prop_assert!((sigma - naive_covariance(&rows)).norm() <= 1e-10 * (1.0 + sigma.norm()));
    }
}
