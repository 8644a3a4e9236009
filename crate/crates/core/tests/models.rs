use nalgebra::{DMatrix, DVector};
use noise_lab_core::data::{generate_dataset, DataSpec, InputCov, LabelNoise, Teacher};
use noise_lab_core::models::{per_sample_grad, per_sample_loss, Activation, InitScheme, ModelSpec, NetVariant};
use noise_lab_core::{Data, Params, Symmetry};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn every_model() -> Vec<ModelSpec> {
    let nl = |activation| ModelSpec::TwoLayerNonlinear { d_x: 3, d: 4, d_y: 2, activation };
    vec![
        ModelSpec::TwoLayerLinear { d_x: 3, d: 4, d_y: 2 },
        ModelSpec::Rank1Factorization { d: 5 },
        ModelSpec::DeepLinear { dims: vec![3, 4, 5, 2] },
        nl(Activation::Tanh),
        nl(Activation::Relu),
        nl(Activation::LeakyRelu { alpha: 0.1 }),
        nl(Activation::Swish),
        ModelSpec::ScaleInvariantNet { variant: NetVariant::A, d_x: 3, d: 4, d_y: 2 },
        ModelSpec::ScaleInvariantNet { variant: NetVariant::B, d_x: 3, d: 4, d_y: 2 },
    ]
}

fn data_for(spec: &ModelSpec, n: usize, seed: u64) -> Data {
    let ds = DataSpec {
        d_x: spec.d_x(),
        input_cov: InputCov::Isotropic { variance: 1.0 },
        teacher: Teacher::RandomGaussian { d_y: spec.d_y(), rank: None, scale: 1.0 },
        label_noise: LabelNoise::Isotropic { variance: 0.5 },
        n,
        seed,
    };
    generate_dataset(&ds).unwrap()
}

fn descriptors(spec: &ModelSpec) -> Vec<Symmetry> {
    let layout = spec.layout().unwrap();
    spec.declared_symmetries().into_iter().map(|(id, k)| Symmetry::new(id, k, &layout).unwrap()).collect()
}

#[test]
fn gradients_match_central_differences() {
    for spec in every_model() {
        let data = data_for(&spec, 6, 1);
        let p: Params = spec.init(&InitScheme::Xavier, 2).unwrap();
        let layout = p.layout().clone();
        for gamma in [0.0, 0.05] {
            for i in 0..data.n() {
                let sample = data.sample(i);
                let g = per_sample_grad(&spec, &p, &sample, gamma).unwrap().flatten();
                let theta = p.flatten();
                let h = 1e-6;
                let fd = DVector::from_fn(theta.len(), |j, _| {
                    let mut a = theta.clone();
                    let mut b = theta.clone();
                    a[j] += h;
                    b[j] -= h;
                    let la = per_sample_loss(&spec, &Params::from_flat(&layout, a.as_slice()).unwrap(), &sample, gamma).unwrap();
                    let lb = per_sample_loss(&spec, &Params::from_flat(&layout, b.as_slice()).unwrap(), &sample, gamma).unwrap();
                    (la - lb) / (2.0 * h)
                });
                let rel = (&g - &fd).norm() / g.norm().max(1e-12);
                assert!(rel <= 1e-6, "{spec:?} γ={gamma} sample {i}: relative error {rel}");
            }
        }
    }
}

#[test]
fn batch_and_full_gradients_agree_with_per_sample_rows() {
    for spec in every_model() {
        let data = data_for(&spec, 20, 3);
        let p: Params = spec.init(&InitScheme::Kaiming, 4).unwrap();
        let rows = spec.per_sample_grads(&p, data.x(), data.y(), 0.1).unwrap();
        let batch = spec.grad(&p, data.x(), data.y(), 0.1).unwrap().flatten();
        let full = spec.full_grad(&p, &data, 0.1).unwrap().flatten();
        assert!((rows.mean() - &batch).norm() <= 1e-12 * batch.norm(), "{spec:?}");
        assert!((&full - &batch).norm() <= 1e-10 * batch.norm(), "{spec:?}");
        let loss = spec.loss(&p, data.x(), data.y(), 0.1).unwrap();
        assert!((spec.full_loss(&p, &data, 0.1).unwrap() - loss).abs() <= 1e-10 * loss);
    }
}

#[test]
fn deep_linear_matches_a_straight_line_evaluator() {
    let dims = [3usize, 4, 2, 3];
    let spec = ModelSpec::DeepLinear { dims: dims.to_vec() };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p: Params = spec.init(&InitScheme::UniformNorm { std: 0.8 }, 5).unwrap();
    let x = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
    let got = spec.predict(&p, &x).unwrap();
    for s in 0..5 {
        let mut h: Vec<f64> = (0..3).map(|j| x[(s, j)]).collect();
        for (layer, (_, w)) in p.iter().enumerate() {
            let out_dim = dims[layer + 1];
            let mut next = vec![0.0; out_dim];
            for (r, v) in next.iter_mut().enumerate() {
                for (c, hc) in h.iter().enumerate() {
                    *v += w[(r, c)] * hc;
                }
            }
            h = next;
        }
        for (j, v) in h.iter().enumerate() {
            assert!((got[(s, j)] - v).abs() < 1e-12);
        }
    }
}

#[test]
fn scale_invariant_nets_ignore_layer_scale() {
    for variant in [NetVariant::A, NetVariant::B] {
        let spec = ModelSpec::ScaleInvariantNet { variant, d_x: 3, d: 4, d_y: 2 };
        let data = data_for(&spec, 10, 9);
        let p: Params = spec.init(&InitScheme::Xavier, 1).unwrap();
        let mut q = p.clone();
        q.scale_mut(3.7);
        let (a, b) = (spec.predict(&p, data.x()).unwrap(), spec.predict(&q, data.x()).unwrap());
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn loss_is_invariant_along_declared_orbits() {
    for spec in every_model() {
        let data = data_for(&spec, 12, 11);
        let p: Params = spec.init(&InitScheme::Xavier, 6).unwrap();
        let base = spec.sample_losses(&p, data.x(), data.y()).unwrap();
        for desc in descriptors(&spec) {
            for lambda in [-2.0, -0.7, 0.3, 2.0] {
                let moved = desc.exp_map(lambda, &p).unwrap();
                let l = spec.sample_losses(&moved, data.x(), data.y()).unwrap();
                let rel = (&l - &base).amax() / base.amax();
                assert!(rel <= 1e-10, "{spec:?}/{} at λ={lambda}: {rel}", desc.id());
            }
        }
    }
}

#[test]
fn per_sample_gradients_are_tangent_to_orbits_without_weight_decay() {
    for spec in every_model() {
        let data = data_for(&spec, 12, 13);
        let p: Params = spec.init(&InitScheme::Xavier, 8).unwrap();
        let rows = spec.per_sample_grads(&p, data.x(), data.y(), 0.0).unwrap();
        for desc in descriptors(&spec) {
            let a_theta = desc.apply(&p.flatten());
            for s in 0..rows.n() {
                let g = rows.row(s);
                let dot = g.dot(&a_theta);
                assert!(dot.abs() <= 1e-12 * g.norm() * a_theta.norm().max(1.0), "{spec:?}/{}: {dot}", desc.id());
            }
        }
    }
}

#[test]
fn relu_kink_takes_the_left_slope() {
    let spec = ModelSpec::TwoLayerNonlinear { d_x: 1, d: 1, d_y: 1, activation: Activation::Relu };
    // Pre-activation Wx is exactly 0 while x and the residual are not.
    let p = Params::new([("W", DMatrix::from_element(1, 1, 0.0)), ("U", DMatrix::from_element(1, 1, 1.0))]).unwrap();
    let x = DMatrix::from_element(1, 1, 1.0);
    let y = DMatrix::from_element(1, 1, 1.0);
    let g = spec.grad(&p, &x, &y, 0.0).unwrap();
    assert_eq!(g.get("W").unwrap()[(0, 0)], 0.0);
    let leaky = ModelSpec::TwoLayerNonlinear { d_x: 1, d: 1, d_y: 1, activation: Activation::LeakyRelu { alpha: 0.1 } };
    let g = leaky.grad(&p, &x, &y, 0.0).unwrap();
    assert!((g.get("W").unwrap()[(0, 0)] - 2.0 * -1.0 * 0.1).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn orbit_invariance_for_random_parameters(seed in 0u64..100_000, lambda in -2.0f64..2.0) {
        let spec = ModelSpec::TwoLayerLinear { d_x: 3, d: 4, d_y: 2 };
        let data = data_for(&spec, 8, seed);
        let p: Params = spec.init(&InitScheme::UniformNorm { std: 0.9 }, seed).unwrap();
        let base = spec.loss(&p, data.x(), data.y(), 0.0).unwrap();
        for desc in descriptors(&spec) {
            let l = spec.loss(&desc.exp_map(lambda, &p).unwrap(), data.x(), data.y(), 0.0).unwrap();
            prop_assert!((l - base).abs() <= 1e-10 * base);
        }
    }
}
