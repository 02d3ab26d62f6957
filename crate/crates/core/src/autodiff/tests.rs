use nalgebra::DMatrix;
use proptest::prelude::*;

use super::*;

fn random_batch(rng: &mut PiperRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// `L = ½ Σ (f(x) ⊙ w)²`-style scalar loss with a fixed weighting so every
/// output coordinate matters differently.
fn weighted_loss(out: &DMatrix<f64>, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let value = out.zip_map(w, |o, k| 0.5 * k * o * o).sum();
    (value, out.zip_map(w, |o, k| k * o))
}

#[test]
fn param_count_matches_layer_shapes() {
    let mut rng = PiperRng::new(0);
    let net = Mlp::new(&[16, 400, 400, 2], Activation::Relu, &mut rng).unwrap();
    assert_eq!(net.param_count(), 17 * 400 + 401 * 400 + 401 * 2);
    assert_eq!(net.params().len(), net.param_count());
}

#[test]
fn identity_layer_input_cotangent_equals_upstream() {
    let mut rng = PiperRng::new(1);
    let mut net = Mlp::new(&[3, 3], Activation::Tanh, &mut rng).unwrap();
    let mut flat = vec![0.0; net.param_count()];
    for i in 0..3 {
        flat[i * 3 + i] = 1.0;
    }
    net.set_params(&flat).unwrap();
    let x = random_batch(&mut rng, 5, 3);
    let (y, tape) = net.forward(&x).unwrap();
    assert_eq!(y, x);
    // d/dx ½‖x‖² = x.
    let (_, d_in) = net.backward(&tape, &y).unwrap();
    assert!((d_in - x).amax() < 1e-15);
}

#[test]
fn zero_cotangent_gives_zero_gradients() {
    let mut rng = PiperRng::new(2);
    let net = Mlp::new(&[4, 8, 8, 2], Activation::Tanh, &mut rng).unwrap();
    let x = random_batch(&mut rng, 6, 4);
    let (y, tape) = net.forward(&x).unwrap();
    let (g, d_in) = net.backward(&tape, &DMatrix::zeros(y.nrows(), y.ncols())).unwrap();
    assert!(g.to_flat().iter().all(|v| *v == 0.0));
    assert!(d_in.iter().all(|v| *v == 0.0));
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    let mut rng = PiperRng::new(3);
    let net = Mlp::new(&[5, 16, 16, 3], Activation::Tanh, &mut rng).unwrap();
    let x = random_batch(&mut rng, 7, 5);
    let w = DMatrix::from_fn(7, 3, |i, j| 0.5 + 0.1 * (i + 2 * j) as f64);
    let theta0 = net.params();
    let loss = |theta: &[f64]| {
        let mut n = net.clone();
        n.set_params(theta).unwrap();
        let (y, tape) = n.forward(&x).unwrap();
        let (v, d) = weighted_loss(&y, &w);
        let (g, _) = n.backward(&tape, &d).unwrap();
        (v, g.to_flat())
    };
    let report = grad_check(&theta0, loss, 1e-5, 100, &mut PiperRng::new(99));
    assert!(report.max_relative_error <= 1e-4, "{report:?}");
}

#[test]
fn input_cotangent_matches_finite_differences() {
    let mut rng = PiperRng::new(4);
    let net = Mlp::new(&[4, 12, 2], Activation::Tanh, &mut rng).unwrap();
    let x0 = random_batch(&mut rng, 3, 4);
    let w = DMatrix::from_element(3, 2, 1.0);
    let f = |flat: &[f64]| {
        let x = DMatrix::from_column_slice(3, 4, flat);
        let (y, tape) = net.forward(&x).unwrap();
        let (v, d) = weighted_loss(&y, &w);
        let (_, d_in) = net.backward(&tape, &d).unwrap();
        (v, d_in.as_slice().to_vec())
    };
    let report = grad_check(x0.as_slice(), f, 1e-5, 100, &mut PiperRng::new(5));
    assert!(report.max_relative_error <= 1e-4, "{report:?}");
}

#[test]
fn shapes_are_validated() {
    let mut rng = PiperRng::new(6);
    let net = Mlp::new(&[3, 4, 2], Activation::Relu, &mut rng).unwrap();
    assert!(net.forward(&DMatrix::zeros(2, 4)).is_err());
    let (_, tape) = net.forward(&DMatrix::zeros(2, 3)).unwrap();
    assert!(net.backward(&tape, &DMatrix::zeros(2, 3)).is_err());
    let mut net2 = net.clone();
    assert!(net2.set_params(&[0.0; 3]).is_err());
    assert!(Mlp::new(&[3], Activation::Relu, &mut rng).is_err());
}

#[test]
fn checkpoint_round_trip_is_lossless() {
    let mut rng = PiperRng::new(7);
    let net = Mlp::new(&[6, 10, 10, 2], Activation::Relu, &mut rng).unwrap();
    let text = net.to_checkpoint_json();
    let back = Mlp::from_checkpoint_json(&text).unwrap();
    assert_eq!(back, net);
    assert_eq!(back.to_checkpoint_json(), text);
    let bad = text.replace("piper-mlp", "other");
    assert!(Mlp::from_checkpoint_json(&bad).is_err());
}

#[test]
fn training_a_small_regression_reduces_loss() {
    let mut rng = PiperRng::new(8);
    let mut net = Mlp::new(&[1, 32, 1], Activation::Tanh, &mut rng).unwrap();
    let x = DMatrix::from_fn(64, 1, |i, _| -2.0 + 4.0 * i as f64 / 63.0);
    let target = x.map(|v| v.sin());
    let mut adam = Adam::for_network(1e-2, &net);
    let mse = |net: &Mlp| (net.predict(&x).unwrap() - &target).norm_squared() / 64.0;
    let before = mse(&net);
    for _ in 0..1500 {
        let (y, tape) = net.forward(&x).unwrap();
        let d = (&y - &target) * (2.0 / 64.0);
        let (g, _) = net.backward(&tape, &d).unwrap();
        adam.step_network(&mut net, &g);
    }
    let after = mse(&net);
    assert!(after < 1e-3 && after < before / 50.0, "{before} -> {after}");
}

#[test]
fn soft_update_interpolates() {
    let mut rng = PiperRng::new(9);
    let a = Mlp::new(&[2, 3, 1], Activation::Tanh, &mut rng).unwrap();
    let b = Mlp::new(&[2, 3, 1], Activation::Tanh, &mut rng).unwrap();
    let mut t = a.clone();
    t.soft_update_from(&b, 0.25);
    for ((x, y), z) in a.params().iter().zip(b.params()).zip(t.params()) {
        assert!((0.75 * x + 0.25 * y - z).abs() < 1e-15);
    }
    let mut same = a.clone();
    same.soft_update_from(&b, 0.0);
    assert_eq!(same, a);
}

#[test]
fn gradient_clipping_caps_the_norm() {
    let mut rng = PiperRng::new(10);
    let net = Mlp::new(&[2, 4, 1], Activation::Tanh, &mut rng).unwrap();
    let (y, tape) = net.forward(&random_batch(&mut rng, 4, 2)).unwrap();
    let (mut g, _) = net.backward(&tape, &y.map(|_| 100.0)).unwrap();
    g.clip_norm(1.0);
    assert!((g.norm() - 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn set_params_then_params_is_identity(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let mut rng = PiperRng::new(seed);
        let mut net = Mlp::new(&[3, 5, 2], Activation::Tanh, &mut rng).unwrap();
        let flat: Vec<f64> = net.params().iter().map(|v| v * scale).collect();
        net.set_params(&flat).unwrap();
        prop_assert_eq!(net.params(), flat);
    }

    #[test]
    fn batched_forward_equals_per_row(seed in 0u64..1000) {
        let mut rng = PiperRng::new(seed);
        let net = Mlp::new(&[3, 6, 2], Activation::Relu, &mut rng).unwrap();
        let x = random_batch(&mut rng, 4, 3);
        let batch = net.predict(&x).unwrap();
        for i in 0..4 {
            let row = x.row(i).transpose();
            let single = net.predict_one(&row).unwrap();
            for j in 0..2 {
                prop_assert!((single[j] - batch[(i, j)]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn fast_tanh_tracks_libm() {
    let mut rng = PiperRng::new(77);
    for _ in 0..100_000 {
        let x = rng.normal() * 4.0;
        let (a, b) = (super::fast_tanh(x), x.tanh());
        assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(f64::MIN_POSITIVE), "{x}: {a} vs {b}");
    }
    for x in [0.0, -0.0, 1e-300, -1e-12, 30.0, -400.0, f64::INFINITY] {
        assert!((super::fast_tanh(x) - x.tanh()).abs() <= 4.0 * f64::EPSILON * x.tanh().abs());
    }
}
