use nalgebra::{dmatrix, dvector, Vector2};

use super::*;
use crate::autodiff::grad_check;
use crate::dynamics::{self, ChainModel, ExternalForce};
use crate::oracle::OracleSample;
use crate::sim::{Env, EnvSpec};

fn random_policy_records(spec: EnvSpec, n: usize, seed: u64) -> Vec<TransitionRecord> {
    let mut env = Env::new(spec).unwrap();
    let mut rng = PiperRng::new(seed).split("actions");
    let limits = env.spec().chain.torque_limit_vector();
    let mut obs = env.reset(seed);
    let mut episode = 0;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let a = limits.map(|l| rng.uniform(-l, l));
        let step = env.step(&a).unwrap();
        out.push(TransitionRecord::from_env_step(env.spec(), &obs, &step, 0.5).unwrap());
        obs = if step.done() {
            episode += 1;
            env.reset(seed * 1000 + episode)
        } else {
            step.obs
        };
    }
    out
}

fn synthetic_record(mass: DMatrix<f64>, bias: DVector<f64>, action: DVector<f64>, qdd_obs: DVector<f64>) -> TransitionRecord {
    let n = action.len();
    TransitionRecord {
        obs: DVector::from_element(2 * n, 0.1),
        action: action.clone(),
        reward: 0.0,
        next_obs: DVector::zeros(2 * n),
        terminated: false,
        truncated: false,
        oracle: OracleSample {
            tau_eff: &mass * &qdd_obs + &bias,
            mass,
            bias,
            tau_ext: DVector::zeros(n),
            gravity: DVector::zeros(n),
            qd: DVector::from_element(n, 0.7),
            mass_rate: DMatrix::from_element(n, n, 0.05),
            qdd_obs,
            contact_outlier: false,
        },
    }
}

/// A model whose network is zero, so its output is the frozen label mean.
fn constant_model(records: &[TransitionRecord]) -> PinnModel {
    let n = records[0].action.len();
    let mut model = PinnModel::new(2 * n, n, &[4], Activation::Tanh, &mut PiperRng::new(0)).unwrap();
    model.freeze_normalization(records.iter());
    let zeros = vec![0.0; model.param_count()];
    model.network_mut().set_params(&zeros).unwrap();
    model
}

#[test]
fn reference_layout_is_within_budget() {
    let spec = EnvSpec::reach2d();
    let model = PinnModel::reference(spec.obs_dim(), spec.n_joints(), &mut PiperRng::new(42)).unwrap();
    let count = model.param_count() as f64;
    let budget = REFERENCE_PARAM_BUDGET as f64;
    assert!((count - budget).abs() <= 0.1 * budget, "{count}");
    assert_eq!(model.network().output_dim(), spec.n_joints());
}

#[test]
fn prediction_is_deterministic_and_finite() {
    let recs = random_policy_records(EnvSpec::reach2d(), 50, 1);
    let mut model = PinnModel::new(8, 2, &[16, 16], Activation::Tanh, &mut PiperRng::new(3)).unwrap();
    model.freeze_normalization(recs.iter());
    for r in &recs {
        let a = model.predict_accel(&r.obs, &r.action).unwrap();
        assert_eq!(a, model.predict_accel(&r.obs, &r.action).unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
    }
    assert!(model.predict_accel(&dvector![1.0], &dvector![0.0, 0.0]).is_err());
}

#[test]
fn loss_is_zero_on_exact_labels_without_residual() {
    let qdd = dvector![1.5, -2.0];
    let m = dmatrix![1.0, 0.1; 0.1, 0.5];
    let recs: Vec<_> = (0..4)
        .map(|k| synthetic_record(m.clone(), dvector![0.2, k as f64], dvector![0.3, 0.4], qdd.clone()))
        .collect();
    let model = constant_model(&recs);
    let batch: Vec<_> = recs.iter().collect();
    let (parts, grads) = pinn_loss(&model, &batch, &PinnLossWeights::new(0.0, 0.0)).unwrap();
    assert_eq!(parts.total, 0.0);
    assert!(grads.to_flat().iter().all(|g| *g == 0.0));
}

#[test]
fn zero_beta_is_plain_mse() {
    let recs = random_policy_records(EnvSpec::reach2d(), 64, 2);
    let mut model = PinnModel::new(8, 2, &[16], Activation::Tanh, &mut PiperRng::new(4)).unwrap();
    model.freeze_normalization(recs.iter());
    let batch: Vec<_> = recs.iter().collect();
    let (parts, _) = pinn_loss(&model, &batch, &PinnLossWeights::new(0.0, 0.0)).unwrap();
    let mut mse = 0.0;
    for r in &recs {
        let p = model.predict_accel(&r.obs, &r.action).unwrap();
        let w = if r.oracle.contact_outlier { 0.5 } else { 1.0 };
        mse += w * (p - &r.oracle.qdd_obs).norm_squared();
    }
    mse /= recs.len() as f64;
    assert!((parts.total - mse).abs() <= 1e-12 * mse.max(1.0));
}

#[test]
fn residual_term_vanishes_when_dynamics_hold() {
    let tau = dvector![0.8];
    let recs = vec![synthetic_record(dmatrix![1.0], dvector![0.0], tau.clone(), tau.clone())];
    let model = constant_model(&recs);
    assert_eq!(model.predict_accel(&recs[0].obs, &tau).unwrap(), tau);
    let batch: Vec<_> = recs.iter().collect();
    for beta in [0.0, 0.1, 10.0] {
        let (parts, _) = pinn_loss(&model, &batch, &PinnLossWeights::new(beta, 0.0)).unwrap();
        assert_eq!(parts.residual, 0.0);
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    for spec in [EnvSpec::reach2d(), EnvSpec::push2d()] {
        let recs = random_policy_records(spec.clone(), 24, 5);
        let mut model = PinnModel::new(spec.obs_dim(), 2, &[12, 12], Activation::Tanh, &mut PiperRng::new(6)).unwrap();
        model.freeze_normalization(recs.iter());
        let batch: Vec<_> = recs.iter().collect();
        let weights = PinnLossWeights::new(0.1, 0.1);
        let theta0 = model.network().params();
        let report = grad_check(
            &theta0,
            |theta| {
                let mut m = model.clone();
                m.network_mut().set_params(theta).unwrap();
                let (parts, g) = pinn_loss(&m, &batch, &weights).unwrap();
                (parts.total, g.to_flat())
            },
            1e-5,
            100,
            &mut PiperRng::new(7),
        );
        assert!(report.max_relative_error <= 1e-4, "{report:?}");
    }
}

#[test]
fn input_cotangent_matches_finite_differences() {
    let recs = random_policy_records(EnvSpec::reach2d(), 3, 8);
    let mut model = PinnModel::new(8, 2, &[10], Activation::Tanh, &mut PiperRng::new(9)).unwrap();
    model.freeze_normalization(recs.iter());
    let x0 = model.input_batch(recs.iter().map(|r| (&r.obs, &r.action))).unwrap();
    let (rows, cols) = x0.shape();
    let report = grad_check(
        x0.as_slice(),
        |flat| {
            let x = DMatrix::from_column_slice(rows, cols, flat);
            let (y, tape) = model.forward(&x).unwrap();
            let (_, dx) = model.backward(&tape, &y).unwrap();
            (0.5 * y.norm_squared(), dx.as_slice().to_vec())
        },
        1e-5,
        100,
        &mut PiperRng::new(10),
    );
    assert!(report.max_relative_error <= 1e-4, "{report:?}");
}

#[test]
fn update_on_empty_buffer_is_a_no_op() {
    let mut model = PinnModel::new(8, 2, &[8], Activation::Tanh, &mut PiperRng::new(0)).unwrap();
    let before = model.clone();
    let mut adam = Adam::for_network(1e-3, model.network());
    let out = pinn_update(
        &mut model,
        &ReplayBuffer::new(10),
        &mut adam,
        &PinnLossWeights::new(0.1, 0.0),
        32,
        &mut PiperRng::new(0),
    )
    .unwrap();
    assert!(out.is_none());
    assert_eq!(model, before);
    assert_eq!(adam.steps(), 0);
}

#[test]
fn learns_pendulum_accelerations() {
    let model_1 = ChainModel::new(
        vec![dynamics::Link::uniform_rod(1.0, 1.0)],
        Vector2::new(0.0, -9.81),
        vec![10.0],
    )
    .unwrap();
    let mut rng = PiperRng::new(11);
    let mut buffer = ReplayBuffer::new(4096);
    for _ in 0..2048 {
        let q = dvector![rng.uniform(-3.0, 3.0)];
        let qd = dvector![rng.uniform(-3.0, 3.0)];
        let tau = dvector![rng.uniform(-10.0, 10.0)];
        let qdd = dynamics::forward_dynamics(&model_1, &q, &qd, &tau, &ExternalForce::None).unwrap();
        let m = dynamics::mass_matrix(&model_1, &q).unwrap();
        let b = dynamics::bias_force(&model_1, &q, &qd, &ExternalForce::None).unwrap();
        let mut rec = synthetic_record(m, b, tau, qdd);
        rec.obs = dvector![q[0].cos(), q[0].sin()];
        rec.oracle.qd = qd;
        buffer.push(rec);
    }
    let all: Vec<_> = buffer.iter().collect();
    let mean = all.iter().map(|r| r.oracle.qdd_obs[0]).sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|r| (r.oracle.qdd_obs[0] - mean).powi(2)).sum::<f64>() / all.len() as f64;

    let mut model = PinnModel::new(2, 1, &[32, 32], Activation::Tanh, &mut PiperRng::new(12)).unwrap();
    let mut adam = Adam::for_network(3e-3, model.network());
    let weights = PinnLossWeights::new(0.1, 0.0);
    let mut sample_rng = PiperRng::new(13);
    for _ in 0..4000 {
        pinn_update(&mut model, &buffer, &mut adam, &weights, 128, &mut sample_rng).unwrap();
    }
    let mse = acceleration_mse(&model, &all).unwrap();
    assert!(mse <= 0.01 * var, "mse {mse} vs variance {var}");
}

#[test]
fn loss_drops_tenfold_on_a_fixed_dataset() {
    let mut ratios = Vec::new();
    for seed in 42..47u64 {
        let mut buffer = ReplayBuffer::new(4096);
        for r in random_policy_records(EnvSpec::reach2d(), 2000, seed) {
            buffer.push(r);
        }
        let mut model = PinnModel::new(8, 2, &[32, 32], Activation::Tanh, &mut PiperRng::new(seed).split("pinn")).unwrap();
        model.freeze_normalization(buffer.iter());
        let weights = PinnLossWeights::new(0.1, 0.0);
        let all: Vec<_> = buffer.iter().collect();
        let initial = pinn_loss(&model, &all, &weights).unwrap().0.total;
        let mut adam = Adam::for_network(1e-3, model.network());
        let mut rng = PiperRng::new(seed).split("pinn-batches");
        for _ in 0..5000 {
            pinn_update(&mut model, &buffer, &mut adam, &weights, 64, &mut rng).unwrap();
        }
        let after = pinn_loss(&model, &all, &weights).unwrap().0.total;
        ratios.push(after / initial);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(mean <= 0.1, "{ratios:?}");
}

#[test]
fn checkpoint_round_trip() {
    let recs = random_policy_records(EnvSpec::push2d(), 30, 14);
    let mut model = PinnModel::new(14, 2, &[8], Activation::Relu, &mut PiperRng::new(15)).unwrap();
    model.freeze_normalization(recs.iter());
    let back = PinnModel::from_json(&model.to_json()).unwrap();
    assert_eq!(back, model);
}
