use nalgebra::{DMatrix, DVector};

use super::policy::GaussianPolicy;
use super::RlError;
use crate::autodiff::Gradients;
use crate::physics_losses::{physics_penalty, physics_residual};
use crate::pinn::PinnModel;

/// Frozen acceleration proxy plus the penalty weight.
#[derive(Debug, Clone, Copy)]
pub struct PhysicsCoach<'a> {
    pub pinn: &'a PinnModel,
    pub lambda: f64,
}

/// Oracle terms for the states of a penalty batch.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyTerms<'a> {
    pub mass: &'a [&'a DMatrix<f64>],
    pub bias: &'a [&'a DVector<f64>],
}

/// Batch-mean `‖M Φ(s, a) + b − a‖²` with `a = τ_max ⊙ tanh(u)` for the
/// given pre-squash rows `u`, and its cotangent on `u`. The proxy is only
/// read.
pub fn penalty_cotangent(
    policy: &GaussianPolicy,
    u: &DMatrix<f64>,
    obs: &DMatrix<f64>,
    pinn: &PinnModel,
    terms: &PenaltyTerms,
) -> Result<(f64, DMatrix<f64>), RlError> {
    let b = obs.nrows();
    let n = policy.n_actions();
    let actions = policy.mean_actions(u);
    let rows: Vec<(DVector<f64>, DVector<f64>)> = (0..b)
        .map(|i| (obs.row(i).transpose(), actions.row(i).transpose()))
        .collect();
    let x = pinn.input_batch(rows.iter().map(|(o, a)| (o, a)))?;
    let (qdd_hat, tape) = pinn.forward(&x)?;
    let inv_b = 1.0 / b as f64;
    let mut value = 0.0;
    let mut d_qdd = DMatrix::zeros(b, n);
    let mut d_action = DMatrix::zeros(b, n);
    for i in 0..b {
        let phi = qdd_hat.row(i).transpose();
        let r = physics_residual(terms.mass[i], terms.bias[i], &phi, &rows[i].1);
        value += physics_penalty(&r);
        let r_bar = 2.0 * inv_b * &r;
        d_qdd.set_row(i, &(terms.mass[i].transpose() * &r_bar).transpose());
        d_action.set_row(i, &(-r_bar).transpose());
    }
    let (_, d_x) = pinn.backward(&tape, &d_qdd)?;
    let obs_dim = pinn.obs_dim();
    d_action += d_x.columns(obs_dim, n);
    let limits = policy.torque_limit();
    let d_u = DMatrix::from_fn(b, n, |i, j| {
        let t = u[(i, j)].tanh();
        d_action[(i, j)] * limits[j] * (1.0 - t * t)
    });
    Ok((value * inv_b, d_u))
}

/// `L_phys` and its gradient on the policy parameters.
pub fn piper_penalty(
    policy: &GaussianPolicy,
    pinn: &PinnModel,
    obs: &DMatrix<f64>,
    terms: &PenaltyTerms,
) -> Result<(f64, Gradients), RlError> {
    let heads = policy.heads(obs)?;
    let (value, d_mean) = penalty_cotangent(policy, &heads.mean, obs, pinn, terms)?;
    let zeros = DMatrix::zeros(d_mean.nrows(), d_mean.ncols());
    let grads = policy.backward(&heads, &d_mean, &zeros)?;
    Ok((value, grads))
}
