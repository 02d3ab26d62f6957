use nalgebra::{DMatrix, DVector};

use crate::autodiff::{Activation, AutodiffError, Gradients, Mlp, Tape};
use crate::rng::PiperRng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(1 − tanh²u)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Heads of a policy forward pass over a batch.
#[derive(Debug, Clone)]
pub struct PolicyHeads {
    pub mean: DMatrix<f64>,
    /// Clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: DMatrix<f64>,
    /// Unclamped network output, used to zero gradients outside the clamp.
    pub raw_log_std: DMatrix<f64>,
    pub tape: Tape,
}

/// A sampled action with its pre-squash value.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    /// Torque `τ_max ⊙ tanh(u)`.
    pub action: DVector<f64>,
    pub u: DVector<f64>,
    pub log_prob: f64,
}

/// Diagonal Gaussian over pre-squash actions, squashed by `tanh` and scaled
/// to the torque limits.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    net: Mlp,
    torque_limit: DVector<f64>,
}

impl GaussianPolicy {
    pub fn new(
        obs_dim: usize,
        torque_limit: DVector<f64>,
        hidden: &[usize],
        init_log_std: f64,
        rng: &mut PiperRng,
    ) -> Result<Self, AutodiffError> {
        let n = torque_limit.len();
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * n);
        let mut net = Mlp::new(&sizes, Activation::Tanh, rng)?.with_output_scale(0.01);
        let last = net.layers_mut().last_mut().expect("output layer");
        for j in n..2 * n {
            last.bias[j] = init_log_std;
        }
        Ok(Self { net, torque_limit })
    }

    /// Wraps a trained network whose output holds `2N` heads.
    pub fn from_network(net: Mlp, torque_limit: DVector<f64>) -> Result<Self, AutodiffError> {
        if net.output_dim() != 2 * torque_limit.len() {
            return Err(AutodiffError::Shape {
                what: "policy output",
                expected: 2 * torque_limit.len(),
                found: net.output_dim(),
            });
        }
        Ok(Self { net, torque_limit })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn torque_limit(&self) -> &DVector<f64> {
        &self.torque_limit
    }

    pub fn n_actions(&self) -> usize {
        self.torque_limit.len()
    }

    pub fn heads(&self, obs: &DMatrix<f64>) -> Result<PolicyHeads, AutodiffError> {
        let (out, tape) = self.net.forward(obs)?;
        let n = self.n_actions();
        let mean = out.columns(0, n).into_owned();
        let raw_log_std = out.columns(n, n).into_owned();
        let log_std = raw_log_std.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok(PolicyHeads {
            mean,
            log_std,
            raw_log_std,
            tape,
        })
    }

    /// Reverse pass for cotangents on the mean and (clamped) log-std heads.
    pub fn backward(
        &self,
        heads: &PolicyHeads,
        d_mean: &DMatrix<f64>,
        d_log_std: &DMatrix<f64>,
    ) -> Result<Gradients, AutodiffError> {
        let n = self.n_actions();
        let b = d_mean.nrows();
        let mut d_out = DMatrix::zeros(b, 2 * n);
        d_out.columns_mut(0, n).copy_from(d_mean);
        for i in 0..b {
            for j in 0..n {
                let raw = heads.raw_log_std[(i, j)];
                if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                    d_out[(i, n + j)] = d_log_std[(i, j)];
                }
            }
        }
        Ok(self.net.backward(&heads.tape, &d_out)?.0)
    }

    /// `τ_max ⊙ tanh(u)`.
    pub fn squash(&self, u: &DVector<f64>) -> DVector<f64> {
        u.zip_map(&self.torque_limit, |u, l| l * u.tanh())
    }

    /// Log-density of the squashed action given its pre-squash value.
    pub fn log_prob(&self, u: &DVector<f64>, mean: &DVector<f64>, log_std: &DVector<f64>) -> f64 {
        (0..u.len())
            .map(|j| {
                let z = (u[j] - mean[j]) * (-log_std[j]).exp();
                -0.5 * z * z - log_std[j] - HALF_LN_2PI - log_one_minus_tanh_sq(u[j]) - self.torque_limit[j].ln()
            })
            .sum()
    }

    /// Samples (or, when `deterministic`, takes the mode of) the action for
    /// one observation.
    pub fn sample_action(
        &self,
        obs: &DVector<f64>,
        rng: &mut PiperRng,
        deterministic: bool,
    ) -> Result<ActionSample, AutodiffError> {
        let row = DMatrix::from_row_slice(1, obs.len(), obs.as_slice());
        let out = self.net.predict(&row)?;
        let n = self.n_actions();
        let mean = DVector::from_iterator(n, (0..n).map(|j| out[(0, j)]));
        let log_std = DVector::from_iterator(n, (0..n).map(|j| out[(0, n + j)].clamp(LOG_STD_MIN, LOG_STD_MAX)));
        let u = if deterministic {
            mean.clone()
        } else {
            DVector::from_iterator(n, (0..n).map(|j| mean[j] + log_std[j].exp() * rng.normal()))
        };
        Ok(ActionSample {
            action: self.squash(&u),
            log_prob: self.log_prob(&u, &mean, &log_std),
            u,
        })
    }

    /// Deterministic actions `τ_max ⊙ tanh(mean)` for a batch of rows.
    pub fn mean_actions(&self, mean: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = mean.map(|m| m.tanh());
        for (j, mut col) in a.column_iter_mut().enumerate() {
            col *= self.torque_limit[j];
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn policy_1d() -> GaussianPolicy {
        GaussianPolicy::new(2, dvector![2.0], &[8], -0.3, &mut PiperRng::new(0)).unwrap()
    }

    #[test]
    fn deterministic_action_is_squashed_mean() {
        let p = policy_1d();
        let obs = dvector![0.3, -0.4];
        let s = p.sample_action(&obs, &mut PiperRng::new(1), true).unwrap();
        let heads = p.heads(&DMatrix::from_row_slice(1, 2, obs.as_slice())).unwrap();
        assert_eq!(s.action[0], 2.0 * heads.mean[(0, 0)].tanh());
    }

    #[test]
    fn actions_stay_within_limits() {
        let limits = dvector![6.0, 3.0];
        let mut p = GaussianPolicy::new(3, limits.clone(), &[8], 2.0, &mut PiperRng::new(2)).unwrap();
        let mut flat = p.network().params();
        flat.iter_mut().for_each(|v| *v *= 50.0);
        p.network_mut().set_params(&flat).unwrap();
        let mut rng = PiperRng::new(3);
        for _ in 0..500 {
            let obs = DVector::from_fn(3, |_, _| rng.uniform(-5.0, 5.0));
            let s = p.sample_action(&obs, &mut rng, false).unwrap();
            for j in 0..2 {
                assert!(s.action[j].abs() <= limits[j]);
            }
            assert!(s.log_prob.is_finite());
        }
    }

    #[test]
    fn log_prob_integrates_to_one_and_matches_change_of_variables() {
        let p = policy_1d();
        let mean = dvector![0.4];
        let log_std = dvector![-0.7];
        let tau = 2.0;
        // Midpoint rule over the open interval (−τ, τ).
        let n = 400_000;
        let h = 2.0 * tau / n as f64;
        let mut total = 0.0;
        for k in 0..n {
            let a = -tau + (k as f64 + 0.5) * h;
            let u = (a / tau).atanh();
            total += p.log_prob(&dvector![u], &mean, &log_std).exp() * h;
        }
        assert!((total - 1.0).abs() <= 1e-6, "{total}");

        let sigma = log_std[0].exp();
        for a in [-1.5, -0.2, 0.0, 0.9, 1.9] {
            let u = (a / tau).atanh();
            let gauss = (-0.5 * ((u - mean[0]) / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let du_da = 1.0 / (tau * (1.0 - (a / tau) * (a / tau)));
            let expected = (gauss * du_da).ln();
            assert!((p.log_prob(&dvector![u], &mean, &log_std) - expected).abs() <= 1e-6);
        }
    }

    #[test]
    fn stable_log_jacobian() {
        for u in [-40.0, -3.0, 0.0, 0.5, 12.0, 40.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            let stable = log_one_minus_tanh_sq(u);
            if u.abs() < 5.0 {
                assert!((direct - stable).abs() < 1e-9);
            }
            assert!(stable.is_finite());
        }
    }

    #[test]
    fn log_std_gradient_is_zero_outside_clamp() {
        let mut p = policy_1d();
        let n_params = p.network().param_count();
        let mut flat = vec![0.0; n_params];
        let bias_index = n_params - 1;
        flat[bias_index] = 10.0;
        p.network_mut().set_params(&flat).unwrap();
        let heads = p.heads(&DMatrix::zeros(1, 2)).unwrap();
        assert_eq!(heads.log_std[(0, 0)], LOG_STD_MAX);
        let g = p.backward(&heads, &DMatrix::zeros(1, 1), &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
    }
}
