use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gae::gae_advantages;
use super::penalty::{penalty_cotangent, PenaltyTerms, PhysicsCoach};
use super::policy::GaussianPolicy;
use super::{check_finite, PenaltyAction, RlError};
use crate::autodiff::{batch_from_rows, Activation, Adam, Mlp};
use crate::rng::PiperRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    /// Value-loss coefficient.
    pub c1: f64,
    /// Entropy bonus coefficient.
    pub c2: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            rollout_len: 2048,
            epochs: 10,
            minibatch: 64,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            c1: 0.5,
            c2: 0.0,
            lr: 3e-4,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            init_log_std: -0.5,
        }
    }
}

/// One collected step of an on-policy rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub obs: DVector<f64>,
    pub next_obs: DVector<f64>,
    /// Pre-squash action.
    pub u: DVector<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, step: RolloutStep) {
        self.steps.push(step);
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }
}

#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub cfg: PpoConfig,
    policy_adam: Adam,
    value_adam: Adam,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean penalty over minibatches, when the physics path ran.
    pub l_phys: Option<f64>,
    pub clip_fraction: f64,
}

impl PpoAgent {
    pub fn new(obs_dim: usize, torque_limit: DVector<f64>, cfg: PpoConfig, rng: &mut PiperRng) -> Result<Self, RlError> {
        let policy = GaussianPolicy::new(obs_dim, torque_limit, &cfg.hidden, cfg.init_log_std, &mut rng.split("policy"))?;
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(1);
        let value = Mlp::new(&sizes, Activation::Tanh, &mut rng.split("value"))?;
        Ok(Self {
            policy_adam: Adam::for_network(cfg.lr, policy.network()),
            value_adam: Adam::for_network(cfg.lr, &value),
            policy,
            value,
            cfg,
        })
    }
}

/// `(A − mean) / std` over the batch. A positive affine map, so the
/// ordering of advantages is preserved.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.len() < 2 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
}

/// Clipped-surrogate update over a complete rollout, plus the residual
/// penalty on the actor when `coach` is given with a positive weight.
pub fn ppo_update(
    agent: &mut PpoAgent,
    rollout: &Rollout,
    coach: Option<PhysicsCoach>,
    penalty_action: PenaltyAction,
    rng: &mut PiperRng,
) -> Result<PpoReport, RlError> {
    let steps = &rollout.steps;
    if steps.is_empty() {
        return Ok(PpoReport::default());
    }
    let cfg = agent.cfg.clone();
    let obs_dim = steps[0].obs.len();
    let n = agent.policy.n_actions();
    let obs_all = batch_from_rows(steps.iter().map(|s| &s.obs), obs_dim);
    let next_all = batch_from_rows(steps.iter().map(|s| &s.next_obs), obs_dim);
    let values: Vec<f64> = agent.value.predict(&obs_all)?.iter().copied().collect();
    let next_values: Vec<f64> = agent.value.predict(&next_all)?.iter().copied().collect();
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let terminated: Vec<bool> = steps.iter().map(|s| s.terminated).collect();
    let done: Vec<bool> = steps.iter().map(|s| s.terminated || s.truncated).collect();
    let (mut adv, returns) = gae_advantages(&rewards, &values, &next_values, &terminated, &done, cfg.gamma, cfg.gae_lambda);
    normalize_advantages(&mut adv);

    let coach = coach.filter(|c| c.lambda > 0.0);
    let mut report = PpoReport::default();
    let mut penalty_sum = 0.0;
    let mut batches = 0usize;
    let mut clipped = 0usize;
    let mut seen = 0usize;
    let mut order: Vec<usize> = (0..steps.len()).collect();
    for _ in 0..cfg.epochs {
        shuffle(&mut order, rng);
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            let b = chunk.len();
            let inv_b = 1.0 / b as f64;
            let obs = batch_from_rows(chunk.iter().map(|&i| &steps[i].obs), obs_dim);
            let heads = agent.policy.heads(&obs)?;
            let mut d_mean = DMatrix::zeros(b, n);
            let mut d_log_std = DMatrix::zeros(b, n);
            let mut surrogate = 0.0;
            let mut entropy = 0.0;
            for (row, &i) in chunk.iter().enumerate() {
                let s = &steps[i];
                let mean = heads.mean.row(row).transpose();
                let log_std = heads.log_std.row(row).transpose();
                let logp = agent.policy.log_prob(&s.u, &mean, &log_std);
                let ratio = (logp - s.log_prob).exp();
                let a = adv[i];
                let clipped_ratio = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
                surrogate += (ratio * a).min(clipped_ratio * a);
                let active = (a >= 0.0 && ratio <= 1.0 + cfg.clip) || (a < 0.0 && ratio >= 1.0 - cfg.clip);
                if !active {
                    clipped += 1;
                }
                seen += 1;
                let d_logp = if active { -inv_b * a * ratio } else { 0.0 };
                for j in 0..n {
                    let inv_sigma = (-log_std[j]).exp();
                    let z = (s.u[j] - mean[j]) * inv_sigma;
                    d_mean[(row, j)] = d_logp * z * inv_sigma;
                    d_log_std[(row, j)] = d_logp * (z * z - 1.0) - cfg.c2 * inv_b;
                    entropy += log_std[j] + 0.5 + super::policy::HALF_LN_2PI;
                }
            }
            let policy_loss = -surrogate * inv_b;
            entropy *= inv_b;

            if let Some(c) = coach {
                let mass: Vec<&DMatrix<f64>> = chunk.iter().map(|&i| &steps[i].mass).collect();
                let bias: Vec<&DVector<f64>> = chunk.iter().map(|&i| &steps[i].bias).collect();
                let terms = PenaltyTerms {
                    mass: &mass,
                    bias: &bias,
                };
                let (value, d_m, d_s) = penalty_head_cotangents(&agent.policy, &heads, &obs, c, &terms, penalty_action, rng)?;
                d_mean += d_m * c.lambda;
                d_log_std += d_s * c.lambda;
                penalty_sum += value;
            }
            check_finite("ppo policy loss", policy_loss)?;
            let mut grads = agent.policy.backward(&heads, &d_mean, &d_log_std)?;
            grads.clip_norm(cfg.max_grad_norm);
            agent.policy_adam.step_network(agent.policy.network_mut(), &grads);

            let (v, tape) = agent.value.forward(&obs)?;
            let mut d_v = DMatrix::zeros(b, 1);
            let mut value_loss = 0.0;
            for (row, &i) in chunk.iter().enumerate() {
                let e = v[(row, 0)] - returns[i];
                value_loss += cfg.c1 * e * e * inv_b;
                d_v[(row, 0)] = 2.0 * cfg.c1 * e * inv_b;
            }
            check_finite("ppo value loss", value_loss)?;
            let (mut vg, _) = agent.value.backward(&tape, &d_v)?;
            vg.clip_norm(cfg.max_grad_norm);
            agent.value_adam.step_network(&mut agent.value, &vg);

            report.policy_loss = policy_loss;
            report.value_loss = value_loss;
            report.entropy = entropy;
            batches += 1;
        }
    }
    if coach.is_some() && batches > 0 {
        report.l_phys = Some(penalty_sum / batches as f64);
    }
    report.clip_fraction = clipped as f64 / seen.max(1) as f64;
    Ok(report)
}

/// Penalty value and its cotangents on the mean and log-std heads.
pub(crate) fn penalty_head_cotangents(
    policy: &GaussianPolicy,
    heads: &super::policy::PolicyHeads,
    obs: &DMatrix<f64>,
    coach: PhysicsCoach,
    terms: &PenaltyTerms,
    mode: PenaltyAction,
    rng: &mut PiperRng,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>), RlError> {
    match mode {
        PenaltyAction::Mean => {
            let (value, d_u) = penalty_cotangent(policy, &heads.mean, obs, coach.pinn, terms)?;
            let zeros = DMatrix::zeros(d_u.nrows(), d_u.ncols());
            Ok((value, d_u, zeros))
        }
        PenaltyAction::Sampled => {
            let (b, n) = heads.mean.shape();
            let eps = DMatrix::from_fn(b, n, |_, _| rng.normal());
            let sigma_eps = heads.log_std.map(f64::exp).component_mul(&eps);
            let u = &heads.mean + &sigma_eps;
            let (value, d_u) = penalty_cotangent(policy, &u, obs, coach.pinn, terms)?;
            let d_s = d_u.component_mul(&sigma_eps);
            Ok((value, d_u, d_s))
        }
    }
}

/// Fisher-Yates with the run's update stream.
pub(crate) fn shuffle(v: &mut [usize], rng: &mut PiperRng) {
    for i in (1..v.len()).rev() {
        let j = rng.index(i + 1);
        v.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn toy_rollout(agent: &PpoAgent, len: usize, seed: u64) -> Rollout {
        let mut rng = PiperRng::new(seed);
        let mut r = Rollout::default();
        for t in 0..len {
            let obs = DVector::from_fn(3, |_, _| rng.uniform(-1.0, 1.0));
            let s = agent.policy.sample_action(&obs, &mut rng, false).unwrap();
            r.push(RolloutStep {
                next_obs: obs.map(|v| v * 0.9),
                reward: -(s.action[0] - 0.5 * obs[0]).powi(2),
                obs,
                u: s.u,
                log_prob: s.log_prob,
                terminated: false,
                truncated: t % 10 == 9,
                mass: DMatrix::identity(1, 1) * 0.3,
                bias: dvector![0.1],
            });
        }
        r
    }

    fn agent() -> PpoAgent {
        let cfg = PpoConfig {
            hidden: vec![8],
            minibatch: 16,
            epochs: 3,
            ..PpoConfig::default()
        };
        PpoAgent::new(3, dvector![2.0], cfg, &mut PiperRng::new(1)).unwrap()
    }

    #[test]
    fn normalization_preserves_order() {
        let mut a = vec![3.0, -1.0, 0.5, 10.0];
        let orig = a.clone();
        normalize_advantages(&mut a);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(orig[i] < orig[j], a[i] < a[j]);
            }
        }
    }

    #[test]
    fn update_is_deterministic() {
        let base = agent();
        let rollout = toy_rollout(&base, 64, 2);
        let mut a = base.clone();
        let mut b = base.clone();
        ppo_update(&mut a, &rollout, None, PenaltyAction::Mean, &mut PiperRng::new(3)).unwrap();
        ppo_update(&mut b, &rollout, None, PenaltyAction::Mean, &mut PiperRng::new(3)).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.value, b.value);
        assert_ne!(a.policy, base.policy);
    }

    #[test]
    fn zero_weight_coach_is_the_plain_update() {
        let base = agent();
        let rollout = toy_rollout(&base, 64, 4);
        let pinn = crate::pinn::PinnModel::new(3, 1, &[4], Activation::Tanh, &mut PiperRng::new(5)).unwrap();
        let mut plain = base.clone();
        let mut coached = base.clone();
        ppo_update(&mut plain, &rollout, None, PenaltyAction::Mean, &mut PiperRng::new(6)).unwrap();
        let coach = PhysicsCoach { pinn: &pinn, lambda: 0.0 };
        let report = ppo_update(&mut coached, &rollout, Some(coach), PenaltyAction::Mean, &mut PiperRng::new(6)).unwrap();
        assert_eq!(plain.policy.network().params(), coached.policy.network().params());
        assert_eq!(plain.value.params(), coached.value.params());
        assert!(report.l_phys.is_none());
    }

    #[test]
    fn surrogate_term_respects_the_clip_bound() {
        // Every term min(rA, clip(r)A) is at most (1 + ε)A for A > 0.
        let eps = 0.2;
        for r in [0.1f64, 0.8, 1.0, 1.2, 1.5, 5.0] {
            for a in [0.3f64, 2.0] {
                let term = (r * a).min(f64::clamp(r, 1.0 - eps, 1.0 + eps) * a);
                assert!(term <= (1.0 + eps) * a + 1e-15);
            }
        }
    }

    #[test]
    fn sampled_penalty_gradient_matches_finite_differences() {
        let base = agent();
        let pinn = crate::pinn::PinnModel::new(3, 1, &[6], Activation::Tanh, &mut PiperRng::new(8)).unwrap();
        let obs = DMatrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let mass: Vec<DMatrix<f64>> = (0..5).map(|i| DMatrix::identity(1, 1) * (0.2 + 0.1 * i as f64)).collect();
        let bias: Vec<DVector<f64>> = (0..5).map(|i| dvector![0.3 - 0.1 * i as f64]).collect();
        let mr: Vec<_> = mass.iter().collect();
        let br: Vec<_> = bias.iter().collect();
        let terms = PenaltyTerms { mass: &mr, bias: &br };
        let coach = PhysicsCoach { pinn: &pinn, lambda: 1.0 };
        let theta0 = base.policy.network().params();
        let report = grad_check(
            &theta0,
            |theta| {
                let mut p = base.policy.clone();
                p.network_mut().set_params(theta).unwrap();
                let heads = p.heads(&obs).unwrap();
                let (v, dm, ds) =
                    penalty_head_cotangents(&p, &heads, &obs, coach, &terms, PenaltyAction::Sampled, &mut PiperRng::new(9))
                        .unwrap();
                (v, p.backward(&heads, &dm, &ds).unwrap().to_flat())
            },
            1e-5,
            100,
            &mut PiperRng::new(10),
        );
        assert!(report.max_relative_error <= 1e-4, "{report:?}");
    }

    proptest! {
        #[test]
        fn shuffle_is_a_permutation(seed in 0u64..500, n in 1usize..64) {
            let mut v: Vec<usize> = (0..n).collect();
            shuffle(&mut v, &mut PiperRng::new(seed));
            let mut sorted = v.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        }
    }
}
