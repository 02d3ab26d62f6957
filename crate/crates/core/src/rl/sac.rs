use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::penalty::{PenaltyTerms, PhysicsCoach};
use super::policy::{GaussianPolicy, HALF_LN_2PI};
use super::ppo::penalty_head_cotangents;
use super::{check_finite, PenaltyAction, RlError, TransitionRecord};
use crate::autodiff::{Activation, Adam, Mlp};
use crate::rng::PiperRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub batch: usize,
    pub gamma: f64,
    pub polyak: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    /// `None` means `−N`.
    pub target_entropy: Option<f64>,
    /// Environment steps collected with uniform actions before updates start.
    pub learning_starts: usize,
    pub updates_per_step: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            batch: 256,
            gamma: 0.99,
            polyak: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            init_alpha: 1.0,
            target_entropy: None,
            learning_starts: 1000,
            updates_per_step: 1,
            replay_capacity: super::DEFAULT_REPLAY_CAPACITY,
            hidden: vec![64, 64],
        }
    }
}

/// Row-stacked minibatch for one SAC update.
#[derive(Debug, Clone, PartialEq)]
pub struct SacBatch {
    pub obs: DMatrix<f64>,
    /// Applied torques.
    pub action: DMatrix<f64>,
    pub reward: Vec<f64>,
    pub next_obs: DMatrix<f64>,
    pub terminated: Vec<bool>,
    pub mass: Vec<DMatrix<f64>>,
    pub bias: Vec<DVector<f64>>,
}

impl SacBatch {
    pub fn from_records(records: &[&TransitionRecord]) -> Self {
        let b = records.len();
        let obs_dim = records.first().map_or(0, |r| r.obs.len());
        let n = records.first().map_or(0, |r| r.action.len());
        Self {
            obs: DMatrix::from_fn(b, obs_dim, |i, j| records[i].obs[j]),
            action: DMatrix::from_fn(b, n, |i, j| records[i].action[j]),
            reward: records.iter().map(|r| r.reward).collect(),
            next_obs: DMatrix::from_fn(b, obs_dim, |i, j| records[i].next_obs[j]),
            terminated: records.iter().map(|r| r.terminated).collect(),
            mass: records.iter().map(|r| r.oracle.mass.clone()).collect(),
            bias: records.iter().map(|r| r.oracle.bias.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SacReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    /// Batch mean of `−log π`.
    pub entropy: f64,
    pub l_phys: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub policy: GaussianPolicy,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub log_alpha: f64,
    pub cfg: SacConfig,
    actor_adam: Adam,
    q1_adam: Adam,
    q2_adam: Adam,
    alpha_adam: Adam,
}

/// Sampled actions with everything the reparameterized gradient needs.
struct Reparam {
    u: DMatrix<f64>,
    eps: DMatrix<f64>,
    action: DMatrix<f64>,
    log_prob: Vec<f64>,
}

impl SacAgent {
    pub fn new(obs_dim: usize, torque_limit: DVector<f64>, cfg: SacConfig, rng: &mut PiperRng) -> Result<Self, RlError> {
        if !(cfg.polyak > 0.0 && cfg.polyak < 1.0) {
            return Err(RlError::Config(format!("polyak factor {} outside (0, 1)", cfg.polyak)));
        }
        if cfg.init_alpha <= 0.0 {
            return Err(RlError::Config(format!("initial alpha {} must be positive", cfg.init_alpha)));
        }
        let n = torque_limit.len();
        let policy = GaussianPolicy::new(obs_dim, torque_limit, &cfg.hidden, 0.0, &mut rng.split("policy"))?;
        let mut sizes = vec![obs_dim + n];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(1);
        let q1 = Mlp::new(&sizes, Activation::Relu, &mut rng.split("q1"))?;
        let q2 = Mlp::new(&sizes, Activation::Relu, &mut rng.split("q2"))?;
        Ok(Self {
            actor_adam: Adam::for_network(cfg.actor_lr, policy.network()),
            q1_adam: Adam::for_network(cfg.critic_lr, &q1),
            q2_adam: Adam::for_network(cfg.critic_lr, &q2),
            alpha_adam: Adam::new(cfg.alpha_lr, 1),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            log_alpha: cfg.init_alpha.ln(),
            policy,
            q1,
            q2,
            cfg,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.policy.n_actions() as f64))
    }

    /// Critic input rows `[obs, a / τ_max]`.
    pub fn critic_input(&self, obs: &DMatrix<f64>, action: &DMatrix<f64>) -> DMatrix<f64> {
        let d = obs.ncols();
        let limits = self.policy.torque_limit();
        DMatrix::from_fn(obs.nrows(), d + action.ncols(), |i, j| {
            if j < d {
                obs[(i, j)]
            } else {
                action[(i, j - d)] / limits[j - d]
            }
        })
    }

    /// Elementwise `min(Q₁′, Q₂′)` of the target critics.
    pub fn target_min_q(&self, obs: &DMatrix<f64>, action: &DMatrix<f64>) -> Result<Vec<f64>, RlError> {
        let x = self.critic_input(obs, action);
        let a = self.q1_target.predict(&x)?;
        let b = self.q2_target.predict(&x)?;
        Ok(a.iter().zip(b.iter()).map(|(a, b)| a.min(*b)).collect())
    }

    fn reparam(&self, heads: &super::PolicyHeads, rng: &mut PiperRng) -> Reparam {
        let (b, n) = heads.mean.shape();
        let eps = DMatrix::from_fn(b, n, |_, _| rng.normal());
        let u = &heads.mean + heads.log_std.map(f64::exp).component_mul(&eps);
        let action = self.policy.mean_actions(&u);
        let log_prob = (0..b)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        -0.5 * eps[(i, j)] * eps[(i, j)]
                            - heads.log_std[(i, j)]
                            - HALF_LN_2PI
                            - super::log_one_minus_tanh_sq(u[(i, j)])
                            - self.policy.torque_limit()[j].ln()
                    })
                    .sum()
            })
            .collect();
        Reparam { u, eps, action, log_prob }
    }
}

/// One critic step, one actor step (with the residual penalty when
/// `coach` carries a positive weight), one temperature step and the
/// Polyak update of the target critics.
pub fn sac_update(
    agent: &mut SacAgent,
    batch: &SacBatch,
    coach: Option<PhysicsCoach>,
    penalty_action: PenaltyAction,
    rng: &mut PiperRng,
) -> Result<SacReport, RlError> {
    let b = batch.len();
    if b == 0 {
        return Ok(SacReport::default());
    }
    let inv_b = 1.0 / b as f64;
    let alpha = agent.alpha();
    let gamma = agent.cfg.gamma;

    // Critic.
    let next_heads = agent.policy.heads(&batch.next_obs)?;
    let next = agent.reparam(&next_heads, rng);
    let q_next = agent.target_min_q(&batch.next_obs, &next.action)?;
    let y: Vec<f64> = (0..b)
        .map(|i| {
            let soft = q_next[i] - alpha * next.log_prob[i];
            batch.reward[i] + if batch.terminated[i] { 0.0 } else { gamma * soft }
        })
        .collect();
    let x = agent.critic_input(&batch.obs, &batch.action);
    let mut critic_loss = 0.0;
    for (net, adam) in [(&mut agent.q1, &mut agent.q1_adam), (&mut agent.q2, &mut agent.q2_adam)] {
        let (q, tape) = net.forward(&x)?;
        let d = DMatrix::from_fn(b, 1, |i, _| {
            let e = q[(i, 0)] - y[i];
            critic_loss += e * e * inv_b;
            2.0 * e * inv_b
        });
        let (g, _) = net.backward(&tape, &d)?;
        adam.step_network(net, &g);
    }
    check_finite("sac critic loss", critic_loss)?;

    // Actor.
    let heads = agent.policy.heads(&batch.obs)?;
    let cur = agent.reparam(&heads, rng);
    let (actor_loss, mut d_mean, mut d_log_std) = actor_cotangents(agent, &batch.obs, &heads, &cur, alpha)?;
    check_finite("sac actor loss", actor_loss)?;
    let mut l_phys = None;
    if let Some(c) = coach.filter(|c| c.lambda > 0.0) {
        let mass: Vec<&DMatrix<f64>> = batch.mass.iter().collect();
        let bias: Vec<&DVector<f64>> = batch.bias.iter().collect();
        let terms = PenaltyTerms {
            mass: &mass,
            bias: &bias,
        };
        let (value, d_m, d_s) = penalty_head_cotangents(&agent.policy, &heads, &batch.obs, c, &terms, penalty_action, rng)?;
        d_mean += d_m * c.lambda;
        d_log_std += d_s * c.lambda;
        l_phys = Some(value);
    }
    let grads = agent.policy.backward(&heads, &d_mean, &d_log_std)?;
    agent.actor_adam.step_network(agent.policy.network_mut(), &grads);

    // Temperature.
    let target = agent.target_entropy();
    let mean_logp = cur.log_prob.iter().sum::<f64>() * inv_b;
    let mut la = [agent.log_alpha];
    agent.alpha_adam.step(&mut la, &[-(mean_logp + target)]);
    agent.log_alpha = la[0];

    let tau = agent.cfg.polyak;
    agent.q1_target.soft_update_from(&agent.q1, tau);
    agent.q2_target.soft_update_from(&agent.q2, tau);

    Ok(SacReport {
        critic_loss,
        actor_loss,
        alpha: agent.alpha(),
        entropy: -mean_logp,
        l_phys,
    })
}

/// `mean(α log π − min(Q₁, Q₂))` at reparameterized actions, with its
/// cotangents on the mean and log-std heads. The critics are only read.
fn actor_cotangents(
    agent: &SacAgent,
    obs: &DMatrix<f64>,
    heads: &super::PolicyHeads,
    cur: &Reparam,
    alpha: f64,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>), RlError> {
    let (b, n) = heads.mean.shape();
    let inv_b = 1.0 / b as f64;
    let xa = agent.critic_input(obs, &cur.action);
    let (qa, tape_a) = agent.q1.forward(&xa)?;
    let (qb, tape_b) = agent.q2.forward(&xa)?;
    let pick_a = DMatrix::from_fn(b, 1, |i, _| if qa[(i, 0)] <= qb[(i, 0)] { 1.0 } else { 0.0 });
    let pick_b = pick_a.map(|v| 1.0 - v);
    let (_, dxa) = agent.q1.backward(&tape_a, &pick_a)?;
    let (_, dxb) = agent.q2.backward(&tape_b, &pick_b)?;
    let obs_dim = obs.ncols();
    let dq_dx = dxa.columns(obs_dim, n) + dxb.columns(obs_dim, n);
    let mut loss = 0.0;
    let mut d_mean = DMatrix::zeros(b, n);
    let mut d_log_std = DMatrix::zeros(b, n);
    for i in 0..b {
        let q_min = qa[(i, 0)].min(qb[(i, 0)]);
        loss += (alpha * cur.log_prob[i] - q_min) * inv_b;
        for j in 0..n {
            let t = cur.u[(i, j)].tanh();
            let sigma = heads.log_std[(i, j)].exp();
            let d_u = inv_b * (alpha * 2.0 * t - dq_dx[(i, j)] * (1.0 - t * t));
            d_mean[(i, j)] = d_u;
            d_log_std[(i, j)] = -alpha * inv_b + d_u * sigma * cur.eps[(i, j)];
        }
    }
    Ok((loss, d_mean, d_log_std))
}
