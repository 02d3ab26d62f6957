use serde::{Deserialize, Serialize};

use super::penalty::PhysicsCoach;
use super::policy::GaussianPolicy;
use super::ppo::{ppo_update, PpoAgent, PpoConfig, Rollout, RolloutStep};
use super::sac::{sac_update, SacAgent, SacBatch, SacConfig};
use super::{PenaltyAction, ReplayBuffer, RlError, TransitionRecord};
use crate::autodiff::{Activation, Adam};
use crate::oracle::DEFAULT_OUTLIER_THRESHOLD;
use crate::physics_losses::ConstraintWeights;
use crate::pinn::{pinn_update, PinnLossParts, PinnLossWeights, PinnModel};
use crate::rng::PiperRng;
use crate::sim::{Env, EnvSpec, Observation};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Ppo,
    Sac,
}

/// Proxy training and penalty settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiperConfig {
    /// Overrides the per-algorithm default weight.
    pub lambda_phys: Option<f64>,
    pub pinn_hidden: Vec<usize>,
    pub pinn_lr: f64,
    pub pinn_batch: usize,
    /// Environment steps before the first proxy update.
    pub pinn_warmup: usize,
    pub pinn_update_every: usize,
    pub outlier_threshold: f64,
    /// Power-balance weight; `None` uses `β` on object tasks and 0 otherwise.
    pub energy_weight: Option<f64>,
    /// Transitions kept for proxy training under PPO.
    pub pinn_buffer: usize,
    pub penalty_action: PenaltyAction,
}

impl Default for PiperConfig {
    fn default() -> Self {
        Self {
            lambda_phys: None,
            pinn_hidden: vec![64, 64],
            pinn_lr: 1e-3,
            pinn_batch: 256,
            pinn_warmup: 1000,
            pinn_update_every: 1,
            outlier_threshold: DEFAULT_OUTLIER_THRESHOLD,
            energy_weight: None,
            pinn_buffer: 100_000,
            penalty_action: PenaltyAction::Mean,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub algorithm: Algorithm,
    pub piper_enabled: bool,
    pub ppo: PpoConfig,
    pub sac: SacConfig,
    pub piper: PiperConfig,
    pub weights: ConstraintWeights,
}

impl TrainerConfig {
    pub fn lambda_phys(&self) -> f64 {
        self.piper.lambda_phys.unwrap_or(match self.algorithm {
            Algorithm::Ppo => self.weights.lambda_phys_ppo,
            Algorithm::Sac => self.weights.lambda_phys_sac,
        })
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.to_string()));
        if self.ppo.rollout_len == 0 || self.ppo.minibatch == 0 || self.ppo.epochs == 0 {
            return bad("ppo counts must be positive");
        }
        if self.sac.batch == 0 || self.sac.replay_capacity == 0 {
            return bad("sac counts must be positive");
        }
        if self.piper.pinn_batch == 0 || self.piper.pinn_update_every == 0 || self.piper.pinn_buffer == 0 {
            return bad("pinn counts must be positive");
        }
        if self.lambda_phys() < 0.0 || !self.lambda_phys().is_finite() {
            return bad("lambda_phys must be a non-negative number");
        }
        self.weights.validate().map_err(|e| RlError::Config(e.to_string()))
    }
}

/// One deterministic evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub seed: u64,
    pub success: bool,
    pub final_error: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub episodes: Vec<EpisodeOutcome>,
}

impl Evaluation {
    pub fn success_rate(&self) -> f64 {
        let n = self.episodes.len().max(1) as f64;
        self.episodes.iter().filter(|e| e.success).count() as f64 / n
    }

    pub fn mean_final_error(&self) -> f64 {
        let n = self.episodes.len().max(1) as f64;
        self.episodes.iter().map(|e| e.final_error).sum::<f64>() / n
    }
}

/// Physics diagnostics accumulated since the last drain. NaN when the
/// quantity was never computed in the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub l_phys: f64,
    pub r_energy: f64,
    pub pinn_loss: f64,
}

#[derive(Debug, Clone)]
enum Agent {
    Ppo(Box<PpoAgent>, Rollout),
    Sac(Box<SacAgent>),
}

impl Agent {
    fn policy(&self) -> &GaussianPolicy {
        match self {
            Agent::Ppo(a, _) => &a.policy,
            Agent::Sac(a) => &a.policy,
        }
    }
}

#[derive(Debug, Clone)]
struct Proxy {
    model: PinnModel,
    adam: Adam,
    weights: PinnLossWeights,
    updates: u64,
    last: Option<PinnLossParts>,
}

/// Single-writer training loop for one seed.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainerConfig,
    spec: EnvSpec,
    seed: u64,
    env: Env,
    obs: Observation,
    episodes: u64,
    steps: usize,
    agent: Agent,
    replay: ReplayBuffer,
    proxy: Option<Proxy>,
    explore_rng: PiperRng,
    update_rng: PiperRng,
    pinn_rng: PiperRng,
    root: PiperRng,
    penalty_sum: f64,
    penalty_count: usize,
}

impl Trainer {
    pub fn new(spec: EnvSpec, cfg: TrainerConfig, seed: u64) -> Result<Self, RlError> {
        cfg.validate()?;
        let root = PiperRng::new(seed);
        let mut env = Env::new(spec.clone())?;
        let obs = env.reset(root.split_index("train_episode", 0).next_u64());
        let obs_dim = spec.obs_dim();
        let limits = spec.chain.torque_limit_vector();
        let mut init = root.split("init");
        let (agent, capacity) = match cfg.algorithm {
            Algorithm::Ppo => (
                Agent::Ppo(Box::new(PpoAgent::new(obs_dim, limits, cfg.ppo.clone(), &mut init)?), Rollout::default()),
                cfg.piper.pinn_buffer,
            ),
            Algorithm::Sac => (
                Agent::Sac(Box::new(SacAgent::new(obs_dim, limits, cfg.sac.clone(), &mut init)?)),
                cfg.sac.replay_capacity,
            ),
        };
        let proxy = if cfg.piper_enabled {
            let model = PinnModel::new(
                obs_dim,
                spec.n_joints(),
                &cfg.piper.pinn_hidden,
                Activation::Tanh,
                &mut root.split("pinn_init"),
            )?;
            let beta = cfg.weights.beta;
            let energy = cfg
                .piper
                .energy_weight
                .unwrap_or(if spec.env_id.has_object() { beta } else { 0.0 });
            Some(Proxy {
                adam: Adam::for_network(cfg.piper.pinn_lr, model.network()),
                model,
                weights: PinnLossWeights::new(beta, energy),
                updates: 0,
                last: None,
            })
        } else {
            None
        };
        Ok(Self {
            explore_rng: root.split("explore"),
            update_rng: root.split("update"),
            pinn_rng: root.split("pinn"),
            replay: ReplayBuffer::new(capacity),
            root,
            cfg,
            spec,
            seed,
            env,
            obs,
            episodes: 0,
            steps: 0,
            agent,
            proxy,
            penalty_sum: 0.0,
            penalty_count: 0,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn policy(&self) -> &GaussianPolicy {
        self.agent.policy()
    }

    pub fn pinn(&self) -> Option<&PinnModel> {
        self.proxy.as_ref().map(|p| &p.model)
    }

    pub fn pinn_updates(&self) -> u64 {
        self.proxy.as_ref().map_or(0, |p| p.updates)
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    /// Runs `n` environment steps with the updates they trigger.
    pub fn train_steps(&mut self, n: usize) -> Result<(), RlError> {
        for _ in 0..n {
            self.env_step()?;
        }
        Ok(())
    }

    fn env_step(&mut self) -> Result<(), RlError> {
        let policy = self.agent.policy();
        let (action, u, log_prob) = match &self.agent {
            Agent::Sac(_) if self.steps < self.cfg.sac.learning_starts => {
                let a = policy.torque_limit().map(|l| self.explore_rng.uniform(-l, l));
                (a, None, 0.0)
            }
            _ => {
                let s = policy.sample_action(&self.obs, &mut self.explore_rng, false)?;
                (s.action, Some(s.u), s.log_prob)
            }
        };
        let step = self.env.step(&action)?;
        let record = TransitionRecord::from_env_step(&self.spec, &self.obs, &step, self.cfg.piper.outlier_threshold)?;
        self.steps += 1;
        if step.done() {
            self.episodes += 1;
            self.obs = self
                .env
                .reset(self.root.split_index("train_episode", self.episodes).next_u64());
        } else {
            self.obs = step.obs.clone();
        }

        if let Agent::Ppo(_, rollout) = &mut self.agent {
            rollout.push(RolloutStep {
                obs: record.obs.clone(),
                next_obs: record.next_obs.clone(),
                u: u.expect("ppo always samples"),
                log_prob,
                reward: record.reward,
                terminated: record.terminated,
                truncated: record.truncated,
                mass: record.oracle.mass.clone(),
                bias: record.oracle.bias.clone(),
            });
        }
        if self.proxy.is_some() || matches!(self.agent, Agent::Sac(_)) {
            self.replay.push(record);
        }

        self.maybe_update_proxy()?;
        self.maybe_update_agent()
    }

    fn maybe_update_proxy(&mut self) -> Result<(), RlError> {
        let Some(proxy) = self.proxy.as_mut() else {
            return Ok(());
        };
        let piper = &self.cfg.piper;
        if self.steps < piper.pinn_warmup || self.steps % piper.pinn_update_every != 0 {
            return Ok(());
        }
        let parts = pinn_update(
            &mut proxy.model,
            &self.replay,
            &mut proxy.adam,
            &proxy.weights,
            piper.pinn_batch,
            &mut self.pinn_rng,
        )?;
        if let Some(p) = parts {
            super::check_finite("pinn loss", p.total)?;
            proxy.updates += 1;
            proxy.last = Some(p);
        }
        Ok(())
    }

    fn maybe_update_agent(&mut self) -> Result<(), RlError> {
        let lambda = self.cfg.lambda_phys();
        let mode = self.cfg.piper.penalty_action;
        // The penalty waits for a proxy that has seen at least one update.
        let coach = self
            .proxy
            .as_ref()
            .filter(|p| p.updates > 0)
            .map(|p| PhysicsCoach { pinn: &p.model, lambda });
        let l_phys = match &mut self.agent {
            Agent::Ppo(agent, rollout) => {
                if rollout.len() < agent.cfg.rollout_len {
                    return Ok(());
                }
                let report = ppo_update(agent, rollout, coach, mode, &mut self.update_rng)?;
                rollout.clear();
                report.l_phys.into_iter().collect::<Vec<_>>()
            }
            Agent::Sac(agent) => {
                let cfg = &agent.cfg;
                if self.steps < cfg.learning_starts || self.replay.len() < cfg.batch {
                    return Ok(());
                }
                let mut out = Vec::new();
                for _ in 0..cfg.updates_per_step.max(1) {
                    let records = self.replay.sample(agent.cfg.batch, &mut self.update_rng);
                    let batch = SacBatch::from_records(&records);
                    let report = sac_update(agent, &batch, coach, mode, &mut self.update_rng)?;
                    out.extend(report.l_phys);
                }
                out
            }
        };
        for v in l_phys {
            self.penalty_sum += v;
            self.penalty_count += 1;
        }
        Ok(())
    }

    /// Diagnostics since the previous call.
    pub fn take_stats(&mut self) -> TrainStats {
        let l_phys = if self.penalty_count > 0 {
            self.penalty_sum / self.penalty_count as f64
        } else {
            f64::NAN
        };
        self.penalty_sum = 0.0;
        self.penalty_count = 0;
        let last = self.proxy.as_ref().and_then(|p| p.last);
        TrainStats {
            l_phys,
            r_energy: last.map_or(f64::NAN, |p| p.r_energy),
            pinn_loss: last.map_or(f64::NAN, |p| p.total),
        }
    }

    /// Deterministic-policy episodes on a fixed set of evaluation resets.
    pub fn evaluate(&self, episodes: usize) -> Result<Evaluation, RlError> {
        evaluate_policy(self.policy(), &self.spec, self.seed, episodes)
    }
}

/// Seeds of the evaluation episodes for a run seed.
pub fn eval_episode_seed(run_seed: u64, episode: usize) -> u64 {
    PiperRng::new(run_seed).split_index("eval", episode as u64).next_u64()
}

pub fn evaluate_policy(
    policy: &GaussianPolicy,
    spec: &EnvSpec,
    run_seed: u64,
    episodes: usize,
) -> Result<Evaluation, RlError> {
    let mut env = Env::new(spec.clone())?;
    let mut unused = PiperRng::new(0);
    let mut out = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let seed = eval_episode_seed(run_seed, i);
        let mut obs = env.reset(seed);
        loop {
            let a = policy.sample_action(&obs, &mut unused, true)?.action;
            let step = env.step(&a)?;
            obs = step.obs;
            if step.terminated || step.truncated {
                break;
            }
        }
        out.push(EpisodeOutcome {
            seed,
            success: env.success(),
            final_error: env.final_error(),
            steps: env.steps(),
        });
    }
    Ok(Evaluation { episodes: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(algorithm: Algorithm, enabled: bool) -> TrainerConfig {
        TrainerConfig {
            algorithm,
            piper_enabled: enabled,
            ppo: PpoConfig {
                rollout_len: 128,
                minibatch: 32,
                epochs: 2,
                hidden: vec![16],
                ..PpoConfig::default()
            },
            sac: SacConfig {
                batch: 32,
                learning_starts: 100,
                hidden: vec![16],
                replay_capacity: 10_000,
                ..SacConfig::default()
            },
            piper: PiperConfig {
                pinn_hidden: vec![16],
                pinn_batch: 32,
                pinn_warmup: 100,
                pinn_update_every: 2,
                ..PiperConfig::default()
            },
            weights: ConstraintWeights::default(),
        }
    }

    fn params(t: &Trainer) -> Vec<f64> {
        t.policy().network().params()
    }

    #[test]
    fn training_is_deterministic() {
        for alg in [Algorithm::Ppo, Algorithm::Sac] {
            let mut a = Trainer::new(EnvSpec::reach2d(), tiny(alg, true), 3).unwrap();
            let mut b = Trainer::new(EnvSpec::reach2d(), tiny(alg, true), 3).unwrap();
            a.train_steps(300).unwrap();
            b.train_steps(300).unwrap();
            assert_eq!(params(&a), params(&b));
            assert_eq!(a.pinn(), b.pinn());
            assert!(a.pinn_updates() > 0);
        }
    }

    #[test]
    fn zero_lambda_matches_the_baseline_run() {
        for alg in [Algorithm::Ppo, Algorithm::Sac] {
            let mut cfg = tiny(alg, true);
            cfg.piper.lambda_phys = Some(0.0);
            let mut piper = Trainer::new(EnvSpec::reach2d(), cfg, 9).unwrap();
            let mut base = Trainer::new(EnvSpec::reach2d(), tiny(alg, false), 9).unwrap();
            piper.train_steps(300).unwrap();
            base.train_steps(300).unwrap();
            assert_eq!(params(&piper), params(&base));
            assert!(base.take_stats().l_phys.is_nan());
        }
    }

    #[test]
    fn positive_lambda_changes_the_policy() {
        let mut piper = Trainer::new(EnvSpec::reach2d(), tiny(Algorithm::Sac, true), 9).unwrap();
        let mut base = Trainer::new(EnvSpec::reach2d(), tiny(Algorithm::Sac, false), 9).unwrap();
        piper.train_steps(300).unwrap();
        base.train_steps(300).unwrap();
        assert_ne!(params(&piper), params(&base));
        assert!(piper.take_stats().l_phys.is_finite());
    }

    #[test]
    fn evaluation_is_repeatable() {
        let t = Trainer::new(EnvSpec::reach2d(), tiny(Algorithm::Ppo, false), 4).unwrap();
        let a = t.evaluate(3).unwrap();
        let b = t.evaluate(3).unwrap();
        assert_eq!(a, b);
        assert!(a.episodes.iter().all(|e| e.steps == 50));
        assert!((0.0..=1.0).contains(&a.success_rate()));
    }
}
