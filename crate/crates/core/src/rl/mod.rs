//! Actor-critic trainers with the residual penalty on the actor.

mod buffer;
mod gae;
mod penalty;
mod policy;
mod ppo;
mod sac;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::dynamics::DynamicsError;
use crate::pinn::PinnError;
use crate::sim::SimError;

pub use buffer::{ReplayBuffer, TransitionRecord, DEFAULT_REPLAY_CAPACITY};
pub use gae::gae_advantages;
pub use penalty::{penalty_cotangent, piper_penalty, PenaltyTerms, PhysicsCoach};
pub use policy::{log_one_minus_tanh_sq, ActionSample, GaussianPolicy, PolicyHeads, LOG_STD_MAX, LOG_STD_MIN};
pub(crate) use ppo::penalty_head_cotangents;
pub use ppo::{normalize_advantages, ppo_update, PpoAgent, PpoConfig, PpoReport, Rollout, RolloutStep};
pub use sac::{sac_update, SacAgent, SacBatch, SacConfig, SacReport};
pub use trainer::{
    eval_episode_seed, evaluate_policy, Algorithm, EpisodeOutcome, Evaluation, PiperConfig, TrainStats, Trainer,
    TrainerConfig,
};

#[derive(Debug, Error)]
pub enum RlError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Pinn(#[from] PinnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("{what} diverged: {diagnostic}")]
    Diverged { what: &'static str, diagnostic: String },
    #[error("invalid config: {0}")]
    Config(String),
}

/// Which action the residual penalty is evaluated at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyAction {
    /// `τ_max ⊙ tanh(μ(s))`.
    #[default]
    Mean,
    /// Reparameterized sample `τ_max ⊙ tanh(μ + σ ε)`.
    Sampled,
}

pub(crate) fn check_finite(what: &'static str, value: f64) -> Result<(), RlError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(RlError::Diverged {
            what,
            diagnostic: format!("value {value}"),
        })
    }
}
