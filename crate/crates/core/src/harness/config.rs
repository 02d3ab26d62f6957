use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::physics_losses::ConstraintWeights;
use crate::rl::{Algorithm, PiperConfig, PpoConfig, SacConfig, TrainerConfig};
use crate::sim::{EnvId, EnvSpec, RewardMode};

pub const DEFAULT_SEEDS: [u64; 5] = [42, 43, 44, 45, 46];

/// One experiment: an algorithm on a task over a list of seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub env_id: EnvId,
    /// Overrides the task's default reward.
    pub reward_mode: Option<RewardMode>,
    pub algorithm: Algorithm,
    pub piper_enabled: bool,
    pub weights: ConstraintWeights,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub success_threshold: f64,
    /// Secondary threshold for tasks where the primary one is out of reach.
    pub fallback_threshold: f64,
    /// Evaluation episodes pooled for the stability statistic.
    pub stability_window: usize,
    pub ppo: PpoConfig,
    pub sac: SacConfig,
    pub piper: PiperConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            env_id: EnvId::Reach2d,
            reward_mode: None,
            algorithm: Algorithm::Ppo,
            piper_enabled: false,
            weights: ConstraintWeights::default(),
            total_steps: 200_000,
            eval_interval: 1000,
            eval_episodes: 100,
            seeds: DEFAULT_SEEDS.to_vec(),
            success_threshold: 0.95,
            fallback_threshold: 0.90,
            stability_window: 100,
            ppo: PpoConfig::default(),
            sac: SacConfig::default(),
            piper: PiperConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn env_spec(&self) -> EnvSpec {
        let mut spec = EnvSpec::preset(self.env_id);
        if let Some(mode) = self.reward_mode {
            spec.reward_mode = mode;
        }
        spec
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            algorithm: self.algorithm,
            piper_enabled: self.piper_enabled,
            ppo: self.ppo.clone(),
            sac: self.sac.clone(),
            piper: self.piper.clone(),
            weights: self.weights,
        }
    }

    /// Field-level checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let field = |name: &str, msg: &str| Err(HarnessError::Config(format!("field `{name}`: {msg}")));
        for (name, v) in [
            ("total_steps", self.total_steps),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes),
            ("stability_window", self.stability_window),
        ] {
            if v == 0 {
                return field(name, "must be positive");
            }
        }
        if self.seeds.is_empty() {
            return field("seeds", "must not be empty");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return field("seeds", "must be distinct");
        }
        for (name, t) in [
            ("success_threshold", self.success_threshold),
            ("fallback_threshold", self.fallback_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return field(name, "must lie in [0, 1]");
            }
        }
        self.env_spec()
            .validate()
            .map_err(|e| HarnessError::Config(format!("field `env_id`: {e}")))?;
        self.trainer_config()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }
}
