use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{
    final_precision, stability_sigma, steps_to_threshold, write_csv, EpisodeRow, MetricsRow, EPISODES_FILE,
    METRICS_FILE,
};
use super::HarnessError;
use crate::autodiff::Mlp;
use crate::rl::{evaluate_policy, Evaluation, GaussianPolicy, Trainer};
use crate::sim::EnvSpec;

pub const POLICY_FILE: &str = "policy.json";
pub const PINN_FILE: &str = "pinn.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const POLICY_FORMAT: &str = "piper-policy";
pub const POLICY_VERSION: u32 = 1;

/// Trained policy with the task it was trained on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    pub env: EnvSpec,
    pub run_seed: u64,
    pub steps: usize,
    pub torque_limit: Vec<f64>,
    pub network: serde_json::Value,
}

impl PolicyCheckpoint {
    pub fn new(policy: &GaussianPolicy, env: &EnvSpec, run_seed: u64, steps: usize) -> Self {
        let network = serde_json::from_str(&policy.network().to_checkpoint_json()).expect("network json is valid");
        Self {
            format: POLICY_FORMAT.into(),
            version: POLICY_VERSION,
            env: env.clone(),
            run_seed,
            steps,
            torque_limit: policy.torque_limit().iter().copied().collect(),
            network,
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != POLICY_FORMAT || ck.version != POLICY_VERSION {
            return Err(HarnessError::Checkpoint(format!(
                "{}: expected {POLICY_FORMAT} v{POLICY_VERSION}, found {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn policy(&self) -> Result<GaussianPolicy, HarnessError> {
        let net = Mlp::from_checkpoint_json(&self.network.to_string())
            .map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
        GaussianPolicy::from_network(net, nalgebra::DVector::from_vec(self.torque_limit.clone()))
            .map_err(|e| HarnessError::Checkpoint(e.to_string()))
    }

    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<Evaluation, HarnessError> {
        Ok(evaluate_policy(&self.policy()?, &self.env, seed, episodes)?)
    }
}

/// Headline numbers of one seed, all recomputable from its CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub steps: usize,
    pub steps_to_threshold: Option<usize>,
    pub steps_to_fallback: Option<usize>,
    pub final_success_rate: f64,
    pub final_precision_m: f64,
    pub stability_sigma: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub error: String,
}

/// Aggregates over the seeds that completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub completed: Vec<SeedSummary>,
    pub failed: Vec<FailedSeed>,
    pub mean_final_success_rate: f64,
    pub mean_final_precision_m: f64,
    pub mean_stability_sigma: f64,
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed_{seed}"))
}

/// Trains and evaluates every seed (one thread each) and writes the run
/// directory. A seed that fails is listed and left out of the aggregates.
pub fn run_experiment(cfg: &ExperimentConfig, run_dir: &Path) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir).map_err(|e| HarnessError::io(run_dir, e))?;
    write_json(&run_dir.join(CONFIG_FILE), cfg)?;
    let results: Vec<(u64, Result<SeedSummary, HarnessError>)> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| (seed, s.spawn(move || run_seed(cfg, seed, &seed_dir(run_dir, seed)))))
            .collect();
        handles
            .into_iter()
            .map(|(seed, h)| {
                let r = h
                    .join()
                    .unwrap_or_else(|_| Err(HarnessError::Worker(format!("seed {seed} panicked"))));
                (seed, r)
            })
            .collect()
    });
    let mut completed = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(s) => completed.push(s),
            Err(e) => failed.push(FailedSeed {
                seed,
                error: e.to_string(),
            }),
        }
    }
    let mean = |f: fn(&SeedSummary) -> f64| {
        if completed.is_empty() {
            f64::NAN
        } else {
            completed.iter().map(f).sum::<f64>() / completed.len() as f64
        }
    };
    let summary = RunSummary {
        name: cfg.name.clone(),
        mean_final_success_rate: mean(|s| s.final_success_rate),
        mean_final_precision_m: mean(|s| s.final_precision_m),
        mean_stability_sigma: mean(|s| s.stability_sigma),
        completed,
        failed,
    };
    write_json(&run_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Full training run for one seed, evaluating every `eval_interval` steps.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedSummary, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let spec = cfg.env_spec();
    let start = Instant::now();
    let mut trainer = Trainer::new(spec.clone(), cfg.trainer_config(), seed)?;
    let mut rows = Vec::new();
    let mut episodes = Vec::new();
    let mut last_eval = None;
    while trainer.steps() < cfg.total_steps {
        let chunk = cfg.eval_interval.min(cfg.total_steps - trainer.steps());
        trainer.train_steps(chunk)?;
        let eval = trainer.evaluate(cfg.eval_episodes)?;
        let stats = trainer.take_stats();
        let step = trainer.steps();
        rows.push(MetricsRow {
            step,
            success_rate: eval.success_rate(),
            final_error_m: eval.mean_final_error(),
            l_phys: stats.l_phys,
            r_energy: stats.r_energy,
            pinn_loss: stats.pinn_loss,
            wall_secs: start.elapsed().as_secs_f64(),
        });
        episodes.extend(eval.episodes.iter().enumerate().map(|(i, e)| EpisodeRow {
            step,
            episode: i,
            seed: e.seed,
            success: u8::from(e.success),
            final_error_m: e.final_error,
        }));
        last_eval = Some(eval);
    }
    write_csv(&dir.join(METRICS_FILE), &rows)?;
    write_csv(&dir.join(EPISODES_FILE), &episodes)?;
    write_json(
        &dir.join(POLICY_FILE),
        &PolicyCheckpoint::new(trainer.policy(), &spec, seed, trainer.steps()),
    )?;
    if let Some(pinn) = trainer.pinn() {
        let path = dir.join(PINN_FILE);
        std::fs::write(&path, pinn.to_json()).map_err(|e| HarnessError::io(&path, e))?;
    }
    let finals: Vec<bool> = success_indicators(&episodes);
    let last = last_eval.expect("total_steps is positive");
    let summary = SeedSummary {
        seed,
        steps: trainer.steps(),
        steps_to_threshold: steps_to_threshold(&rows, cfg.success_threshold),
        steps_to_fallback: steps_to_threshold(&rows, cfg.fallback_threshold),
        final_success_rate: last.success_rate(),
        final_precision_m: final_precision(&rows).unwrap_or(f64::NAN),
        stability_sigma: stability_sigma(&finals, cfg.stability_window),
        wall_secs: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Success indicators of all evaluation episodes in checkpoint order.
pub fn success_indicators(rows: &[EpisodeRow]) -> Vec<bool> {
    rows.iter().map(|r| r.success != 0).collect()
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}
