//! Experiment runner: configs, per-seed training runs, CSV metrics, run
//! comparison and the built-in self-checks.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::dynamics::DynamicsError;
use crate::pinn::PinnError;
use crate::rl::RlError;
use crate::sim::SimError;

mod checks;
mod compare;
mod config;
mod metrics;
mod run;

pub use checks::{
    dyncheck, gradcheck, pendulum_drift_pair, random_chain, random_transitions, two_link_closed_form, Check,
    CheckReport, GRAD_TOL,
};
pub use compare::{compare_runs, load_arm, ArmSummary, ComparisonReport, SeedMetrics};
pub use config::{ExperimentConfig, DEFAULT_SEEDS};
pub use metrics::{
    final_precision, percent_gain, read_csv, stability_sigma, steps_to_threshold, write_csv, EpisodeRow, MetricsRow,
    EPISODES_FILE, METRICS_COLUMNS, METRICS_FILE,
};
pub use run::{
    run_experiment, run_seed, seed_dir, success_indicators, FailedSeed, PolicyCheckpoint, RunSummary, SeedSummary,
    CONFIG_FILE, PINN_FILE, POLICY_FILE, SUMMARY_FILE,
};

/// Environment variable naming the directory that holds run directories.
pub const RUN_ROOT_ENV: &str = "PIPER_RUN_ROOT";
const DEFAULT_RUN_ROOT: &str = "runs";

/// `$PIPER_RUN_ROOT`, or `./runs` when unset or empty.
pub fn run_root() -> PathBuf {
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_RUN_ROOT),
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("worker: {0}")]
    Worker(String),
    #[error("compare: {0}")]
    Compare(String),
    #[error(transparent)]
    Rl(#[from] RlError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        Self::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}

macro_rules! via_rl {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                Self::Rl(e.into())
            }
        }
    )*};
}

via_rl!(AutodiffError, DynamicsError, PinnError, SimError);
