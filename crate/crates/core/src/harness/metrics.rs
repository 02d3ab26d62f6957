use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::HarnessError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const METRICS_COLUMNS: [&str; 7] = [
    "step",
    "success_rate",
    "final_error_m",
    "l_phys",
    "r_energy",
    "pinn_loss",
    "wall_secs",
];

/// One evaluation checkpoint. Physics columns are NaN for runs without the
/// proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub success_rate: f64,
    pub final_error_m: f64,
    pub l_phys: f64,
    pub r_energy: f64,
    pub pinn_loss: f64,
    pub wall_secs: f64,
}

/// One evaluation episode at a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub step: usize,
    pub episode: usize,
    pub seed: u64,
    pub success: u8,
    pub final_error_m: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| HarnessError::csv(path, e))).collect()
}

/// First checkpoint step whose success rate reaches `threshold`.
pub fn steps_to_threshold(rows: &[MetricsRow], threshold: f64) -> Option<usize> {
    rows.iter().find(|r| r.success_rate >= threshold).map(|r| r.step)
}

/// Mean final distance at the last checkpoint (m).
pub fn final_precision(rows: &[MetricsRow]) -> Option<f64> {
    rows.last().map(|r| r.final_error_m)
}

/// Population standard deviation of the last `window` success indicators,
/// in percentage points.
pub fn stability_sigma(successes: &[bool], window: usize) -> f64 {
    let tail = &successes[successes.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    let n = tail.len() as f64;
    let p = tail.iter().filter(|s| **s).count() as f64 / n;
    let var = tail.iter().map(|&s| (f64::from(u8::from(s)) - p).powi(2)).sum::<f64>() / n;
    100.0 * var.sqrt()
}

/// Relative improvement `(baseline − piper) / baseline` in percent, for
/// metrics where lower is better. Equal inputs give 0; a zero baseline
/// with a different value gives NaN.
pub fn percent_gain(baseline: f64, piper: f64) -> f64 {
    if baseline == piper {
        0.0
    } else if baseline == 0.0 {
        f64::NAN
    } else {
        100.0 * (baseline - piper) / baseline
    }
}
