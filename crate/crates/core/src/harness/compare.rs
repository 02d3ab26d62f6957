use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{
    final_precision, percent_gain, read_csv, stability_sigma, steps_to_threshold, EpisodeRow, MetricsRow,
    EPISODES_FILE, METRICS_FILE,
};
use super::run::{seed_dir, success_indicators, CONFIG_FILE};
use super::HarnessError;

/// Per-seed metrics recomputed from the raw CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    /// Last checkpoint step; the value used for runs that never cross.
    pub total_steps: usize,
    pub steps_to_threshold: Option<usize>,
    pub steps_to_fallback: Option<usize>,
    pub final_error_m: f64,
    pub stability_sigma: f64,
}

impl SeedMetrics {
    pub fn from_rows(seed: u64, rows: &[MetricsRow], episodes: &[EpisodeRow], cfg: &ExperimentConfig) -> Self {
        Self {
            seed,
            total_steps: rows.last().map_or(0, |r| r.step),
            steps_to_threshold: steps_to_threshold(rows, cfg.success_threshold),
            steps_to_fallback: steps_to_threshold(rows, cfg.fallback_threshold),
            final_error_m: final_precision(rows).unwrap_or(f64::NAN),
            stability_sigma: stability_sigma(&success_indicators(episodes), cfg.stability_window),
        }
    }

    /// Steps to the primary threshold, censored at the run length.
    pub fn censored_primary(&self) -> usize {
        self.steps_to_threshold.unwrap_or(self.total_steps)
    }

    pub fn censored_fallback(&self) -> usize {
        self.steps_to_fallback.unwrap_or(self.total_steps)
    }
}

/// Seed averages for one arm of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub seeds: Vec<SeedMetrics>,
    pub mean_steps_to_threshold: f64,
    pub mean_steps_to_fallback: f64,
    pub mean_final_error_m: f64,
    pub mean_stability_sigma: f64,
}

impl ArmSummary {
    pub fn new(seeds: Vec<SeedMetrics>) -> Self {
        let n = seeds.len().max(1) as f64;
        let mean = |f: &dyn Fn(&SeedMetrics) -> f64| seeds.iter().map(f).sum::<f64>() / n;
        Self {
            mean_steps_to_threshold: mean(&|s| s.censored_primary() as f64),
            mean_steps_to_fallback: mean(&|s| s.censored_fallback() as f64),
            mean_final_error_m: mean(&|s| s.final_error_m),
            mean_stability_sigma: mean(&|s| s.stability_sigma),
            seeds,
        }
    }
}

/// Percentage gains of the physics-informed arm over the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: ArmSummary,
    pub piper: ArmSummary,
    pub efficiency_gain_pct: f64,
    pub efficiency_gain_fallback_pct: f64,
    pub precision_gain_pct: f64,
    pub stability_gain_pct: f64,
    /// Seeds where the physics arm reached the fallback threshold in fewer
    /// steps than the baseline with the same seed.
    pub faster_seeds_fallback: usize,
    /// Seeds whose final-window σ is at most the baseline's.
    pub steadier_seeds: usize,
}

impl ComparisonReport {
    pub fn new(baseline: ArmSummary, piper: ArmSummary) -> Self {
        let pairs = || baseline.seeds.iter().zip(&piper.seeds);
        Self {
            efficiency_gain_pct: percent_gain(baseline.mean_steps_to_threshold, piper.mean_steps_to_threshold),
            efficiency_gain_fallback_pct: percent_gain(baseline.mean_steps_to_fallback, piper.mean_steps_to_fallback),
            precision_gain_pct: percent_gain(baseline.mean_final_error_m, piper.mean_final_error_m),
            stability_gain_pct: percent_gain(baseline.mean_stability_sigma, piper.mean_stability_sigma),
            faster_seeds_fallback: pairs().filter(|(b, p)| p.censored_fallback() < b.censored_fallback()).count(),
            steadier_seeds: pairs().filter(|(b, p)| p.stability_sigma <= b.stability_sigma).count(),
            baseline,
            piper,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("seed  base_n95  piper_n95  base_n90  piper_n90  base_err_m  piper_err_m  base_sigma  piper_sigma\n");
        let show = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        for (b, p) in self.baseline.seeds.iter().zip(&self.piper.seeds) {
            out.push_str(&format!(
                "{:<5} {:>9} {:>10} {:>9} {:>10} {:>11.4} {:>12.4} {:>11.2} {:>12.2}\n",
                b.seed,
                show(b.steps_to_threshold),
                show(p.steps_to_threshold),
                show(b.steps_to_fallback),
                show(p.steps_to_fallback),
                b.final_error_m,
                p.final_error_m,
                b.stability_sigma,
                p.stability_sigma,
            ));
        }
        out.push_str(&format!(
            "efficiency gain {:.1}% (fallback {:.1}%), precision gain {:.1}%, stability gain {:.1}%\n",
            self.efficiency_gain_pct, self.efficiency_gain_fallback_pct, self.precision_gain_pct, self.stability_gain_pct
        ));
        out
    }
}

/// Reads a run directory written by `run_experiment`.
pub fn load_arm(run_dir: &Path) -> Result<(ExperimentConfig, Vec<SeedMetrics>), HarnessError> {
    let cfg = ExperimentConfig::load(&run_dir.join(CONFIG_FILE))?;
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(run_dir, seed);
        let metrics = dir.join(METRICS_FILE);
        if !metrics.exists() {
            continue;
        }
        let rows: Vec<MetricsRow> = read_csv(&metrics)?;
        let episodes: Vec<EpisodeRow> = read_csv(&dir.join(EPISODES_FILE))?;
        seeds.push(SeedMetrics::from_rows(seed, &rows, &episodes, &cfg));
    }
    Ok((cfg, seeds))
}

/// Gains of `piper_dir` over `baseline_dir` on the seeds both completed.
pub fn compare_runs(baseline_dir: &Path, piper_dir: &Path) -> Result<ComparisonReport, HarnessError> {
    let (_, base) = load_arm(baseline_dir)?;
    let (_, piper) = load_arm(piper_dir)?;
    let common: Vec<u64> = base
        .iter()
        .map(|s| s.seed)
        .filter(|s| piper.iter().any(|p| p.seed == *s))
        .collect();
    if common.is_empty() {
        return Err(HarnessError::Compare("the runs share no completed seed".into()));
    }
    let pick = |v: &[SeedMetrics]| -> Vec<SeedMetrics> {
        common
            .iter()
            .map(|s| v.iter().find(|m| m.seed == *s).expect("common seed").clone())
            .collect()
    };
    Ok(ComparisonReport::new(ArmSummary::new(pick(&base)), ArmSummary::new(pick(&piper))))
}
