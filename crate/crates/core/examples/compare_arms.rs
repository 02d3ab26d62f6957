//! Runs a tiny baseline/PIPER pair through the harness and compares them.

use piper::harness::{compare_runs, run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig {
        total_steps: 8192,
        eval_interval: 2048,
        eval_episodes: 20,
        seeds: vec![1, 2],
        ..ExperimentConfig::default()
    };
    cfg.ppo.gamma = 0.95;
    cfg.ppo.init_log_std = -1.5;
    for (name, piper) in [("baseline", false), ("piper", true)] {
        cfg.name = name.into();
        cfg.piper_enabled = piper;
        let summary = run_experiment(&cfg, &root.path().join(name))?;
        println!("{name}: mean final success {:.2}", summary.mean_final_success_rate);
    }
    let report = compare_runs(&root.path().join("baseline"), &root.path().join("piper"))?;
    print!("{}", report.render());
    Ok(())
}
