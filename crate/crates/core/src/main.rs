use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use piper::harness::{self, ExperimentConfig, HarnessError, PolicyCheckpoint};

#[derive(Parser)]
#[command(name = "piper", version, about = "Physics-informed policy optimization on planar arms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config into $PIPER_RUN_ROOT/<name>.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a saved policy with the deterministic (mean) action.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Report efficiency, precision and stability gains between two runs.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        piper: PathBuf,
    },
    /// Rigid-body dynamics identities and energy conservation.
    Dyncheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        states: usize,
    },
    /// Finite-difference checks of the analytic gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Run directories may be given relative to the run root.
fn resolve_run(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        path.to_path_buf()
    } else {
        harness::run_root().join(path)
    }
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = harness::run_root().join(&cfg.name);
            let summary = harness::run_experiment(&cfg, &dir)?;
            for s in &summary.completed {
                println!(
                    "seed {:>4}  success {:.3}  error {:.4} m  sigma {:.2}  {:.0}s",
                    s.seed, s.final_success_rate, s.final_precision_m, s.stability_sigma, s.wall_secs
                );
            }
            for f in &summary.failed {
                eprintln!("seed {:>4}  failed: {}", f.seed, f.error);
            }
            println!("run directory: {}", dir.display());
            Ok(summary.failed.is_empty())
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            let ck = PolicyCheckpoint::load(&checkpoint)?;
            let eval = ck.evaluate(episodes, seed)?;
            println!(
                "{} episodes  success {:.3}  mean final error {:.4} m",
                eval.episodes.len(),
                eval.success_rate(),
                eval.mean_final_error()
            );
            Ok(true)
        }
        Command::Compare { baseline, piper } => {
            let report = harness::compare_runs(&resolve_run(&baseline), &resolve_run(&piper))?;
            print!("{}", report.render());
            Ok(true)
        }
        Command::Dyncheck { seed, states } => {
            let report = harness::dyncheck(seed, states)?;
            print!("{report}");
            Ok(report.passed())
        }
        Command::Gradcheck { seed } => {
            let report = harness::gradcheck(seed)?;
            print!("{report}");
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
