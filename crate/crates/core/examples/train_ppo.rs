//! Short PPO runs on Reach2D with and without the physics penalty.

use piper::rl::{Algorithm, Trainer, TrainerConfig};
use piper::sim::EnvSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map_or(Ok(60_000), |s| s.parse())?;
    for piper_enabled in [false, true] {
        let mut cfg = TrainerConfig {
            algorithm: Algorithm::Ppo,
            piper_enabled,
            ..TrainerConfig::default()
        };
        cfg.ppo.gamma = 0.95;
        cfg.ppo.init_log_std = -1.5;
        let mut trainer = Trainer::new(EnvSpec::reach2d(), cfg, 42)?;
        let label = if piper_enabled { "piper" } else { "baseline" };
        while trainer.steps() < steps {
            trainer.train_steps(10_000)?;
            let eval = trainer.evaluate(50)?;
            let stats = trainer.take_stats();
            println!(
                "{label:<8} step {:>6}  success {:.2}  error {:.4} m  l_phys {:.3e}",
                trainer.steps(),
                eval.success_rate(),
                eval.mean_final_error(),
                stats.l_phys
            );
        }
    }
    Ok(())
}
