//! Short SAC run on Reach2D with the physics penalty switched on.

use piper::rl::{Algorithm, Trainer, TrainerConfig};
use piper::sim::EnvSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map_or(Ok(20_000), |s| s.parse())?;
    let mut cfg = TrainerConfig {
        algorithm: Algorithm::Sac,
        piper_enabled: true,
        ..TrainerConfig::default()
    };
    cfg.sac.gamma = 0.95;
    cfg.sac.init_alpha = 0.2;
    cfg.sac.batch = 128;
    let mut trainer = Trainer::new(EnvSpec::reach2d(), cfg, 7)?;
    while trainer.steps() < steps {
        trainer.train_steps(5000)?;
        let eval = trainer.evaluate(50)?;
        let stats = trainer.take_stats();
        println!(
            "step {:>6}  success {:.2}  error {:.4} m  l_phys {:.3e}  pinn {:.3e}  pinn updates {}",
            trainer.steps(),
            eval.success_rate(),
            eval.mean_final_error(),
            stats.l_phys,
            stats.pinn_loss,
            trainer.pinn_updates()
        );
    }
    Ok(())
}
