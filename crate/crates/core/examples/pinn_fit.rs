//! Trains the acceleration proxy on random Reach2D transitions.

use piper::autodiff::Adam;
use piper::harness::random_transitions;
use piper::pinn::{acceleration_mse, pinn_update, PinnLossWeights, PinnModel};
use piper::rl::ReplayBuffer;
use piper::rng::PiperRng;
use piper::sim::EnvSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = EnvSpec::reach2d();
    let mut buffer = ReplayBuffer::new(50_000);
    for r in random_transitions(&spec, 20_000, 1)? {
        buffer.push(r);
    }
    let held_out = random_transitions(&spec, 2000, 2)?;
    let held: Vec<_> = held_out.iter().collect();

    let mut rng = PiperRng::new(3);
    let mut pinn = PinnModel::reference(spec.obs_dim(), spec.n_joints(), &mut rng.split("init"))?;
    let mut adam = Adam::for_network(1e-3, pinn.network());
    let weights = PinnLossWeights::new(0.1, 0.0);
    println!("held-out mse before: {:.4e}", acceleration_mse(&pinn, &held)?);
    for step in 1..=5000 {
        let parts = pinn_update(&mut pinn, &buffer, &mut adam, &weights, 256, &mut rng)?.expect("non-empty buffer");
        if step % 1000 == 0 {
            println!(
                "step {step:>5}  mse {:.4e}  residual {:.4e}  held-out {:.4e}",
                parts.mse,
                parts.residual,
                acceleration_mse(&pinn, &held)?
            );
        }
    }
    Ok(())
}
