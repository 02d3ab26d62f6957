//! Drives the Reach2D arm to its goal with a Jacobian-transpose PD law.

use nalgebra::DVector;
use piper::dynamics;
use piper::sim::{Env, EnvSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = EnvSpec::reach2d();
    let mut env = Env::new(spec.clone())?;
    let mut successes = 0;
    let episodes = 20;
    for seed in 0..episodes {
        env.reset(seed);
        loop {
            let w = env.world().clone();
            let ee = dynamics::forward_kinematics(&spec.chain, &w.arm.q)?;
            let jac = dynamics::ee_jacobian(&spec.chain, &w.arm.q)?;
            let force = 60.0 * (env.goal() - ee) - 8.0 * (&jac * &w.arm.qd);
            let g = dynamics::gravity_vector(&spec.chain, &w.arm.q)?;
            let tau: DVector<f64> = jac.transpose() * force + g;
            let step = env.step(&tau)?;
            if step.done() {
                break;
            }
        }
        successes += usize::from(env.success());
        println!("episode {seed:>2}  steps {:>3}  final error {:.4} m", env.steps(), env.final_error());
    }
    println!("success {successes}/{episodes}");
    Ok(())
}
