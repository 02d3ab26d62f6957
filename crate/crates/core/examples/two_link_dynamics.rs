//! Mass matrix, bias force and forward dynamics of the Reach2D arm.

use nalgebra::dvector;
use piper::dynamics::{self, ExternalForce};
use piper::sim::EnvSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = EnvSpec::reach2d().chain;
    let q = dvector![0.4, -1.1];
    let qd = dvector![1.5, -0.3];

    let m = dynamics::mass_matrix(&model, &q)?;
    let b = dynamics::bias_force(&model, &q, &qd, &ExternalForce::None)?;
    let c = dynamics::coriolis_matrix(&model, &q, &qd)?;
    let g = dynamics::gravity_vector(&model, &q)?;
    println!("M = {m}");
    println!("b = {}", b.transpose());
    println!("C qd + G = {}", (&c * &qd + g).transpose());

    let tau = dvector![2.0, -1.0];
    let qdd = dynamics::forward_dynamics(&model, &q, &qd, &tau, &ExternalForce::None)?;
    let back = dynamics::inverse_dynamics(&model, &q, &qd, &qdd, &ExternalForce::None)?;
    println!("qdd = {}  inverse dynamics recovers tau = {}", qdd.transpose(), back.transpose());
    println!("ee = {}", dynamics::forward_kinematics(&model, &q)?.transpose());
    println!("energy = {:.6} J", dynamics::total_energy(&model, &q, &qd)?);
    Ok(())
}
