pub mod autodiff;
pub mod dynamics;
pub mod harness;
pub mod oracle;
pub mod physics_losses;
pub mod pinn;
pub mod rl;
pub mod rng;
pub mod sim;
