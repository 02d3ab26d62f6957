//! Oracle labels attached to random-action transitions on Push2D.

use piper::harness::random_transitions;
use piper::sim::EnvSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = EnvSpec::push2d();
    let records = random_transitions(&spec, 2000, 5)?;
    let outliers = records.iter().filter(|r| r.oracle.contact_outlier).count();
    let r = &records[10];
    println!("M = {}", r.oracle.mass);
    println!("b = {}", r.oracle.bias.transpose());
    println!("observed qdd = {}", r.oracle.qdd_obs.transpose());
    println!("effective torque = {}  applied = {}", r.oracle.tau_eff.transpose(), r.action.transpose());
    println!("{outliers} of {} transitions flagged as contact outliers", records.len());
    Ok(())
}
