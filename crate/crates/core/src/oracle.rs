//! Dynamics oracle: exact `M`, `b`, and `τ_ext` read from the simulator
//! state, plus finite-difference acceleration labels.
//!
//! Nothing here depends on a learned model.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{self, DynamicsError, ExternalForce};
use crate::sim::{ContactRecord, EnvSpec, WorldState};

/// Default `‖τ_ext‖` (N·m) above which a sample is flagged as contact-dominated.
pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleTerms {
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub tau_ext: DVector<f64>,
}

/// One labelled transition for the acceleration proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample {
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub tau_ext: DVector<f64>,
    pub gravity: DVector<f64>,
    pub qd: DVector<f64>,
    /// Forward-difference `Ṁ` across the physics step.
    pub mass_rate: DMatrix<f64>,
    pub qdd_obs: DVector<f64>,
    pub tau_eff: DVector<f64>,
    /// `‖τ_ext‖` exceeded the outlier threshold; the label absorbs contact
    /// impulses and is down-weighted by the proxy loss.
    pub contact_outlier: bool,
}

/// `M(q)` and `b(q, q̇)` with the contact torque from `contact` folded into
/// the bias.
pub fn extract(
    spec: &EnvSpec,
    world: &WorldState,
    contact: &ContactRecord,
) -> Result<OracleTerms, DynamicsError> {
    let arm = &world.arm;
    let mass = dynamics::mass_matrix(&spec.chain, &arm.q)?;
    let bias = dynamics::bias_force(
        &spec.chain,
        &arm.q,
        &arm.qd,
        &ExternalForce::Generalized(contact.tau_ext.clone()),
    )?;
    Ok(OracleTerms {
        mass,
        bias,
        tau_ext: contact.tau_ext.clone(),
    })
}

/// Backward difference `(q̇_next − q̇_t) / dt`. This inverts the velocity
/// update of the semi-implicit Euler integrator exactly.
pub fn fd_acceleration(
    qd_t: &DVector<f64>,
    qd_next: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    if qd_t.len() != qd_next.len() {
        return Err(DynamicsError::DimensionMismatch {
            what: "qd_next",
            expected: qd_t.len(),
            found: qd_next.len(),
        });
    }
    Ok((qd_next - qd_t) / dt)
}

/// `τ_eff = M q̈_obs + b`.
pub fn effective_torque(mass: &DMatrix<f64>, qdd_obs: &DVector<f64>, bias: &DVector<f64>) -> DVector<f64> {
    mass * qdd_obs + bias
}

/// Builds the full oracle sample for the physics step `state → next` that
/// applied the forces in `contact`.
pub fn sample(
    spec: &EnvSpec,
    state: &WorldState,
    contact: &ContactRecord,
    next: &WorldState,
    outlier_threshold: f64,
) -> Result<OracleSample, DynamicsError> {
    let OracleTerms { mass, bias, tau_ext } = extract(spec, state, contact)?;
    let qdd_obs = fd_acceleration(&state.arm.qd, &next.arm.qd, spec.dt)?;
    let tau_eff = effective_torque(&mass, &qdd_obs, &bias);
    let gravity = dynamics::gravity_vector(&spec.chain, &state.arm.q)?;
    let mass_next = dynamics::mass_matrix(&spec.chain, &next.arm.q)?;
    let mass_rate = dynamics::mass_matrix_rate(&mass, &mass_next, spec.dt)?;
    let contact_outlier = tau_ext.norm() > outlier_threshold;
    Ok(OracleSample {
        mass,
        bias,
        tau_ext,
        gravity,
        qd: state.arm.qd.clone(),
        mass_rate,
        qdd_obs,
        tau_eff,
        contact_outlier,
    })
}
