//! Physics residuals and task constraints as plain functions of oracle
//! terms and network outputs. Each loss comes with its analytic gradient
//! with respect to the quantities a learner can move.

use nalgebra::{DMatrix, DVector, Matrix2xX, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::STANDARD_GRAVITY;
use crate::sim::ContactRecord;

#[derive(Debug, Error, PartialEq)]
pub enum PhysicsLossError {
    #[error("object speed {speed} is at or below the stick threshold {v_stick}; the sliding direction is undefined")]
    NotSliding { speed: f64, v_stick: f64 },
    #[error("{0} must be non-negative")]
    NegativeWeight(&'static str),
}

/// Weights of the residual and task terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintWeights {
    /// Articulation consistency term of the reach loss.
    pub lambda_1: f64,
    /// Goal distance term of the reach loss.
    pub lambda_2: f64,
    pub lambda_f: f64,
    pub lambda_m: f64,
    pub lambda_g: f64,
    /// Residual weight in the acceleration proxy loss.
    pub beta: f64,
    pub lambda_phys_ppo: f64,
    pub lambda_phys_sac: f64,
}

impl Default for ConstraintWeights {
    fn default() -> Self {
        Self {
            lambda_1: 1.0,
            lambda_2: 1.0,
            lambda_f: 0.1,
            lambda_m: 0.1,
            lambda_g: 1.0,
            beta: 0.1,
            lambda_phys_ppo: 0.01,
            lambda_phys_sac: 0.005,
        }
    }
}

impl ConstraintWeights {
    pub fn validate(&self) -> Result<(), PhysicsLossError> {
        let fields = [
            ("lambda_1", self.lambda_1),
            ("lambda_2", self.lambda_2),
            ("lambda_f", self.lambda_f),
            ("lambda_m", self.lambda_m),
            ("lambda_g", self.lambda_g),
            ("beta", self.beta),
            ("lambda_phys_ppo", self.lambda_phys_ppo),
            ("lambda_phys_sac", self.lambda_phys_sac),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) {
                return Err(PhysicsLossError::NegativeWeight(name));
            }
        }
        Ok(())
    }
}

/// `r = M q̈̂ + b − a`.
pub fn physics_residual(
    mass: &DMatrix<f64>,
    bias: &DVector<f64>,
    qdd_hat: &DVector<f64>,
    action: &DVector<f64>,
) -> DVector<f64> {
    mass * qdd_hat + bias - action
}

/// Pulls a cotangent `r̄` on the residual back to `(q̈̂, a)`:
/// `(Mᵀ r̄, −r̄)`.
pub fn physics_residual_vjp(mass: &DMatrix<f64>, r_bar: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    (mass.transpose() * r_bar, -r_bar)
}

/// `‖r‖²`.
pub fn physics_penalty(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

pub fn physics_penalty_grad(r: &DVector<f64>) -> DVector<f64> {
    2.0 * r
}

/// Terms of the power balance `q̇ᵀ(M q̈ + ½ Ṁ q̇ + G − τ)`.
#[derive(Debug, Clone, Copy)]
pub struct EnergyInputs<'a> {
    pub qd: &'a DVector<f64>,
    pub mass: &'a DMatrix<f64>,
    pub mass_rate: &'a DMatrix<f64>,
    pub gravity: &'a DVector<f64>,
    pub qdd_hat: &'a DVector<f64>,
    pub tau: &'a DVector<f64>,
}

/// Signed power imbalance before taking the absolute value.
pub fn energy_power_imbalance(e: &EnergyInputs) -> f64 {
    let qd = e.qd;
    qd.dot(&(e.mass * e.qdd_hat)) + 0.5 * qd.dot(&(e.mass_rate * qd)) + qd.dot(e.gravity) - qd.dot(e.tau)
}

/// `|q̇ᵀM q̈̂ + ½ q̇ᵀṀ q̇ + q̇ᵀG − q̇ᵀτ|`.
pub fn energy_residual(e: &EnergyInputs) -> f64 {
    energy_power_imbalance(e).abs()
}

/// Gradient of [`energy_residual`] with respect to `(q̈̂, τ)`. At the kink
/// (zero imbalance) the zero subgradient is returned.
pub fn energy_residual_grad(e: &EnergyInputs) -> (DVector<f64>, DVector<f64>) {
    let s = sign(energy_power_imbalance(e));
    (s * (e.mass.transpose() * e.qd), -s * e.qd)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `λ₁‖r_dyn‖² + λ₂‖ee − goal‖²`.
pub fn reach_loss(r_dyn: &DVector<f64>, ee: &Vector2<f64>, goal: &Vector2<f64>, w: &ConstraintWeights) -> f64 {
    w.lambda_1 * r_dyn.norm_squared() + w.lambda_2 * (ee - goal).norm_squared()
}

/// Gradient of [`reach_loss`] with respect to `(r_dyn, ee)`.
pub fn reach_loss_grad(
    r_dyn: &DVector<f64>,
    ee: &Vector2<f64>,
    goal: &Vector2<f64>,
    w: &ConstraintWeights,
) -> (DVector<f64>, Vector2<f64>) {
    (2.0 * w.lambda_1 * r_dyn, 2.0 * w.lambda_2 * (ee - goal))
}

/// Adds the friction work the simulator dissipated during one physics step.
pub fn friction_work_accumulate(running: f64, contact: &ContactRecord) -> f64 {
    running + contact.friction_work_increment
}

/// Energy bookkeeping over a rollout window.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WorkWindow {
    pub friction_work: f64,
    /// Kinetic energy (arm and object) at the start of the window.
    pub kinetic_start: f64,
    pub kinetic_end: f64,
    /// `Σ q̇ᵀτ dt` supplied by the actuators.
    pub input_work: f64,
}

impl WorkWindow {
    pub fn delta_kinetic(&self) -> f64 {
        self.kinetic_end - self.kinetic_start
    }

    /// `W_fric + ΔE_kin − W_input`.
    pub fn imbalance(&self) -> f64 {
        self.friction_work + self.delta_kinetic() - self.input_work
    }
}

/// `reach_part + λ_f |W_fric + ΔE_kin − W_input|`.
pub fn push_loss(reach_part: f64, window: &WorkWindow, lambda_f: f64) -> f64 {
    reach_part + lambda_f * window.imbalance().abs()
}

/// Gradient of [`push_loss`] with respect to `(W_fric, ΔE_kin, W_input)`.
pub fn push_loss_grad(window: &WorkWindow, lambda_f: f64) -> [f64; 3] {
    let s = lambda_f * sign(window.imbalance());
    [s, s, -s]
}

/// `reach_part + λ_m ‖m Δv − J‖²`.
pub fn slide_loss(reach_part: f64, m_obj: f64, dv: &Vector2<f64>, impulse: &Vector2<f64>, lambda_m: f64) -> f64 {
    reach_part + lambda_m * (m_obj * dv - impulse).norm_squared()
}

/// Gradient of [`slide_loss`] with respect to `(Δv, J)`.
pub fn slide_loss_grad(
    m_obj: f64,
    dv: &Vector2<f64>,
    impulse: &Vector2<f64>,
    lambda_m: f64,
) -> (Vector2<f64>, Vector2<f64>) {
    let e = m_obj * dv - impulse;
    (2.0 * lambda_m * m_obj * e, -2.0 * lambda_m * e)
}

/// `m a + μ m g v̂` for a sliding object.
pub fn sliding_friction_residual(
    m: f64,
    a_obj: &Vector2<f64>,
    mu: f64,
    g: f64,
    v_obj: &Vector2<f64>,
    v_stick: f64,
) -> Result<Vector2<f64>, PhysicsLossError> {
    let speed = v_obj.norm();
    if !(speed > v_stick) {
        return Err(PhysicsLossError::NotSliding { speed, v_stick });
    }
    Ok(m * a_obj + mu * m * g * v_obj / speed)
}

/// `M_arm + Jᵀ m J`.
pub fn combined_mass(m_arm: &DMatrix<f64>, jac: &Matrix2xX<f64>, m_obj: f64) -> DMatrix<f64> {
    let added = jac.transpose() * jac * m_obj;
    m_arm + added
}

/// Inputs of the force-closure hinge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspInputs {
    pub m_obj: f64,
    pub z_lift_accel: f64,
    pub mu_grip: f64,
    pub grip_force: f64,
    pub lambda_g: f64,
    pub g: f64,
}

impl GraspInputs {
    pub fn new(m_obj: f64, z_lift_accel: f64, mu_grip: f64, grip_force: f64, lambda_g: f64) -> Self {
        Self {
            m_obj,
            z_lift_accel,
            mu_grip,
            grip_force,
            lambda_g,
            g: STANDARD_GRAVITY,
        }
    }

    fn deficit(&self) -> f64 {
        (self.m_obj * (self.g + self.z_lift_accel) - self.mu_grip * self.grip_force).max(0.0)
    }
}

/// `λ_g max(0, m(g + z̈) − μ_grip F_grip)²`.
pub fn grasp_loss(x: &GraspInputs) -> f64 {
    x.lambda_g * x.deficit().powi(2)
}

/// Gradient of [`grasp_loss`] with respect to `(m_obj, z̈_lift, F_grip)`.
pub fn grasp_loss_grad(x: &GraspInputs) -> [f64; 3] {
    let d = 2.0 * x.lambda_g * x.deficit();
    [d * (x.g + x.z_lift_accel), d * x.m_obj, -d * x.mu_grip]
}
