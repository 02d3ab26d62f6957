//! Deterministic fixed-step simulator for the planar manipulation tasks.
//!
//! The arm integrates the manipulator equation with semi-implicit Euler
//! (velocity first, then position). The object is a disc sliding on a
//! horizontal table under Coulomb friction and a penalty spring-damper
//! contact with the end-effector disc.

mod env;
mod spec;

pub use env::{Env, EnvStep, Observation};
pub use spec::{ContactParams, EnvId, EnvSpec, Region, RewardMode};

use nalgebra::{DVector, Vector2};
use thiserror::Error;

use crate::dynamics::{self, DynamicsError, ExternalForce, JointState};
use crate::rng::PiperRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("simulation diverged at t = {time:.4} s (non-finite state)")]
    Diverged { time: f64 },
    #[error("action has {found} entries, expected {expected}")]
    ActionDimension { expected: usize, found: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Contact quantities reported by one physics step.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactRecord {
    pub in_contact: bool,
    /// Normal force magnitude on the object (N).
    pub normal_force: f64,
    pub contact_point: Vector2<f64>,
    /// Force applied by the end-effector on the object during this step.
    pub force_on_object: Vector2<f64>,
    /// End-effector impulse on the object accumulated since the current
    /// contact event began (N·s).
    pub ee_object_impulse: Vector2<f64>,
    /// Generalized torque the contact exerts on the arm, `Jᵀ(−F_object)`.
    pub tau_ext: DVector<f64>,
    /// Energy dissipated by table friction during this step (J).
    pub friction_work_increment: f64,
}

impl ContactRecord {
    pub fn none(n_joints: usize) -> Self {
        Self {
            in_contact: false,
            normal_force: 0.0,
            contact_point: Vector2::zeros(),
            force_on_object: Vector2::zeros(),
            ee_object_impulse: Vector2::zeros(),
            tau_ext: DVector::zeros(n_joints),
            friction_work_increment: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub arm: JointState,
    pub object_pos: Option<Vector2<f64>>,
    pub object_vel: Option<Vector2<f64>>,
    pub time: f64,
    pub last_contact: Option<ContactRecord>,
}

impl WorldState {
    pub fn is_finite(&self) -> bool {
        self.arm.is_finite()
            && self.time.is_finite()
            && self.object_pos.is_none_or(|p| p.iter().all(|v| v.is_finite()))
            && self.object_vel.is_none_or(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Kinetic energy of the arm plus the object.
    pub fn kinetic_energy(&self, spec: &EnvSpec) -> Result<f64, DynamicsError> {
        let arm = dynamics::kinetic_energy(&spec.chain, &self.arm.q, &self.arm.qd)?;
        let obj = self
            .object_vel
            .map_or(0.0, |v| 0.5 * spec.object_mass * v.norm_squared());
        Ok(arm + obj)
    }
}

/// Samples the initial state and goal for an episode. Pure in `(spec, seed)`.
pub fn reset(spec: &EnvSpec, seed: u64) -> (WorldState, Vector2<f64>) {
    let mut rng = PiperRng::new(seed).split("reset");
    let noise = spec.initial_q_noise;
    let q = DVector::from_iterator(
        spec.n_joints(),
        spec.initial_q.iter().map(|q0| q0 + rng.uniform(-noise, noise)),
    );
    let (object_pos, object_vel) = if spec.env_id.has_object() {
        let r = &spec.object_region;
        let p = Vector2::new(rng.uniform(r.min[0], r.max[0]), rng.uniform(r.min[1], r.max[1]));
        (Some(p), Some(Vector2::zeros()))
    } else {
        (None, None)
    };
    let reach = spec.chain.reach();
    let r = &spec.goal_region;
    let goal = loop {
        let g = Vector2::new(rng.uniform(r.min[0], r.max[0]), rng.uniform(r.min[1], r.max[1]));
        let ok = match spec.env_id {
            EnvId::Reach2d => g.norm() < reach,
            EnvId::Slide2d => g.norm() > reach,
            EnvId::Push2d => true,
        };
        if ok {
            break g;
        }
    };
    let world = WorldState {
        arm: JointState::at_rest(q),
        object_pos,
        object_vel,
        time: 0.0,
        last_contact: None,
    };
    (world, goal)
}

/// Contact force between end-effector and object at the current state.
fn contact_at(spec: &EnvSpec, world: &WorldState) -> Result<ContactRecord, DynamicsError> {
    let n = spec.n_joints();
    let mut record = ContactRecord::none(n);
    let (Some(obj), Some(obj_vel)) = (world.object_pos, world.object_vel) else {
        return Ok(record);
    };
    let q = &world.arm.q;
    let ee = dynamics::forward_kinematics(&spec.chain, q)?;
    let delta = obj - ee;
    let dist = delta.norm();
    let overlap = spec.contact.ee_radius + spec.contact.object_radius - dist;
    if overlap <= 0.0 || dist < 1e-12 {
        return Ok(record);
    }
    let jac = dynamics::ee_jacobian(&spec.chain, q)?;
    let ee_vel = &jac * &world.arm.qd;
    let normal = delta / dist;
    let approach = (obj_vel - ee_vel).dot(&normal);
    let magnitude = (spec.contact.stiffness * overlap - spec.contact.damping * approach).max(0.0);
    let force = magnitude * normal;
    record.in_contact = true;
    record.normal_force = magnitude;
    record.contact_point = ee + spec.contact.ee_radius * normal;
    record.force_on_object = force;
    record.tau_ext = jac.transpose() * (-force);
    Ok(record)
}

/// Advances the world by one physics step `dt` with joint torques `tau`
/// (clipped to the torque limits first).
///
/// The returned contact record describes the forces applied during the
/// step, evaluated at the incoming state.
pub fn step(
    spec: &EnvSpec,
    world: &WorldState,
    tau: &DVector<f64>,
) -> Result<(WorldState, ContactRecord), SimError> {
    let n = spec.n_joints();
    if tau.len() != n {
        return Err(SimError::ActionDimension {
            expected: n,
            found: tau.len(),
        });
    }
    let dt = spec.dt;
    let tau = spec.chain.clip_torque(tau);
    let mut contact = contact_at(spec, world)?;

    let arm = &world.arm;
    let qdd = dynamics::forward_dynamics(
        &spec.chain,
        &arm.q,
        &arm.qd,
        &tau,
        &ExternalForce::Generalized(contact.tau_ext.clone()),
    )?;
    let qd = &arm.qd + &qdd * dt;
    let q = &arm.q + &qd * dt;

    let (object_pos, object_vel) = match (world.object_pos, world.object_vel) {
        (Some(p), Some(v)) => {
            let (p_next, v_next, work) = advance_object(spec, p, v, contact.force_on_object);
            contact.friction_work_increment = work;
            (Some(p_next), Some(v_next))
        }
        _ => (None, None),
    };

    if contact.in_contact {
        let carried = match &world.last_contact {
            Some(prev) if prev.in_contact => prev.ee_object_impulse,
            _ => Vector2::zeros(),
        };
        contact.ee_object_impulse = carried + contact.force_on_object * dt;
    }

    let next = WorldState {
        arm: JointState { q, qd },
        object_pos,
        object_vel,
        time: world.time + dt,
        last_contact: Some(contact.clone()),
    };
    if !next.is_finite() {
        return Err(SimError::Diverged { time: next.time });
    }
    Ok((next, contact))
}

/// Object update under the contact force and Coulomb friction.
///
/// Returns the new position, velocity, and the friction work of the step,
/// taken from the exact discrete work-energy balance
/// `W_fric = F·Δx − ΔE_kin` with `Δx = ½(v + v′)·dt`.
fn advance_object(
    spec: &EnvSpec,
    pos: Vector2<f64>,
    vel: Vector2<f64>,
    force: Vector2<f64>,
) -> (Vector2<f64>, Vector2<f64>, f64) {
    let m = spec.object_mass;
    let dt = spec.dt;
    let max_friction = spec.friction_mu * m * spec.table_gravity;
    let speed = vel.norm();

    let vel_next = if speed > spec.v_stick {
        let friction = -max_friction * vel / speed;
        let candidate = vel + dt * (force + friction) / m;
        // Friction alone cannot reverse the direction of motion.
        if candidate.dot(&vel) <= 0.0 && force.norm() <= max_friction {
            Vector2::zeros()
        } else {
            candidate
        }
    } else if force.norm() <= max_friction {
        Vector2::zeros()
    } else {
        let friction = -max_friction * force / force.norm();
        vel + dt * (force + friction) / m
    };

    let displacement = 0.5 * (vel + vel_next) * dt;
    let delta_kinetic = 0.5 * m * (vel_next.norm_squared() - vel.norm_squared());
    let work = (force.dot(&displacement) - delta_kinetic).max(0.0);
    (pos + vel_next * dt, vel_next, work)
}

/// Fixed observation layout:
/// `[q, q̇, ee_pos, goal]`, followed for object tasks by
/// `[object_pos, object_vel, ee_pos − object_pos]`.
pub fn observe(spec: &EnvSpec, world: &WorldState, goal: &Vector2<f64>) -> Result<DVector<f64>, SimError> {
    let n = spec.n_joints();
    let ee = dynamics::forward_kinematics(&spec.chain, &world.arm.q)?;
    let mut obs = Vec::with_capacity(spec.obs_dim());
    obs.extend(world.arm.q.iter());
    obs.extend(world.arm.qd.iter());
    obs.extend([ee.x, ee.y, goal.x, goal.y]);
    if spec.env_id.has_object() {
        let p = world.object_pos.unwrap_or_else(Vector2::zeros);
        let v = world.object_vel.unwrap_or_else(Vector2::zeros);
        obs.extend([p.x, p.y, v.x, v.y, ee.x - p.x, ee.y - p.y]);
    }
    debug_assert_eq!(obs.len(), 2 * n + 4 + if spec.env_id.has_object() { 6 } else { 0 });
    Ok(DVector::from_vec(obs))
}

/// Position of the body that must reach the goal: the end-effector for
/// reach2d, the object otherwise.
pub fn target_position(spec: &EnvSpec, world: &WorldState) -> Result<Vector2<f64>, SimError> {
    match (spec.env_id, world.object_pos) {
        (EnvId::Reach2d, _) | (_, None) => Ok(dynamics::forward_kinematics(&spec.chain, &world.arm.q)?),
        (_, Some(p)) => Ok(p),
    }
}

pub fn final_error(spec: &EnvSpec, world: &WorldState, goal: &Vector2<f64>) -> Result<f64, SimError> {
    Ok((target_position(spec, world)? - goal).norm())
}

/// Success is membership in the closed ball of radius `success_radius`.
pub fn success(spec: &EnvSpec, world: &WorldState, goal: &Vector2<f64>) -> Result<bool, SimError> {
    Ok(final_error(spec, world, goal)? <= spec.success_radius)
}

pub fn reward(spec: &EnvSpec, world: &WorldState, goal: &Vector2<f64>) -> Result<f64, SimError> {
    let d = final_error(spec, world, goal)?;
    Ok(match spec.reward_mode {
        RewardMode::Dense => -d,
        RewardMode::Sparse => {
            if d > spec.success_radius {
                -1.0
            } else {
                0.0
            }
        }
    })
}
