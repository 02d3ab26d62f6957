use nalgebra::{DVector, Vector2};

use super::{observe, reward, step, ContactRecord, EnvSpec, SimError, WorldState};

pub type Observation = DVector<f64>;

/// Outcome of one control step (`spec.substeps` physics steps with the same
/// torque).
#[derive(Debug, Clone)]
pub struct EnvStep {
    pub obs: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    /// Torque actually applied (after clipping).
    pub action: DVector<f64>,
    /// State before the control step.
    pub state: WorldState,
    /// Contact forces applied during the first physics step.
    pub first_contact: ContactRecord,
    /// State after the first physics step; the dynamics oracle differences
    /// against this at the physics rate.
    pub first_next: WorldState,
    pub next_state: WorldState,
    /// Table friction work summed over the control step (J).
    pub friction_work: f64,
    /// Mechanical work input by the joint motors, `Σ q̇ᵀτ dt` (J).
    pub input_work: f64,
    /// Largest contact impulse seen during the control step.
    pub contact_impulse: Vector2<f64>,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Stateful episode wrapper around the pure `reset`/`step` functions.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    world: WorldState,
    goal: Vector2<f64>,
    steps: usize,
}

impl Env {
    pub fn new(spec: EnvSpec) -> Result<Self, SimError> {
        spec.validate()?;
        let (world, goal) = super::reset(&spec, 0);
        Ok(Self {
            spec,
            world,
            goal,
            steps: 0,
        })
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        let (world, goal) = super::reset(&self.spec, seed);
        self.world = world;
        self.goal = goal;
        self.steps = 0;
        self.observation()
    }

    pub fn observation(&self) -> Observation {
        observe(&self.spec, &self.world, &self.goal).expect("world state matches spec")
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn goal(&self) -> Vector2<f64> {
        self.goal
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn final_error(&self) -> f64 {
        super::final_error(&self.spec, &self.world, &self.goal).expect("world state matches spec")
    }

    pub fn success(&self) -> bool {
        self.final_error() <= self.spec.success_radius
    }

    pub fn step(&mut self, action: &DVector<f64>) -> Result<EnvStep, SimError> {
        let n = self.spec.n_joints();
        if action.len() != n {
            return Err(SimError::ActionDimension {
                expected: n,
                found: action.len(),
            });
        }
        let tau = self.spec.chain.clip_torque(action);
        let state = self.world.clone();
        let mut first = None;
        let mut friction_work = 0.0;
        let mut input_work = 0.0;
        let mut contact_impulse = Vector2::zeros();
        for _ in 0..self.spec.substeps {
            let (next, contact) = step(&self.spec, &self.world, &tau)?;
            let qd_mid = 0.5 * (&self.world.arm.qd + &next.arm.qd);
            input_work += qd_mid.dot(&tau) * self.spec.dt;
            friction_work += contact.friction_work_increment;
            if contact.ee_object_impulse.norm() > contact_impulse.norm() {
                contact_impulse = contact.ee_object_impulse;
            }
            if first.is_none() {
                first = Some((contact, next.clone()));
            }
            self.world = next;
        }
        self.steps += 1;
        let (first_contact, first_next) = first.expect("substeps >= 1");
        Ok(EnvStep {
            obs: self.observation(),
            reward: reward(&self.spec, &self.world, &self.goal)?,
            terminated: false,
            truncated: self.steps >= self.spec.horizon,
            action: tau,
            state,
            first_contact,
            first_next,
            next_state: self.world.clone(),
            friction_work,
            input_work,
            contact_impulse,
        })
    }
}
