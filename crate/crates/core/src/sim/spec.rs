use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ChainModel, Link, STANDARD_GRAVITY};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    /// Vertical-plane reaching under gravity.
    Reach2d,
    /// Horizontal-plane pushing of a block with Coulomb friction.
    Push2d,
    /// Horizontal-plane striking of a puck toward a goal outside the reach.
    Slide2d,
}

impl EnvId {
    pub fn has_object(self) -> bool {
        !matches!(self, EnvId::Reach2d)
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvId::Reach2d => "reach2d",
            EnvId::Push2d => "push2d",
            EnvId::Slide2d => "slide2d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Sparse,
    Dense,
}

/// Axis-aligned sampling box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Region {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        (self.min[0]..=self.max[0]).contains(&p.x) && (self.min[1]..=self.max[1]).contains(&p.y)
    }

    fn is_valid(&self) -> bool {
        self.min.iter().chain(&self.max).all(|v| v.is_finite())
            && self.min[0] <= self.max[0]
            && self.min[1] <= self.max[1]
    }
}

/// Penalty contact between the end-effector disc and the object disc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactParams {
    /// Normal stiffness (N/m).
    pub stiffness: f64,
    /// Normal damping (N·s/m).
    pub damping: f64,
    pub ee_radius: f64,
    pub object_radius: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness: 2.5e4,
            damping: 5.0,
            ee_radius: 0.02,
            object_radius: 0.03,
        }
    }
}

/// Everything needed to build one goal-conditioned environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub env_id: EnvId,
    pub chain: ChainModel,
    /// Physics timestep (s).
    pub dt: f64,
    /// Physics steps per control step; the applied torque is held constant.
    pub substeps: usize,
    /// Control steps per episode.
    pub horizon: usize,
    pub goal_region: Region,
    /// Nominal initial joint angles; `reset` adds uniform noise.
    pub initial_q: Vec<f64>,
    pub initial_q_noise: f64,
    /// Object start box (ignored for reach2d).
    pub object_region: Region,
    pub object_mass: f64,
    pub friction_mu: f64,
    /// Gravity magnitude loading the object onto the table (m/s²).
    pub table_gravity: f64,
    /// Below this speed (m/s) the object sticks unless static friction is overcome.
    pub v_stick: f64,
    pub contact: ContactParams,
    pub reward_mode: RewardMode,
    pub success_radius: f64,
}

impl EnvSpec {
    /// Two-link arm in the vertical plane reaching goals in front of it.
    pub fn reach2d() -> Self {
        let chain = ChainModel::new(
            vec![Link::uniform_rod(0.5, 0.5), Link::uniform_rod(0.5, 0.5)],
            Vector2::new(0.0, -STANDARD_GRAVITY),
            vec![6.0, 3.0],
        )
        .expect("preset chain is valid");
        Self {
            env_id: EnvId::Reach2d,
            chain,
            dt: 0.002,
            substeps: 10,
            horizon: 50,
            goal_region: Region::new([0.35, -0.65], [0.75, -0.25]),
            initial_q: vec![-FRAC_PI_2, 0.0],
            initial_q_noise: 0.1,
            object_region: Region::new([0.0, 0.0], [0.0, 0.0]),
            object_mass: 0.1,
            friction_mu: 0.5,
            table_gravity: STANDARD_GRAVITY,
            v_stick: 1e-3,
            contact: ContactParams::default(),
            reward_mode: RewardMode::Dense,
            success_radius: 0.05,
        }
    }

    /// Two-link arm in the horizontal plane pushing a 0.1 kg block.
    pub fn push2d() -> Self {
        let chain = ChainModel::new(
            vec![Link::uniform_rod(0.5, 0.5), Link::uniform_rod(0.5, 0.5)],
            Vector2::zeros(),
            vec![3.0, 1.5],
        )
        .expect("preset chain is valid");
        Self {
            env_id: EnvId::Push2d,
            chain,
            horizon: 100,
            goal_region: Region::new([0.62, -0.05], [0.72, 0.05]),
            initial_q: vec![-1.159, 2.318],
            initial_q_noise: 0.05,
            object_region: Region::new([0.5, -0.02], [0.54, 0.02]),
            ..Self::reach2d()
        }
    }

    /// Two-link arm in the horizontal plane striking a puck toward a goal
    /// beyond its reach.
    pub fn slide2d() -> Self {
        Self {
            env_id: EnvId::Slide2d,
            horizon: 100,
            goal_region: Region::new([1.15, -0.15], [1.35, 0.15]),
            object_region: Region::new([0.7, -0.02], [0.74, 0.02]),
            initial_q: vec![-1.159, 2.318],
            ..Self::push2d()
        }
    }

    pub fn preset(env_id: EnvId) -> Self {
        match env_id {
            EnvId::Reach2d => Self::reach2d(),
            EnvId::Push2d => Self::push2d(),
            EnvId::Slide2d => Self::slide2d(),
        }
    }

    pub fn n_joints(&self) -> usize {
        self.chain.n_links()
    }

    /// Seconds of simulated time per control step.
    pub fn control_period(&self) -> f64 {
        self.dt * self.substeps as f64
    }

    pub fn obs_dim(&self) -> usize {
        let base = 2 * self.n_joints() + 4;
        if self.env_id.has_object() {
            base + 6
        } else {
            base
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field: &str, reason: &str| {
            Err(SimError::InvalidSpec(format!("{field}: {reason}")))
        };
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt", "must be > 0");
        }
        if self.substeps == 0 {
            return bad("substeps", "must be >= 1");
        }
        if self.horizon == 0 {
            return bad("horizon", "must be >= 1");
        }
        if !(self.friction_mu.is_finite() && self.friction_mu >= 0.0) {
            return bad("friction_mu", "must be >= 0");
        }
        if !(self.object_mass.is_finite() && self.object_mass > 0.0) {
            return bad("object_mass", "must be > 0");
        }
        if !(self.success_radius.is_finite() && self.success_radius >= 0.0) {
            return bad("success_radius", "must be >= 0");
        }
        if !(self.v_stick.is_finite() && self.v_stick > 0.0) {
            return bad("v_stick", "must be > 0");
        }
        if self.initial_q.len() != self.n_joints() {
            return bad("initial_q", "length must equal the number of links");
        }
        if !self.goal_region.is_valid() {
            return bad("goal_region", "min must not exceed max");
        }
        if !self.object_region.is_valid() {
            return bad("object_region", "min must not exceed max");
        }
        let c = &self.contact;
        if !(c.stiffness > 0.0 && c.damping >= 0.0 && c.ee_radius >= 0.0 && c.object_radius >= 0.0) {
            return bad("contact", "stiffness must be > 0, damping and radii >= 0");
        }
        if self.env_id == EnvId::Slide2d {
            let reach = self.chain.reach();
            let r = &self.goal_region;
            let nearest = Vector2::new(0.0_f64.clamp(r.min[0], r.max[0]), 0.0_f64.clamp(r.min[1], r.max[1]));
            if nearest.norm() <= reach {
                return bad("goal_region", "slide2d goals must lie outside the reachable disk");
            }
        }
        Ok(())
    }
}
