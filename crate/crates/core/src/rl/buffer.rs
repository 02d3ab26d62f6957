use nalgebra::DVector;

use crate::dynamics::DynamicsError;
use crate::oracle::{self, OracleSample};
use crate::rng::PiperRng;
use crate::sim::{EnvSpec, EnvStep, Observation};

/// One environment transition with the oracle labels of its first physics
/// step.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub obs: Observation,
    /// Applied joint torque (N·m).
    pub action: DVector<f64>,
    pub reward: f64,
    pub next_obs: Observation,
    pub terminated: bool,
    pub truncated: bool,
    pub oracle: OracleSample,
}

impl TransitionRecord {
    pub fn from_env_step(
        spec: &EnvSpec,
        obs: &Observation,
        step: &EnvStep,
        outlier_threshold: f64,
    ) -> Result<Self, DynamicsError> {
        let oracle = oracle::sample(spec, &step.state, &step.first_contact, &step.first_next, outlier_threshold)?;
        Ok(Self {
            obs: obs.clone(),
            action: step.action.clone(),
            reward: step.reward,
            next_obs: step.obs.clone(),
            terminated: step.terminated,
            truncated: step.truncated,
            oracle,
        })
    }
}

/// FIFO ring of transitions with uniform, seeded sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<TransitionRecord>,
    next: usize,
}

pub const DEFAULT_REPLAY_CAPACITY: usize = 1_000_000;

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, record: TransitionRecord) {
        if self.items.len() < self.capacity {
            self.items.push(record);
        } else {
            self.items[self.next] = record;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &TransitionRecord {
        &self.items[i]
    }

    /// Oldest-first iteration.
    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `batch` indices drawn uniformly with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut PiperRng) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..batch).map(|_| rng.index(self.items.len())).collect()
    }

    pub fn sample(&self, batch: usize, rng: &mut PiperRng) -> Vec<&TransitionRecord> {
        self.sample_indices(batch, rng).into_iter().map(|i| &self.items[i]).collect()
    }
}
