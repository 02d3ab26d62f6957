//! Acceleration proxy `Φ(s, a) → q̈̂` and its residual-regularized loss.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Activation, Adam, AutodiffError, Gradients, Mlp, Tape};
use crate::physics_losses::{energy_power_imbalance, EnergyInputs};
use crate::rl::{ReplayBuffer, TransitionRecord};
use crate::rng::PiperRng;

/// Hidden layout whose parameter count sits near the reference budget.
pub const REFERENCE_HIDDEN: [usize; 2] = [400, 400];
pub const REFERENCE_PARAM_BUDGET: usize = 162_000;

#[derive(Debug, Error)]
pub enum PinnError {
    #[error("expected {what} of length {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Per-feature affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and standard deviation of `rows`; near-constant features keep
    /// unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            n += 1;
            for j in 0..dim {
                let d = row[j] - mean[j];
                mean[j] += d / n as f64;
                m2[j] += d * (row[j] - mean[j]);
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let std = m2
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-6 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Weights of the proxy loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinnLossWeights {
    /// Dynamics residual weight.
    pub beta: f64,
    /// Power-balance weight; zero on tasks without contact.
    pub beta_energy: f64,
    /// MSE weight of contact-flagged samples.
    pub outlier_weight: f64,
}

impl PinnLossWeights {
    pub fn new(beta: f64, beta_energy: f64) -> Self {
        Self {
            beta,
            beta_energy,
            outlier_weight: 0.5,
        }
    }
}

/// Batch-mean value of each loss term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PinnLossParts {
    pub mse: f64,
    pub residual: f64,
    pub energy: f64,
    pub total: f64,
    /// Mean `|q̇ᵀ(MΦ + ½Ṁq̇ + G − a − τ_ext)|`, reported whatever the weights.
    pub r_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinnModel {
    net: Mlp,
    obs_dim: usize,
    n_joints: usize,
    input_norm: Normalizer,
    output_norm: Normalizer,
    normalization_frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct PinnCheckpoint {
    obs_dim: usize,
    n_joints: usize,
    input_norm: Normalizer,
    output_norm: Normalizer,
    normalization_frozen: bool,
    network: serde_json::Value,
}

impl PinnModel {
    pub fn new(
        obs_dim: usize,
        n_joints: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut PiperRng,
    ) -> Result<Self, PinnError> {
        let mut sizes = vec![obs_dim + n_joints];
        sizes.extend_from_slice(hidden);
        sizes.push(n_joints);
        let net = Mlp::new(&sizes, activation, rng)?;
        Ok(Self {
            net,
            obs_dim,
            n_joints,
            input_norm: Normalizer::identity(obs_dim + n_joints),
            output_norm: Normalizer::identity(n_joints),
            normalization_frozen: false,
        })
    }

    pub fn reference(obs_dim: usize, n_joints: usize, rng: &mut PiperRng) -> Result<Self, PinnError> {
        Self::new(obs_dim, n_joints, &REFERENCE_HIDDEN, Activation::Tanh, rng)
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn normalization_frozen(&self) -> bool {
        self.normalization_frozen
    }

    /// Fits input and label statistics once; later calls are no-ops.
    pub fn freeze_normalization<'a>(&mut self, records: impl IntoIterator<Item = &'a TransitionRecord>) {
        if self.normalization_frozen {
            return;
        }
        let records: Vec<&TransitionRecord> = records.into_iter().collect();
        let inputs: Vec<Vec<f64>> = records
            .iter()
            .map(|r| r.obs.iter().chain(r.action.iter()).copied().collect())
            .collect();
        if inputs.is_empty() {
            return;
        }
        self.input_norm = Normalizer::fit(inputs.iter().map(|v| v.as_slice()), self.obs_dim + self.n_joints);
        self.output_norm = Normalizer::fit(
            records.iter().map(|r| r.oracle.qdd_obs.as_slice()),
            self.n_joints,
        );
        self.normalization_frozen = true;
    }

    /// Stacks `[obs, action]` rows.
    pub fn input_batch<'a>(
        &self,
        pairs: impl IntoIterator<Item = (&'a DVector<f64>, &'a DVector<f64>)>,
    ) -> Result<DMatrix<f64>, PinnError> {
        let pairs: Vec<_> = pairs.into_iter().collect();
        let width = self.obs_dim + self.n_joints;
        for (o, a) in &pairs {
            self.check(o, a)?;
        }
        Ok(DMatrix::from_fn(pairs.len(), width, |i, j| {
            let (o, a) = pairs[i];
            if j < self.obs_dim {
                o[j]
            } else {
                a[j - self.obs_dim]
            }
        }))
    }

    fn check(&self, obs: &DVector<f64>, action: &DVector<f64>) -> Result<(), PinnError> {
        if obs.len() != self.obs_dim {
            return Err(PinnError::Shape {
                what: "observation",
                expected: self.obs_dim,
                found: obs.len(),
            });
        }
        if action.len() != self.n_joints {
            return Err(PinnError::Shape {
                what: "action",
                expected: self.n_joints,
                found: action.len(),
            });
        }
        Ok(())
    }

    fn normalize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            let (m, s) = (self.input_norm.mean[j], self.input_norm.std[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        z
    }

    fn denormalize(&self, y: &mut DMatrix<f64>) {
        for (j, mut col) in y.column_iter_mut().enumerate() {
            let (m, s) = (self.output_norm.mean[j], self.output_norm.std[j]);
            col.apply(|v| *v = m + s * *v);
        }
    }

    /// `q̈̂` for a single `(obs, action)` pair.
    pub fn predict_accel(&self, obs: &DVector<f64>, action: &DVector<f64>) -> Result<DVector<f64>, PinnError> {
        let x = self.input_batch([(obs, action)])?;
        let y = self.predict_batch(&x)?;
        Ok(y.row(0).transpose())
    }

    /// Rows of `q̈̂` for raw `[obs, action]` rows.
    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, PinnError> {
        let mut y = self.net.predict(&self.normalize(x))?;
        self.denormalize(&mut y);
        Ok(y)
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Tape), PinnError> {
        let (mut y, tape) = self.net.forward(&self.normalize(x))?;
        self.denormalize(&mut y);
        Ok((y, tape))
    }

    /// Pulls a cotangent on `q̈̂` back to the parameters and to the raw
    /// `[obs, action]` input.
    pub fn backward(&self, tape: &Tape, d_qdd: &DMatrix<f64>) -> Result<(Gradients, DMatrix<f64>), PinnError> {
        let mut d_y = d_qdd.clone();
        for (j, mut col) in d_y.column_iter_mut().enumerate() {
            col *= self.output_norm.std[j];
        }
        let (grads, mut d_z) = self.net.backward(tape, &d_y)?;
        for (j, mut col) in d_z.column_iter_mut().enumerate() {
            col /= self.input_norm.std[j];
        }
        Ok((grads, d_z))
    }

    pub fn to_json(&self) -> String {
        let network: serde_json::Value =
            serde_json::from_str(&self.net.to_checkpoint_json()).expect("network checkpoint is valid JSON");
        serde_json::to_string(&PinnCheckpoint {
            obs_dim: self.obs_dim,
            n_joints: self.n_joints,
            input_norm: self.input_norm.clone(),
            output_norm: self.output_norm.clone(),
            normalization_frozen: self.normalization_frozen,
            network,
        })
        .expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PinnError> {
        let ck: PinnCheckpoint = serde_json::from_str(text).map_err(AutodiffError::from)?;
        let net = Mlp::from_checkpoint_json(&ck.network.to_string())?;
        if net.input_dim() != ck.obs_dim + ck.n_joints || net.output_dim() != ck.n_joints {
            return Err(PinnError::Shape {
                what: "network input",
                expected: ck.obs_dim + ck.n_joints,
                found: net.input_dim(),
            });
        }
        Ok(Self {
            net,
            obs_dim: ck.obs_dim,
            n_joints: ck.n_joints,
            input_norm: ck.input_norm,
            output_norm: ck.output_norm,
            normalization_frozen: ck.normalization_frozen,
        })
    }
}

/// Batch-mean of `w‖Φ − q̈_obs‖² + β‖MΦ + b − a‖² + β_E (q̇ᵀ(MΦ + ½Ṁq̇ + G − a − τ_ext))²`
/// and its parameter gradient.
pub fn pinn_loss(
    model: &PinnModel,
    batch: &[&TransitionRecord],
    weights: &PinnLossWeights,
) -> Result<(PinnLossParts, Gradients), PinnError> {
    if batch.is_empty() {
        return Ok((PinnLossParts::default(), Gradients::zeros_like(&model.net)));
    }
    let x = model.input_batch(batch.iter().map(|r| (&r.obs, &r.action)))?;
    let (qdd_hat, tape) = model.forward(&x)?;
    let n = model.n_joints;
    let inv_b = 1.0 / batch.len() as f64;
    let mut d_qdd = DMatrix::zeros(batch.len(), n);
    let mut parts = PinnLossParts::default();
    for (i, rec) in batch.iter().enumerate() {
        let o = &rec.oracle;
        let phi = qdd_hat.row(i).transpose();
        let w = if o.contact_outlier { weights.outlier_weight } else { 1.0 };
        let err = &phi - &o.qdd_obs;
        let r = &o.mass * &phi + &o.bias - &rec.action;
        let mut grad = 2.0 * w * &err + 2.0 * weights.beta * o.mass.transpose() * &r;
        parts.mse += w * err.norm_squared();
        parts.residual += weights.beta * r.norm_squared();
        let tau = &rec.action + &o.tau_ext;
        let e = energy_power_imbalance(&EnergyInputs {
            qd: &o.qd,
            mass: &o.mass,
            mass_rate: &o.mass_rate,
            gravity: &o.gravity,
            qdd_hat: &phi,
            tau: &tau,
        });
        parts.r_energy += e.abs();
        if weights.beta_energy > 0.0 {
            parts.energy += weights.beta_energy * e * e;
            grad += 2.0 * weights.beta_energy * e * (o.mass.transpose() * &o.qd);
        }
        d_qdd.set_row(i, &(grad * inv_b).transpose());
    }
    parts.mse *= inv_b;
    parts.residual *= inv_b;
    parts.energy *= inv_b;
    parts.r_energy *= inv_b;
    parts.total = parts.mse + parts.residual + parts.energy;
    let (grads, _) = model.backward(&tape, &d_qdd)?;
    Ok((parts, grads))
}

/// One Adam step on a seeded minibatch. Returns `None` (and changes
/// nothing) when the buffer is empty.
pub fn pinn_update(
    model: &mut PinnModel,
    buffer: &ReplayBuffer,
    adam: &mut Adam,
    weights: &PinnLossWeights,
    batch_size: usize,
    rng: &mut PiperRng,
) -> Result<Option<PinnLossParts>, PinnError> {
    if buffer.is_empty() {
        return Ok(None);
    }
    if !model.normalization_frozen {
        model.freeze_normalization(buffer.iter());
    }
    let batch = buffer.sample(batch_size, rng);
    let (parts, grads) = pinn_loss(model, &batch, weights)?;
    adam.step_network(&mut model.net, &grads);
    Ok(Some(parts))
}

/// Batch-mean squared prediction error against the oracle labels.
pub fn acceleration_mse(model: &PinnModel, records: &[&TransitionRecord]) -> Result<f64, PinnError> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let x = model.input_batch(records.iter().map(|r| (&r.obs, &r.action)))?;
    let y = model.predict_batch(&x)?;
    let total: f64 = records
        .iter()
        .enumerate()
        .map(|(i, r)| (y.row(i).transpose() - &r.oracle.qdd_obs).norm_squared())
        .sum();
    Ok(total / records.len() as f64)
}

#[cfg(test)]
mod tests;
