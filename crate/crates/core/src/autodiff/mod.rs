//! Minimal reverse-mode differentiation for dense multilayer perceptrons.
//!
//! Batches are row-major in meaning: a `B × d` matrix holds `B` samples.
//! A forward pass records a [`Tape`] of layer activations; `backward` walks
//! it in reverse and returns both the parameter gradients and the cotangent
//! with respect to the network *input*, which lets callers chain one
//! network's input gradient into another network's output.

mod adam;
mod gradcheck;

pub use adam::Adam;
pub use gradcheck::{grad_check, max_relative_error, GradCheckReport};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::PiperRng;

pub const CHECKPOINT_FORMAT: &str = "piper-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("network needs at least an input and an output layer")]
    TooFewLayers,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

/// `tanh` through one `expm1`, about twice as fast as the libm call and
/// within a couple of ulps of it.
fn fast_tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp_m1();
    (-e / (2.0 + e)).copysign(x)
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => fast_tanh(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Affine layer `y = x W + b` acting on row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in × fan_out`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weight;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.bias[j]);
        }
        z
    }
}

/// Recorded activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    input: DMatrix<f64>,
    /// Output of every layer, after its activation (the last is linear).
    outputs: Vec<DMatrix<f64>>,
}

impl Tape {
    pub fn output(&self) -> &DMatrix<f64> {
        self.outputs.last().expect("tape has at least one layer")
    }

    pub fn input(&self) -> &DMatrix<f64> {
        &self.input
    }
}

/// Parameter gradients shaped like the owning [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.norm_squared() + l.bias.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n.is_finite() {
            self.scale(max_norm / n);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Fully connected network with a shared hidden activation and a linear
/// output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<Dense>,
}

#[derive(Serialize, Deserialize)]
struct MlpCheckpoint {
    format: String,
    version: u32,
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

impl Mlp {
    /// Fan-in scaled uniform initialization: Glorot for tanh, He for relu.
    /// Biases start at zero.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut PiperRng) -> Result<Self, AutodiffError> {
        if sizes.len() < 2 {
            return Err(AutodiffError::TooFewLayers);
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = match activation {
                    Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                };
                Dense {
                    weight: DMatrix::from_fn(fan_in, fan_out, |_, _| rng.uniform(-limit, limit)),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            layers,
        })
    }

    /// Multiplies the output layer's weights by `factor` (small initial
    /// outputs for policy heads).
    pub fn with_output_scale(mut self, factor: f64) -> Self {
        if let Some(last) = self.layers.last_mut() {
            last.weight *= factor;
        }
        self
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// `Σ (fan_in + 1) · fan_out`.
    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), AutodiffError> {
        if flat.len() != self.param_count() {
            return Err(AutodiffError::Shape {
                what: "parameter vector",
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<(), AutodiffError> {
        if x.ncols() != self.input_dim() {
            return Err(AutodiffError::Shape {
                what: "network input",
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Forward pass over a batch, recording the tape.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Tape), AutodiffError> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&h);
            if i < last {
                let act = self.activation;
                z.apply(|v| *v = act.apply(*v));
            }
            outputs.push(z.clone());
            h = z;
        }
        Ok((
            h,
            Tape {
                input: x.clone(),
                outputs,
            },
        ))
    }

    /// Forward pass without a tape.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, AutodiffError> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                let act = self.activation;
                h.apply(|v| *v = act.apply(*v));
            }
        }
        Ok(h)
    }

    /// Single-sample convenience wrapper around [`Mlp::predict`].
    pub fn predict_one(&self, x: &DVector<f64>) -> Result<DVector<f64>, AutodiffError> {
        let row = DMatrix::from_row_slice(1, x.len(), x.as_slice());
        let out = self.predict(&row)?;
        Ok(DVector::from_iterator(out.ncols(), out.iter().copied()))
    }

    /// Reverse pass: returns parameter gradients and the input cotangent for
    /// the output cotangent `d_out` (same shape as the forward output).
    pub fn backward(&self, tape: &Tape, d_out: &DMatrix<f64>) -> Result<(Gradients, DMatrix<f64>), AutodiffError> {
        let out = tape.output();
        if d_out.shape() != out.shape() {
            return Err(AutodiffError::Shape {
                what: "output cotangent columns",
                expected: out.ncols(),
                found: d_out.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                let act = self.activation;
                delta.zip_apply(&tape.outputs[i], |d, y| *d *= act.derivative_from_output(y));
            }
            let input = if i == 0 { &tape.input } else { &tape.outputs[i - 1] };
            let weight = input.transpose() * &delta;
            let bias = delta.row_sum().transpose();
            delta = &delta * self.layers[i].weight.transpose();
            grads.push(Dense { weight, bias });
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Applies `θ ← θ + step` with `step` shaped like the gradients.
    pub fn apply_delta(&mut self, delta: &Gradients) {
        for (l, d) in self.layers.iter_mut().zip(&delta.layers) {
            l.weight += &d.weight;
            l.bias += &d.bias;
        }
    }

    /// Polyak averaging `self ← (1 − τ) self + τ source`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.weight.zip_apply(&s.weight, |a, b| *a = (1.0 - tau) * *a + tau * b);
            t.bias.zip_apply(&s.bias, |a, b| *a = (1.0 - tau) * *a + tau * b);
        }
    }

    pub fn to_checkpoint_json(&self) -> String {
        serde_json::to_string(&MlpCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            sizes: self.sizes.clone(),
            activation: self.activation,
            params: self.params(),
        })
        .expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, AutodiffError> {
        let ck: MlpCheckpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(AutodiffError::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        if ck.sizes.len() < 2 {
            return Err(AutodiffError::TooFewLayers);
        }
        let mut net = Self {
            layers: ck
                .sizes
                .windows(2)
                .map(|w| Dense {
                    weight: DMatrix::zeros(w[0], w[1]),
                    bias: DVector::zeros(w[1]),
                })
                .collect(),
            sizes: ck.sizes,
            activation: ck.activation,
        };
        net.set_params(&ck.params)?;
        Ok(net)
    }
}

/// Stacks row vectors into a `B × d` batch matrix.
pub fn batch_from_rows<'a>(rows: impl IntoIterator<Item = &'a DVector<f64>>, dim: usize) -> DMatrix<f64> {
    let rows: Vec<&DVector<f64>> = rows.into_iter().collect();
    DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j])
}

#[cfg(test)]
mod tests;
