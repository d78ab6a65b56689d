//! Minimal feed-forward networks with hand-written reverse-mode gradients,
//! distribution heads, Adam, and binary checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod heads;
pub mod mlp;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use mlp::{MlpSpec, Tape};

use crate::error::{Error, Result};
use crate::policy::HeadConfig;

/// Default hidden layer widths for both networks.
pub const DEFAULT_HIDDEN: [usize; 2] = [256, 256];
/// Scale applied to the final policy layer at initialization.
pub const FINAL_POLICY_SCALE: f64 = 0.01;

/// Exponential moving statistics of value targets. The value network fits
/// standardized targets; [`PolicyParams::values`] undoes the scaling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValueNorm {
    pub mean: f64,
    pub mean_sq: f64,
    /// Accumulated weight, for debiasing the early averages.
    pub weight: f64,
}

impl ValueNorm {
    pub fn update(&mut self, xs: &[f64], beta: f64) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n;
        self.mean = beta * self.mean + (1.0 - beta) * m;
        self.mean_sq = beta * self.mean_sq + (1.0 - beta) * m2;
        self.weight = beta * self.weight + (1.0 - beta);
    }

    /// `(mean, std)`; the identity before the first update.
    pub fn stats(&self) -> (f64, f64) {
        if self.weight <= 0.0 {
            return (0.0, 1.0);
        }
        let m = self.mean / self.weight;
        let var = self.mean_sq / self.weight - m * m;
        (m, var.max(1e-8).sqrt())
    }

    pub fn denormalize(&self, raw: f64) -> f64 {
        let (m, s) = self.stats();
        m + s * raw
    }

    pub fn normalize(&self, x: f64) -> f64 {
        let (m, s) = self.stats();
        (x - m) / s
    }
}

/// Policy and value networks sharing one flat parameter array
/// (`[policy | value]`), plus the action-head configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub policy: MlpSpec,
    pub value: MlpSpec,
    pub heads: HeadConfig,
    #[serde(default)]
    pub value_norm: ValueNorm,
    #[serde(skip)]
    pub data: Vec<f64>,
}

impl PolicyParams {
    pub fn init<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], heads: HeadConfig, rng: &mut R) -> Result<Self> {
        let policy = MlpSpec::new(obs_dim, hidden.to_vec(), heads.output_dim())?;
        let value = MlpSpec::new(obs_dim, hidden.to_vec(), 1)?;
        let mut data = policy.init(rng, FINAL_POLICY_SCALE);
        data.extend(value.init(rng, 1.0));
        Ok(Self {
            policy,
            value,
            heads,
            value_norm: ValueNorm::default(),
            data,
        })
    }

    pub fn from_parts(policy: MlpSpec, value: MlpSpec, heads: HeadConfig, data: Vec<f64>) -> Result<Self> {
        if policy.output_dim != heads.output_dim() || value.output_dim != 1 || policy.input_dim != value.input_dim {
            return Err(Error::Format("network shapes disagree with the head config".into()));
        }
        let n = policy.num_params() + value.num_params();
        if data.len() != n {
            return Err(Error::DimMismatch {
                expected: n,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(Self {
            policy,
            value,
            heads,
            value_norm: ValueNorm::default(),
            data,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim
    }

    pub fn n_policy(&self) -> usize {
        self.policy.num_params()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn policy_params(&self) -> &[f64] {
        &self.data[..self.n_policy()]
    }

    pub fn value_params(&self) -> &[f64] {
        &self.data[self.n_policy()..]
    }

    pub fn policy_out(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.policy.forward_vec(self.policy_params(), obs)
    }

    /// Value estimate in return units.
    pub fn value_of(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.value_norm.denormalize(self.value.forward_vec(self.value_params(), obs)?[0]))
    }

    pub fn policy_batch(&self, obs: ArrayView2<f64>) -> Result<(ndarray::Array2<f64>, Tape)> {
        self.policy.forward(self.policy_params(), obs)
    }

    /// Raw (standardized) value-network outputs.
    pub fn value_batch(&self, obs: ArrayView2<f64>) -> Result<(ndarray::Array2<f64>, Tape)> {
        self.value.forward(self.value_params(), obs)
    }

    /// Backpropagates policy output gradients into `grad[..n_policy]`.
    pub fn policy_backward(&self, tape: &Tape, grad_out: ArrayView2<f64>, grad: &mut [f64]) -> Result<()> {
        let n = self.n_policy();
        self.policy.backward(self.policy_params(), tape, grad_out, &mut grad[..n])
    }

    /// Backpropagates value output gradients into `grad[n_policy..]`.
    pub fn value_backward(&self, tape: &Tape, grad_out: ArrayView2<f64>, grad: &mut [f64]) -> Result<()> {
        let n = self.n_policy();
        self.value.backward(self.value_params(), tape, grad_out, &mut grad[n..])
    }
}
