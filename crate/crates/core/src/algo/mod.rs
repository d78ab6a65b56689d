//! Policy-gradient training of M3FC policies on the finite system.

pub mod gae;
pub mod pg;
pub mod ppo;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gae::{batch_gae, gae};
pub use pg::{estimate_pg, pg_episode_seed};
pub use ppo::{a2c_update, ppo_update, UpdateStats};
pub use train::{initial_params, train, CheckpointKind, DirSink, MetricsRow, NullSink, TrainOutcome, TrainSink};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    #[default]
    Ppo,
    A2c,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub algo: Algo,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub kl_coeff: f64,
    pub clip: f64,
    pub lr: f64,
    /// Environment steps per update.
    pub batch: usize,
    pub minibatch: usize,
    pub sgd_iters: usize,
    pub n_agents: usize,
    pub total_steps: u64,
    pub seed: u64,
    /// Parallel environment slots the batch is split over.
    pub num_envs: usize,
    pub vf_coeff: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Fit the critic to standardized value targets.
    pub normalize_values: bool,
    pub hidden: Vec<usize>,
    /// Checkpoint every this many updates (0: initial and final only).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Ppo,
            gamma: 0.99,
            gae_lambda: 1.0,
            kl_coeff: 0.03,
            clip: 0.2,
            lr: 5e-5,
            batch: 24_000,
            minibatch: 4_000,
            sgd_iters: 8,
            n_agents: 300,
            total_steps: 24_000_000,
            seed: 0,
            num_envs: 4,
            vf_coeff: 0.5,
            max_grad_norm: 10.0,
            normalize_advantages: true,
            normalize_values: true,
            hidden: crate::nn::DEFAULT_HIDDEN.to_vec(),
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    /// Small-batch settings for single-machine runs.
    pub fn desk() -> Self {
        Self {
            batch: 4_000,
            minibatch: 1_000,
            n_agents: 10,
            total_steps: 1_000_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.batch == 0 || self.minibatch == 0 || self.batch % self.minibatch != 0 {
            return bad("minibatch must divide batch");
        }
        if self.num_envs == 0 || self.batch % self.num_envs != 0 {
            return bad("num_envs must divide batch");
        }
        if self.n_agents == 0 {
            return bad("n_agents must be positive");
        }
        if self.sgd_iters == 0 || !(self.lr > 0.0) || self.clip < 0.0 || self.kl_coeff < 0.0 {
            return bad("sgd_iters, lr must be positive; clip, kl_coeff nonnegative");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}
