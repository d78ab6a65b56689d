//! The training loop: sample a batch on the finite system under centralized
//! execution, update, log a metrics row, checkpoint.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::Serialize;

use super::{a2c_update, ppo_update, Algo, TrainConfig, UpdateStats};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::finite_sim::Sampler;
use crate::nn::{Adam, Checkpoint, PolicyParams};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::mean_ci;

const INIT_TAG: u64 = 0x696e_6974;
const SAMPLE_TAG: u64 = 0x7361_6d70;
const SHUFFLE_TAG: u64 = 0x7368_7566;

pub const METRICS_HEADER: &str = "iteration,env_steps,mean_return,ci,kl,clip_frac,policy_loss,value_loss,entropy,grad_norm";

/// One line of the metrics log. `mean_return` and `ci` are over the episodes
/// that finished inside the iteration's batch, collected before its update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_return: f64,
    pub ci: f64,
    pub episodes: usize,
    pub stats: UpdateStats,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let s = &self.stats;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.env_steps,
            self.mean_return,
            self.ci,
            s.kl,
            s.clip_frac,
            s.policy_loss,
            s.value_loss,
            s.entropy,
            s.grad_norm
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Initial,
    Periodic,
    Final,
}

/// Receives what the loop produces.
pub trait TrainSink {
    fn row(&mut self, row: &MetricsRow) -> Result<()>;
    fn checkpoint(&mut self, ckpt: &Checkpoint, kind: CheckpointKind) -> Result<()>;
    /// Polled before every iteration; `true` ends training after a final
    /// checkpoint.
    fn stop_requested(&self) -> bool {
        false
    }
}

/// Discards everything.
pub struct NullSink;

impl TrainSink for NullSink {
    fn row(&mut self, _: &MetricsRow) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _: &Checkpoint, _: CheckpointKind) -> Result<()> {
        Ok(())
    }
}

/// Writes `metrics.csv` and `ckpt_<iteration>.bin` / `final.bin` into a run
/// directory.
pub struct DirSink {
    dir: PathBuf,
    metrics: BufWriter<File>,
    stop: Option<Arc<AtomicBool>>,
}

impl DirSink {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("metrics.csv");
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut metrics = BufWriter::new(file);
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
        metrics.flush().map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
            stop: None,
        })
    }

    pub fn with_stop_flag(mut self, flag: Arc<AtomicBool>) -> Self {
        self.stop = Some(flag);
        self
    }

    pub fn checkpoint_path(dir: &Path, kind: CheckpointKind, iteration: u64) -> PathBuf {
        match kind {
            CheckpointKind::Final => dir.join("final.bin"),
            _ => dir.join(format!("ckpt_{iteration:06}.bin")),
        }
    }
}

impl TrainSink for DirSink {
    fn row(&mut self, row: &MetricsRow) -> Result<()> {
        let path = self.dir.join("metrics.csv");
        writeln!(self.metrics, "{}", row.csv_line()).map_err(|e| Error::io(&path, e))?;
        self.metrics.flush().map_err(|e| Error::io(&path, e))
    }

    fn checkpoint(&mut self, ckpt: &Checkpoint, kind: CheckpointKind) -> Result<()> {
        ckpt.save(&Self::checkpoint_path(&self.dir, kind, ckpt.iteration))
    }

    fn stop_requested(&self) -> bool {
        self.stop.as_ref().is_some_and(|f| f.load(Ordering::SeqCst))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub iterations: u64,
    pub env_steps: u64,
    /// Ended early through [`TrainSink::stop_requested`].
    pub stopped: bool,
    pub rows: Vec<MetricsRow>,
}

/// Fresh networks for `env`, seeded from the training seed.
pub fn initial_params<E: Environment>(env: &E, cfg: &TrainConfig) -> Result<PolicyParams> {
    let spec = env.spec();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[INIT_TAG]));
    PolicyParams::init(spec.obs_dim, &cfg.hidden, spec.heads.clone(), &mut rng)
}

/// Runs `total_steps / batch` iterations. `env_config` is stored in every
/// checkpoint.
pub fn train<E: Environment>(env: &E, env_config: &serde_json::Value, cfg: &TrainConfig, sink: &mut dyn TrainSink) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = initial_params(env, cfg)?;
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut sampler = Sampler::new(env, cfg.n_agents, cfg.num_envs, derive_seed(cfg.seed, &[SAMPLE_TAG]))?;
    let mut shuffle = rng_from_seed(derive_seed(cfg.seed, &[SHUFFLE_TAG]));
    let ckpt = |params: &PolicyParams, iteration: u64, env_steps: u64| Checkpoint {
        params: params.clone(),
        env: env_config.clone(),
        env_steps,
        iteration,
    };
    sink.checkpoint(&ckpt(&params, 0, 0), CheckpointKind::Initial)?;

    let iterations = cfg.total_steps / cfg.batch as u64;
    let per_env = cfg.batch / cfg.num_envs;
    let mut env_steps = 0u64;
    let mut rows = Vec::new();
    let mut done = 0u64;
    let mut stopped = false;
    for it in 1..=iterations {
        if sink.stop_requested() {
            stopped = true;
            break;
        }
        let batch = sampler.collect(&params, per_env)?;
        let stats = match cfg.algo {
            Algo::Ppo => ppo_update(&batch, &mut params, &mut adam, cfg, &mut shuffle)?,
            Algo::A2c => a2c_update(&batch, &mut params, &mut adam, cfg)?,
        };
        env_steps += batch.len() as u64;
        let (mean_return, ci) = match batch.episode_returns.len() {
            0 => (f64::NAN, f64::NAN),
            1 => (batch.episode_returns[0], f64::NAN),
            _ => mean_ci(&batch.episode_returns),
        };
        let row = MetricsRow {
            iteration: it,
            env_steps,
            mean_return,
            ci,
            episodes: batch.episode_returns.len(),
            stats,
        };
        sink.row(&row)?;
        rows.push(row);
        done = it;
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it != iterations {
            sink.checkpoint(&ckpt(&params, it, env_steps), CheckpointKind::Periodic)?;
        }
    }
    if done > 0 || stopped {
        sink.checkpoint(&ckpt(&params, done, env_steps), CheckpointKind::Final)?;
    }
    Ok(TrainOutcome {
        params,
        iterations: done,
        env_steps,
        stopped,
        rows,
    })
}
