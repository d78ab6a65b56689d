//! Clipped-surrogate PPO with a fixed KL penalty, and A2C as its
//! single-pass, unclipped special case.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{batch_gae, TrainConfig};
use crate::error::{Error, Result};
use crate::finite_sim::TrajectoryBatch;
use crate::nn::{Adam, PolicyParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_frac: f64,
    pub entropy: f64,
    /// Policy-network gradient norm before clipping.
    pub grad_norm: f64,
}

/// Coefficients of one loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Ratio clip ε; `f64::INFINITY` disables clipping.
    pub clip: f64,
    pub kl_coeff: f64,
    pub vf_coeff: f64,
}

/// Loss terms averaged over a minibatch. The minimized loss is
/// `policy + kl_coeff · kl + vf_coeff · value`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    /// Negated mean clipped surrogate.
    pub policy: f64,
    pub kl: f64,
    /// Mean squared value error.
    pub value: f64,
    pub clip_frac: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Per-update decay of the value-target statistics.
pub const VALUE_NORM_BETA: f64 = 0.99;

/// Rescales to mean 0 and (population) standard deviation 1.
pub fn normalize(adv: &mut [f64]) {
    let n = adv.len() as f64;
    let m = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
    let s = var.sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - m) / s);
}

/// Loss on the samples `idx` and its gradient with respect to all
/// parameters (policy then value). `targets` are in the value network's
/// own (standardized) units.
pub fn loss_and_grad(
    batch: &TrajectoryBatch,
    idx: &[usize],
    params: &PolicyParams,
    adv: &[f64],
    targets: &[f64],
    lc: LossConfig,
) -> Result<(LossParts, Vec<f64>)> {
    let b = idx.len();
    let bf = b as f64;
    let d = batch.obs_dim;
    let mut obs = Array2::zeros((b, d));
    for (r, &i) in idx.iter().enumerate() {
        obs.row_mut(r).iter_mut().zip(&batch.obs[i * d..(i + 1) * d]).for_each(|(a, v)| *a = *v);
    }
    let (outs, ptape) = params.policy_batch(obs.view())?;
    let (vals, vtape) = params.value_batch(obs.view())?;
    let heads = &params.heads;
    let mut g_out = Array2::zeros(outs.dim());
    let mut g_val = Array2::zeros((b, 1));
    let mut parts = LossParts::default();
    let mut clipped_n = 0usize;
    for (r, &i) in idx.iter().enumerate() {
        let out = outs.row(r);
        let out = out.as_slice().expect("row-major outputs");
        let action = &batch.actions[i];
        let mut grow = g_out.row_mut(r);
        let grow = grow.as_slice_mut().expect("row-major gradient");
        let logp = heads.joint_logprob(out, action)?;
        let ratio = (logp - batch.logp[i]).exp();
        let a = adv[i];
        let s1 = ratio * a;
        let s2 = ratio.clamp(1.0 - lc.clip, 1.0 + lc.clip) * a;
        parts.policy -= s1.min(s2);
        let clipped = (a > 0.0 && ratio > 1.0 + lc.clip) || (a < 0.0 && ratio < 1.0 - lc.clip);
        if clipped {
            clipped_n += 1;
        } else {
            // ∇(ρA) = ρA ∇log π
            heads.joint_logprob_grad(out, action, Some(&mut *grow), -ratio * a / bf)?;
        }
        let kl_grad = (lc.kl_coeff > 0.0).then_some(&mut *grow);
        parts.kl += heads.kl(batch.out_row(i), out, kl_grad, lc.kl_coeff / bf)?;
        parts.entropy += heads.entropy(out);
        let err = vals[[r, 0]] - targets[i];
        parts.value += err * err;
        g_val[[r, 0]] = lc.vf_coeff * 2.0 * err / bf;
    }
    parts.policy /= bf;
    parts.kl /= bf;
    parts.value /= bf;
    parts.entropy /= bf;
    parts.clip_frac = clipped_n as f64 / bf;
    parts.total = parts.policy + lc.kl_coeff * parts.kl + lc.vf_coeff * parts.value;
    let mut grad = vec![0.0; params.len()];
    params.policy_backward(&ptape, g_out.view(), &mut grad)?;
    params.value_backward(&vtape, g_val.view(), &mut grad)?;
    Ok((parts, grad))
}

/// Scales `g` down to norm `max` if longer; returns the norm before scaling.
fn clip_norm(g: &mut [f64], max: f64) -> f64 {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max {
        let s = max / norm;
        g.iter_mut().for_each(|x| *x *= s);
    }
    norm
}

struct Schedule {
    epochs: usize,
    minibatch: usize,
    max_grad_norm: f64,
}

fn run_update(
    batch: &TrajectoryBatch,
    params: &mut PolicyParams,
    adam: &mut Adam,
    cfg: &TrainConfig,
    lc: LossConfig,
    sched: Schedule,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<UpdateStats> {
    let (mut adv, mut targets) = batch_gae(batch, cfg.gamma, cfg.gae_lambda)?;
    if cfg.normalize_advantages {
        normalize(&mut adv);
    }
    let saved = (params.clone(), adam.clone());
    let restore = |params: &mut PolicyParams, adam: &mut Adam| {
        *params = saved.0.clone();
        *adam = saved.1.clone();
    };
    if cfg.normalize_values {
        params.value_norm.update(&targets, VALUE_NORM_BETA);
        let vn = params.value_norm;
        targets.iter_mut().for_each(|t| *t = vn.normalize(*t));
    }
    let mut stats = UpdateStats::default();
    let mut passes = 0usize;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for _ in 0..sched.epochs {
        if let Some(r) = rng.as_deref_mut() {
            order.shuffle(r);
        }
        for chunk in order.chunks(sched.minibatch) {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let (parts, mut grad) = loss_and_grad(batch, &idx, params, &adv, &targets, lc)?;
            // policy and value networks are clipped separately
            let (gp, gv) = grad.split_at_mut(params.n_policy());
            let norm = clip_norm(gp, sched.max_grad_norm);
            let vnorm = clip_norm(gv, sched.max_grad_norm);
            if !parts.total.is_finite() || !norm.is_finite() || !vnorm.is_finite() {
                restore(params, adam);
                return Err(Error::NonFiniteLoss);
            }
            adam.step(&mut params.data, &grad)?;
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.kl += parts.kl;
            stats.clip_frac += parts.clip_frac;
            stats.entropy += parts.entropy;
            stats.grad_norm += norm;
            passes += 1;
        }
    }
    if params.data.iter().any(|x| !x.is_finite()) {
        restore(params, adam);
        return Err(Error::NonFiniteLoss);
    }
    let p = passes as f64;
    stats.policy_loss /= p;
    stats.value_loss /= p;
    stats.kl /= p;
    stats.clip_frac /= p;
    stats.entropy /= p;
    stats.grad_norm /= p;
    Ok(stats)
}

/// `sgd_iters` shuffled passes of minibatch Adam steps on the clipped
/// surrogate with KL penalty and value regression.
pub fn ppo_update(
    batch: &TrajectoryBatch,
    params: &mut PolicyParams,
    adam: &mut Adam,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let lc = LossConfig {
        clip: cfg.clip,
        kl_coeff: cfg.kl_coeff,
        vf_coeff: cfg.vf_coeff,
    };
    let sched = Schedule {
        epochs: cfg.sgd_iters,
        minibatch: cfg.minibatch,
        max_grad_norm: cfg.max_grad_norm,
    };
    run_update(batch, params, adam, cfg, lc, sched, Some(rng))
}

/// One full-batch step on the advantage-weighted log-likelihood plus value
/// regression.
pub fn a2c_update(batch: &TrajectoryBatch, params: &mut PolicyParams, adam: &mut Adam, cfg: &TrainConfig) -> Result<UpdateStats> {
    let lc = LossConfig {
        clip: f64::INFINITY,
        kl_coeff: 0.0,
        vf_coeff: cfg.vf_coeff,
    };
    let sched = Schedule {
        epochs: 1,
        minibatch: batch.len(),
        max_grad_norm: cfg.max_grad_norm,
    };
    run_update(batch, params, adam, cfg, lc, sched, None)
}
