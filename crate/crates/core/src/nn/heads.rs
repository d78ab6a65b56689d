//! Distribution heads: diagonal Gaussians (optionally tanh-squashed) and
//! softmax categoricals, with log-probabilities, KL terms and their analytic
//! gradients with respect to the head parameters.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Network-emitted log standard deviations are clamped into this range.
pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistHead {
    /// `dim` means followed by `dim` log standard deviations.
    DiagGaussian { dim: usize },
    /// `k` logits.
    Categorical { k: usize },
}

impl DistHead {
    pub fn param_count(&self) -> usize {
        match *self {
            DistHead::DiagGaussian { dim } => 2 * dim,
            DistHead::Categorical { k } => k,
        }
    }

    /// Dimension of one sample.
    pub fn sample_dim(&self) -> usize {
        match *self {
            DistHead::DiagGaussian { dim } => dim,
            DistHead::Categorical { .. } => 1,
        }
    }
}

/// `(std, d std / d log_std)` after clamping.
pub fn std_from_log(log_std: f64) -> (f64, f64) {
    if log_std < LOG_STD_MIN {
        (LOG_STD_MIN.exp(), 0.0)
    } else if log_std > LOG_STD_MAX {
        (LOG_STD_MAX.exp(), 0.0)
    } else {
        let s = log_std.exp();
        (s, s)
    }
}

/// Log-density of a diagonal Gaussian and its gradients with respect to the
/// means and the standard deviations.
pub fn gaussian_logprob_and_grad(
    mean: &[f64],
    std: &[f64],
    sample: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if mean.len() != std.len() || mean.len() != sample.len() {
        return Err(Error::ShapeMismatch(mean.len(), sample.len()));
    }
    let mut logp = 0.0;
    let mut d_mean = Vec::with_capacity(mean.len());
    let mut d_std = Vec::with_capacity(mean.len());
    for ((&m, &s), &x) in mean.iter().zip(std).zip(sample) {
        if !(s > 0.0) {
            return Err(Error::NonPositiveStd(s));
        }
        let z = (x - m) / s;
        logp += -0.5 * z * z - s.ln() - HALF_LN_2PI;
        d_mean.push(z / s);
        d_std.push((z * z - 1.0) / s);
    }
    Ok((logp, d_mean, d_std))
}

/// `ln(1 − tanh(z)²)`, stable for large `|z|`.
pub fn tanh_log_jacobian(z: f64) -> f64 {
    let a = -2.0 * z.abs();
    2.0 * (std::f64::consts::LN_2 - z.abs() - a.exp().ln_1p())
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Log-probability of `index` and its gradient with respect to the logits.
pub fn categorical_logprob_and_grad(logits: &[f64], index: usize) -> Result<(f64, Vec<f64>)> {
    if index >= logits.len() {
        return Err(Error::InvalidDiscreteAction {
            action: index,
            count: logits.len(),
        });
    }
    let p = softmax(logits);
    let logp = log_softmax(logits)[index];
    let grad = p
        .iter()
        .enumerate()
        .map(|(j, &pj)| if j == index { 1.0 - pj } else { -pj })
        .collect();
    Ok((logp, grad))
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Round-off: fall back to the last action with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `KL(N(m0, s0) ‖ N(m1, s1))` for one coordinate, with gradients with
/// respect to `m1` and `s1`.
pub fn kl_gaussian(m0: f64, s0: f64, m1: f64, s1: f64) -> (f64, f64, f64) {
    let dm = m1 - m0;
    let q = s0 * s0 + dm * dm;
    let kl = (s1 / s0).ln() + q / (2.0 * s1 * s1) - 0.5;
    (kl, dm / (s1 * s1), 1.0 / s1 - q / (s1 * s1 * s1))
}

/// `KL(softmax(l0) ‖ softmax(l1))` and its gradient with respect to `l1`.
pub fn kl_categorical(l0: &[f64], l1: &[f64]) -> (f64, Vec<f64>) {
    let p0 = softmax(l0);
    let lp0 = log_softmax(l0);
    let lp1 = log_softmax(l1);
    let p1 = softmax(l1);
    let kl = p0
        .iter()
        .zip(lp0.iter().zip(&lp1))
        .map(|(&p, (&a, &b))| if p > 0.0 { p * (a - b) } else { 0.0 })
        .sum();
    (kl, p1.iter().zip(&p0).map(|(a, b)| a - b).collect())
}

pub fn categorical_entropy(logits: &[f64]) -> f64 {
    softmax(logits)
        .iter()
        .zip(log_softmax(logits))
        .map(|(&p, lp)| if p > 0.0 { -p * lp } else { 0.0 })
        .sum()
}

/// Entropy of a diagonal Gaussian given its standard deviations.
pub fn gaussian_entropy(std: &[f64]) -> f64 {
    std.iter().map(|s| s.ln() + 0.5 + HALF_LN_2PI).sum()
}
