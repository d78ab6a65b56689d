//! Encoding of `(x⁰, μ)` observations and decoding of network outputs into
//! M3FC actions: a major action plus the parameter block ξ that fixes every
//! minor agent's decision rule.
//!
//! Network output layout: `[major head params | ξ means (D) | ξ log-stds (D)]`.
//! ξ is drawn pre-squash from the diagonal Gaussian and mapped through tanh
//! into `[-1, 1]^D`.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::MajorAction;
use crate::error::{Error, Result};
use crate::measures::{BinGrid, MeanFieldHist};
use crate::nn::heads::{
    categorical_entropy, categorical_logprob_and_grad, gaussian_entropy, kl_categorical,
    kl_gaussian, sample_categorical, softmax, standard_normal, std_from_log, tanh_log_jacobian,
    HALF_LN_2PI,
};

/// Smoothing constant in the decision-rule maps.
pub const RULE_EPS: f64 = 1e-10;
/// Upper end of the per-bin action standard deviation range (before `RULE_EPS`).
pub const STD_SPAN: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MajorHead {
    /// The major agent has no action.
    None,
    Categorical { k: usize },
    /// Tanh-squashed diagonal Gaussian mapped affinely onto the box `[lo, hi]`.
    Gaussian { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum XiLayout {
    /// ξ ∈ [-1,1]^{|X|×|U|}, row-major by state.
    Finite { states: usize, actions: usize },
    /// Per bin: `dim` action means then `dim` action stds, for actions in `[lo, hi]`.
    Continuous { bins: usize, lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub major: MajorHead,
    pub xi: XiLayout,
}

/// Sampled M3FC action, stored pre-squash so that log-probabilities can be
/// recomputed under new parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct M3fcAction {
    /// Categorical: `[index]`; Gaussian: pre-squash sample; none: empty.
    pub major: Vec<f64>,
    /// Pre-squash ξ sample.
    pub xi: Vec<f64>,
}

impl XiLayout {
    pub fn dim(&self) -> usize {
        match self {
            XiLayout::Finite { states, actions } => states * actions,
            XiLayout::Continuous { bins, lo, .. } => bins * 2 * lo.len(),
        }
    }

    /// Entries of ξ that determine the decision rule in `slot` (state or bin).
    pub fn block(&self, slot: usize) -> Range<usize> {
        let w = match self {
            XiLayout::Finite { actions, .. } => *actions,
            XiLayout::Continuous { lo, .. } => 2 * lo.len(),
        };
        slot * w..(slot + 1) * w
    }

    pub fn slots(&self) -> usize {
        match self {
            XiLayout::Finite { states, .. } => *states,
            XiLayout::Continuous { bins, .. } => *bins,
        }
    }
}

impl HeadConfig {
    pub fn major_params(&self) -> usize {
        match &self.major {
            MajorHead::None => 0,
            MajorHead::Categorical { k } => *k,
            MajorHead::Gaussian { lo, .. } => 2 * lo.len(),
        }
    }

    pub fn major_sample_dim(&self) -> usize {
        match &self.major {
            MajorHead::None => 0,
            MajorHead::Categorical { .. } => 1,
            MajorHead::Gaussian { lo, .. } => lo.len(),
        }
    }

    pub fn xi_dim(&self) -> usize {
        self.xi.dim()
    }

    /// Width of the policy network output.
    pub fn output_dim(&self) -> usize {
        self.major_params() + 2 * self.xi_dim()
    }

    fn xi_mean<'a>(&self, out: &'a [f64]) -> &'a [f64] {
        let o = self.major_params();
        &out[o..o + self.xi_dim()]
    }

    fn xi_log_std<'a>(&self, out: &'a [f64]) -> &'a [f64] {
        let o = self.major_params() + self.xi_dim();
        &out[o..o + self.xi_dim()]
    }

    fn check_out(&self, out: &[f64]) -> Result<()> {
        if out.len() != self.output_dim() {
            return Err(Error::DimMismatch {
                expected: self.output_dim(),
                got: out.len(),
            });
        }
        Ok(())
    }

    /// Samples `(u⁰, ξ)` from the heads. With `deterministic`, Gaussians return
    /// their means and categoricals their mode.
    pub fn sample<R: Rng + ?Sized>(&self, out: &[f64], rng: &mut R, deterministic: bool) -> Result<M3fcAction> {
        self.check_out(out)?;
        let major = match &self.major {
            MajorHead::None => Vec::new(),
            MajorHead::Categorical { k } => {
                let logits = &out[..*k];
                let idx = if deterministic {
                    argmax(logits)
                } else {
                    sample_categorical(&softmax(logits), rng)
                };
                vec![idx as f64]
            }
            MajorHead::Gaussian { lo, .. } => {
                let d = lo.len();
                sample_gaussian(&out[..d], &out[d..2 * d], rng, deterministic)
            }
        };
        let xi = sample_gaussian(self.xi_mean(out), self.xi_log_std(out), rng, deterministic);
        Ok(M3fcAction { major, xi })
    }

    /// Fresh squashed sample of the ξ entries in `range` (decentralized execution).
    pub fn sample_xi_block<R: Rng + ?Sized>(
        &self,
        out: &[f64],
        range: Range<usize>,
        rng: &mut R,
        deterministic: bool,
    ) -> Result<Vec<f64>> {
        self.check_out(out)?;
        let mean = &self.xi_mean(out)[range.clone()];
        let log_std = &self.xi_log_std(out)[range];
        Ok(sample_gaussian(mean, log_std, rng, deterministic)
            .into_iter()
            .map(f64::tanh)
            .collect())
    }

    /// Major action in environment units.
    pub fn major_action(&self, action: &M3fcAction) -> MajorAction {
        match &self.major {
            MajorHead::None => MajorAction::None,
            MajorHead::Categorical { .. } => MajorAction::Discrete(action.major[0] as usize),
            MajorHead::Gaussian { lo, hi } => MajorAction::Continuous(
                action
                    .major
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(&z, (&l, &h))| l + (z.tanh() + 1.0) * 0.5 * (h - l))
                    .collect(),
            ),
        }
    }

    /// Joint log-probability of a sampled action; tanh-squashed heads include
    /// the change-of-variables term.
    pub fn joint_logprob(&self, out: &[f64], action: &M3fcAction) -> Result<f64> {
        self.joint_logprob_grad(out, action, None, 0.0)
    }

    /// Like [`joint_logprob`](Self::joint_logprob), additionally accumulating
    /// `scale · ∂logp/∂out` into `grad` when given.
    pub fn joint_logprob_grad(
        &self,
        out: &[f64],
        action: &M3fcAction,
        mut grad: Option<&mut [f64]>,
        scale: f64,
    ) -> Result<f64> {
        self.check_out(out)?;
        if action.xi.len() != self.xi_dim() || action.major.len() != self.major_sample_dim() {
            return Err(Error::ShapeMismatch(action.xi.len(), self.xi_dim()));
        }
        let mut logp = 0.0;
        let mp = self.major_params();
        match &self.major {
            MajorHead::None => {}
            MajorHead::Categorical { k } => {
                let idx = action.major[0] as usize;
                let (lp, g) = categorical_logprob_and_grad(&out[..*k], idx)?;
                logp += lp;
                if let Some(gr) = grad.as_deref_mut() {
                    gr[..*k].iter_mut().zip(&g).for_each(|(a, b)| *a += scale * b);
                }
            }
            MajorHead::Gaussian { lo, .. } => {
                let d = lo.len();
                let (mean, ls) = out[..2 * d].split_at(d);
                let g = grad.as_deref_mut().map(|gr| &mut gr[..2 * d]);
                logp += squashed_gaussian(mean, ls, &action.major, g, scale);
            }
        }
        let d = self.xi_dim();
        let g = grad.map(|gr| &mut gr[mp..mp + 2 * d]);
        logp += squashed_gaussian(self.xi_mean(out), self.xi_log_std(out), &action.xi, g, scale);
        if !logp.is_finite() {
            return Err(Error::NonFiniteLogProb);
        }
        Ok(logp)
    }

    /// `KL(old ‖ new)` of the full action distribution, accumulating
    /// `scale · ∂KL/∂new` into `grad` when given.
    pub fn kl(&self, old: &[f64], new: &[f64], mut grad: Option<&mut [f64]>, scale: f64) -> Result<f64> {
        self.check_out(old)?;
        self.check_out(new)?;
        let mut kl = 0.0;
        let mp = self.major_params();
        match &self.major {
            MajorHead::None => {}
            MajorHead::Categorical { k } => {
                let (v, g) = kl_categorical(&old[..*k], &new[..*k]);
                kl += v;
                if let Some(gr) = grad.as_deref_mut() {
                    gr[..*k].iter_mut().zip(&g).for_each(|(a, b)| *a += scale * b);
                }
            }
            MajorHead::Gaussian { lo, .. } => {
                let d = lo.len();
                kl += gaussian_kl_block(&old[..2 * d], &new[..2 * d], grad.as_deref_mut().map(|g| &mut g[..2 * d]), scale);
            }
        }
        let d = self.xi_dim();
        kl += gaussian_kl_block(&old[mp..mp + 2 * d], &new[mp..mp + 2 * d], grad.map(|g| &mut g[mp..mp + 2 * d]), scale);
        Ok(kl)
    }

    /// Entropy of the pre-squash action distribution.
    pub fn entropy(&self, out: &[f64]) -> f64 {
        let major = match &self.major {
            MajorHead::None => 0.0,
            MajorHead::Categorical { k } => categorical_entropy(&out[..*k]),
            MajorHead::Gaussian { lo, .. } => {
                let d = lo.len();
                let s: Vec<f64> = out[d..2 * d].iter().map(|&l| std_from_log(l).0).collect();
                gaussian_entropy(&s)
            }
        };
        let s: Vec<f64> = self.xi_log_std(out).iter().map(|&l| std_from_log(l).0).collect();
        major + gaussian_entropy(&s)
    }
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

fn sample_gaussian<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R, deterministic: bool) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .map(|(&m, &ls)| {
            if deterministic {
                m
            } else {
                m + std_from_log(ls).0 * standard_normal(rng)
            }
        })
        .collect()
}

/// Log-density of `tanh(z)` where `z ~ N(mean, exp(log_std))`; accumulates the
/// gradient with respect to `[mean | log_std]` into `grad`.
fn squashed_gaussian(mean: &[f64], log_std: &[f64], z: &[f64], grad: Option<&mut [f64]>, scale: f64) -> f64 {
    let d = mean.len();
    let mut logp = 0.0;
    let mut gm = vec![0.0; d];
    let mut gl = vec![0.0; d];
    for i in 0..d {
        let (s, ds_dl) = std_from_log(log_std[i]);
        let u = (z[i] - mean[i]) / s;
        logp += -0.5 * u * u - s.ln() - HALF_LN_2PI - tanh_log_jacobian(z[i]);
        gm[i] = u / s;
        // ∂/∂s = (u² − 1)/s, chained through the clamped exp.
        gl[i] = (u * u - 1.0) / s * ds_dl;
    }
    if let Some(g) = grad {
        for i in 0..d {
            g[i] += scale * gm[i];
            g[d + i] += scale * gl[i];
        }
    }
    logp
}

fn gaussian_kl_block(old: &[f64], new: &[f64], grad: Option<&mut [f64]>, scale: f64) -> f64 {
    let d = old.len() / 2;
    let mut kl = 0.0;
    let mut g = vec![0.0; 2 * d];
    for i in 0..d {
        let (s0, _) = std_from_log(old[d + i]);
        let (s1, ds_dl) = std_from_log(new[d + i]);
        let (v, gm, gs) = kl_gaussian(old[i], s0, new[i], s1);
        kl += v;
        g[i] = gm;
        g[d + i] = gs * ds_dl;
    }
    if let Some(gr) = grad {
        gr.iter_mut().zip(&g).for_each(|(a, b)| *a += scale * b);
    }
    kl
}

/// Decision rule `π'(u|x) = (ξ_xu + 1 + ε) / Z`, row-major by state.
pub fn decode_finite(xi: &[f64], states: usize, actions: usize) -> Vec<f64> {
    assert_eq!(xi.len(), states * actions, "ξ has |X|·|U| entries");
    let mut rule = Vec::with_capacity(xi.len());
    for row in xi.chunks(actions) {
        let z: f64 = row.iter().map(|&v| v + 1.0 + RULE_EPS).sum();
        rule.extend(row.iter().map(|&v| (v + 1.0 + RULE_EPS) / z));
    }
    rule
}

/// Per-bin action distribution decoded from a squashed ξ block of width `2d`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Maps a squashed ξ block `[means | stds] ∈ [-1,1]^{2d}` to a Gaussian with
/// means in `[lo, hi]` and standard deviations in `[ε, 0.25 + ε]`.
pub fn decode_bin(block: &[f64], lo: &[f64], hi: &[f64]) -> BinGaussian {
    let d = lo.len();
    assert_eq!(block.len(), 2 * d, "ξ block has 2d entries");
    BinGaussian {
        mean: (0..d).map(|i| lo[i] + (block[i] + 1.0) * 0.5 * (hi[i] - lo[i])).collect(),
        std: (0..d).map(|i| RULE_EPS + STD_SPAN * (block[d + i] + 1.0) * 0.5).collect(),
    }
}

/// Action sampler for an agent located at `position`.
pub fn decode_continuous(xi: &[f64], grid: &BinGrid, lo: &[f64], hi: &[f64], position: &[f64]) -> Result<BinGaussian> {
    let bin = grid.cell_of(position)?;
    let w = 2 * lo.len();
    Ok(decode_bin(&xi[bin * w..(bin + 1) * w], lo, hi))
}

impl BinGaussian {
    /// Samples and clamps into `[lo, hi]`; writes into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, lo: &[f64], hi: &[f64], rng: &mut R, out: &mut [f64]) {
        for i in 0..self.mean.len() {
            out[i] = (self.mean[i] + self.std[i] * standard_normal(rng)).clamp(lo[i], hi[i]);
        }
    }
}

/// Observation vector `[major encoding ‖ histogram weights ‖ extras]`.
pub fn encode_obs(grid: &BinGrid, major: &[f64], hist: &MeanFieldHist, extras: &[f64]) -> Result<Vec<f64>> {
    if &hist.grid != grid {
        return Err(Error::GridMismatch);
    }
    let mut obs = Vec::with_capacity(major.len() + hist.weights.len() + extras.len());
    obs.extend_from_slice(major);
    obs.extend_from_slice(&hist.weights);
    obs.extend_from_slice(extras);
    Ok(obs)
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// `(cos 2πt/P, sin 2πt/P)`.
pub fn clock_encoding(t: usize, period: usize) -> [f64; 2] {
    let a = 2.0 * std::f64::consts::PI * t as f64 / period as f64;
    [a.cos(), a.sin()]
}

/// Affine map of `[lo, hi]` onto `[-1, 1]`.
pub fn to_unit(x: f64, lo: f64, hi: f64) -> f64 {
    2.0 * (x - lo) / (hi - lo) - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_xi_gives_uniform_rule() {
        let rule = decode_finite(&[0.0; 10], 2, 5);
        assert!(rule.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn extreme_row_formula() {
        let e = RULE_EPS;
        let rule = decode_finite(&[1.0, -1.0], 1, 2);
        assert_eq!(rule[0], (2.0 + e) / (2.0 + 2.0 * e));
        assert_eq!(rule[1], e / (2.0 + 2.0 * e));
        assert!((rule[1] - 5e-11).abs() < 1e-20);
        let rule = decode_finite(&[1.0, 0.0, -1.0], 1, 3);
        let z = 3.0 + 3.0 * e;
        assert_eq!(rule, vec![(2.0 + e) / z, (1.0 + e) / z, e / z]);
        assert!((rule[0] - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn std_squash_range() {
        let g = decode_bin(&[0.0, 0.0, 0.0, 0.0], &[-1.0, -1.0], &[1.0, 1.0]);
        assert_eq!(g.std, vec![0.125 + RULE_EPS; 2]);
        assert_eq!(g.mean, vec![0.0; 2]);
        let g = decode_bin(&[1.0, -1.0, -1.0, 1.0], &[-1.0, -1.0], &[1.0, 1.0]);
        assert_eq!(g.std, vec![RULE_EPS, 0.25 + RULE_EPS]);
        assert_eq!(g.mean, vec![1.0, -1.0]);
    }

    #[test]
    fn same_bin_same_sampler() {
        let grid = BinGrid::uniform(2, -2.0, 2.0, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xi: Vec<f64> = (0..49 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lo = [-1.0, -1.0];
        let hi = [1.0, 1.0];
        let a = decode_continuous(&xi, &grid, &lo, &hi, &[0.01, 0.02]).unwrap();
        let b = decode_continuous(&xi, &grid, &lo, &hi, &[-0.2, 0.25]).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            decode_continuous(&xi, &grid, &lo, &hi, &[3.0, 0.0]),
            Err(Error::PointOutOfDomain { .. })
        ));
    }

    #[test]
    fn obs_blocks() {
        let grid = BinGrid::uniform(2, -2.0, 2.0, 7).unwrap();
        let h = MeanFieldHist::uniform(grid.clone());
        let obs = encode_obs(&grid, &[1.0, 0.0], &h, &[]).unwrap();
        assert!(obs[2..].iter().all(|&w| w == 1.0 / 49.0));
        let other = BinGrid::uniform(2, -2.0, 2.0, 5).unwrap();
        assert!(matches!(encode_obs(&other, &[], &h, &[]), Err(Error::GridMismatch)));
        assert_eq!(clock_encoding(0, 50), [1.0, 0.0]);
    }

    fn beach_heads() -> HeadConfig {
        HeadConfig {
            major: MajorHead::Categorical { k: 5 },
            xi: XiLayout::Finite { states: 25, actions: 5 },
        }
    }

    #[test]
    fn joint_logprob_is_sum_of_heads() {
        let heads = beach_heads();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out: Vec<f64> = (0..heads.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = heads.sample(&out, &mut rng, false).unwrap();
        let total = heads.joint_logprob(&out, &a).unwrap();
        let cat = crate::nn::heads::log_softmax(&out[..5])[a.major[0] as usize];
        let only_xi = HeadConfig {
            major: MajorHead::None,
            xi: heads.xi.clone(),
        };
        let xi_lp = only_xi
            .joint_logprob(&out[5..], &M3fcAction { major: vec![], xi: a.xi.clone() })
            .unwrap();
        assert!((total - cat - xi_lp).abs() < 1e-10);
    }

    #[test]
    fn certain_categorical_has_zero_logprob() {
        let heads = HeadConfig {
            major: MajorHead::Categorical { k: 3 },
            xi: XiLayout::Finite { states: 0, actions: 0 },
        };
        let out = [0.0, -1000.0, -1000.0];
        let a = M3fcAction { major: vec![0.0], xi: vec![] };
        assert_eq!(heads.joint_logprob(&out, &a).unwrap(), 0.0);
    }

    #[test]
    fn logprob_gradient_matches_finite_differences() {
        let heads = HeadConfig {
            major: MajorHead::Gaussian { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] },
            xi: XiLayout::Continuous { bins: 3, lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out: Vec<f64> = (0..heads.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = heads.sample(&out, &mut rng, false).unwrap();
        let mut g = vec![0.0; out.len()];
        heads.joint_logprob_grad(&out, &a, Some(&mut g), 1.0).unwrap();
        let h = 1e-6;
        for k in 0..out.len() {
            let mut p = out.clone();
            p[k] += h;
            let up = heads.joint_logprob(&p, &a).unwrap();
            p[k] -= 2.0 * h;
            let fd = (up - heads.joint_logprob(&p, &a).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * fd.abs().max(1.0), "coord {k}");
        }
    }

    #[test]
    fn kl_vanishes_on_equal_outputs() {
        let heads = beach_heads();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out: Vec<f64> = (0..heads.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = vec![0.0; out.len()];
        assert!(heads.kl(&out, &out, Some(&mut g), 1.0).unwrap().abs() < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn deterministic_sampling_returns_modes() {
        let heads = beach_heads();
        let mut out = vec![0.0; heads.output_dim()];
        out[3] = 2.0;
        out[7] = 0.4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = heads.sample(&out, &mut rng, true).unwrap();
        assert_eq!(a.major, vec![3.0]);
        assert_eq!(a.xi[2], 0.4);
        assert!(a.xi.iter().enumerate().all(|(i, &v)| i == 2 || v == 0.0));
    }
}
