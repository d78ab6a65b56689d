//! Finite-N experiments: transfer sweeps over the population size, paired
//! centralized/decentralized evaluation, one-step mean-field gaps and
//! policy-gradient consistency.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::algo::estimate_pg;
use crate::envs::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::finite_sim::{evaluate_return, EvalOptions, ExecutionMode};
use crate::mf_limit::{lln_gap, multinomial, FiniteModel};
use crate::nn::{Checkpoint, PolicyParams};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::{cosine, mean, ols_slope};

const RATE_TAG: u64 = 0x7261_7465;
const PG_REF_TAG: u64 = 0x7265_66;

pub const MIN_EPISODES: usize = 30;
pub const REFERENCE_N: usize = 500;

/// Fails unless `ckpt` was trained on the environment described by `config`
/// and its heads fit `env`.
pub fn check_checkpoint<E: Environment>(env: &E, config: &EnvConfig, ckpt: &Checkpoint) -> Result<()> {
    let requested = config.id().as_str().to_string();
    let trained = EnvConfig::from_json(&ckpt.env).map(|c| c.id().as_str().to_string());
    let checkpoint = trained.unwrap_or_else(|_| ckpt.env.to_string());
    if checkpoint != requested || ckpt.params.heads != env.spec().heads || ckpt.params.obs_dim() != env.spec().obs_dim {
        return Err(Error::CheckpointEnvMismatch { checkpoint, requested });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub mean: f64,
    pub ci: f64,
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub env: String,
    pub checkpoint: String,
    pub mode: ExecutionMode,
    pub rows: Vec<SweepRow>,
    pub reference: SweepRow,
}

impl SweepResult {
    /// `|J^N − J^ref|` per row.
    pub fn gaps(&self) -> Vec<f64> {
        self.rows.iter().map(|r| (r.mean - self.reference.mean).abs()).collect()
    }
}

fn sweep_row<E: Environment>(env: &E, params: &PolicyParams, n: usize, episodes: usize, seed: u64, opts: EvalOptions) -> Result<SweepRow> {
    let r = evaluate_return(env, params, n, episodes, seed, opts)?;
    Ok(SweepRow {
        n,
        mean: r.mean,
        ci: r.ci,
        episodes,
        seed,
    })
}

/// Evaluates the checkpoint at every `N` in `ns` and at `reference_n`.
/// Every point reuses the same episode seeds.
#[allow(clippy::too_many_arguments)]
pub fn transfer_sweep<E: Environment>(
    env: &E,
    config: &EnvConfig,
    ckpt: &Checkpoint,
    checkpoint_id: &str,
    ns: &[usize],
    reference_n: usize,
    mode: ExecutionMode,
    episodes: usize,
    seed: u64,
) -> Result<SweepResult> {
    check_checkpoint(env, config, ckpt)?;
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] == 0 {
        return Err(Error::Config("population sizes must be positive and strictly increasing".into()));
    }
    if episodes < MIN_EPISODES {
        return Err(Error::Config(format!("sweeps need at least {MIN_EPISODES} episodes per point")));
    }
    let opts = EvalOptions {
        mode,
        deterministic: false,
    };
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        rows.push(sweep_row(env, &ckpt.params, n, episodes, seed, opts)?);
    }
    let reference = match rows.iter().find(|r| r.n == reference_n) {
        Some(r) => r.clone(),
        None => sweep_row(env, &ckpt.params, reference_n, episodes, seed, opts)?,
    };
    Ok(SweepResult {
        env: config.id().as_str().into(),
        checkpoint: checkpoint_id.into(),
        mode,
        rows,
        reference,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairedResult {
    pub centralized: SweepResult,
    pub decentralized: SweepResult,
}

impl PairedResult {
    /// Whether the two 95% intervals intersect.
    pub fn overlap(&self) -> bool {
        let (a, b) = (&self.centralized.rows[0], &self.decentralized.rows[0]);
        (a.mean - b.mean).abs() <= a.ci + b.ci
    }
}

/// Both execution modes at one `N` with shared episode seeds.
pub fn cde_compare<E: Environment>(
    env: &E,
    config: &EnvConfig,
    ckpt: &Checkpoint,
    checkpoint_id: &str,
    n: usize,
    episodes: usize,
    seed: u64,
) -> Result<PairedResult> {
    let run = |mode| transfer_sweep(env, config, ckpt, checkpoint_id, &[n], n, mode, episodes, seed);
    Ok(PairedResult {
        centralized: run(ExecutionMode::Centralized)?,
        decentralized: run(ExecutionMode::Decentralized)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub mean_gap: f64,
    pub draws: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub env: String,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `ln gap` on `ln N`; `None` when some gap is 0.
    pub slope: Option<f64>,
}

/// Mean one-step L1 gap between the sampled and the exact mean field. Each
/// draw places `N` agents by a multinomial draw from `mu0`, then moves them
/// once under `rule` and the fixed major state/action.
#[allow(clippy::too_many_arguments)]
pub fn lln_rate_fit<M: FiniteModel + ?Sized>(
    model: &M,
    env_name: &str,
    x0: usize,
    u0: usize,
    mu0: &[f64],
    rule: &[f64],
    ns: &[usize],
    draws: usize,
    seed: u64,
) -> Result<RateFit> {
    if draws == 0 || ns.iter().any(|&n| n == 0) {
        return Err(Error::Config("rate fit needs positive N and draws".into()));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let gaps = (0..draws)
            .into_par_iter()
            .map(|d| {
                let mut rng = rng_from_seed(derive_seed(seed, &[RATE_TAG, n as u64, d as u64]));
                let counts = multinomial(n, mu0, &mut rng);
                lln_gap(model, x0, u0, &counts, rule, &mut rng)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean_gap = mean(&gaps);
        if !mean_gap.is_finite() {
            return Err(Error::NonFiniteGap);
        }
        rows.push(RateRow { n, mean_gap, draws });
    }
    let slope = if rows.len() >= 2 && rows.iter().all(|r| r.mean_gap > 0.0) {
        let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.mean_gap.ln()).collect();
        Some(ols_slope(&x, &y))
    } else {
        None
    };
    Ok(RateFit {
        env: env_name.into(),
        rows,
        slope,
    })
}

/// A uniformly random row-stochastic decision rule on `states × actions`.
pub fn random_rule<R: Rng + ?Sized>(states: usize, actions: usize, rng: &mut R) -> Vec<f64> {
    let mut rule = Vec::with_capacity(states * actions);
    for _ in 0..states {
        let w: Vec<f64> = (0..actions).map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).collect();
        let z: f64 = w.iter().sum();
        rule.extend(w.iter().map(|x| x / z));
    }
    rule
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PgRow {
    pub n: usize,
    pub cos_sim: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PgCurve {
    pub env: String,
    pub reference_n: usize,
    pub rows: Vec<PgRow>,
}

impl PgCurve {
    pub fn nondecreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].cos_sim >= w[0].cos_sim)
    }
}

/// Mean over seeds of `cos(estimate(N, s), reference(s))` for each `N`.
pub fn consistency_curve<F, G>(env_name: &str, ns: &[usize], reference_n: usize, seeds: usize, estimate: F, reference: G) -> Result<PgCurve>
where
    F: Fn(usize, usize) -> Result<Vec<f64>>,
    G: Fn(usize) -> Result<Vec<f64>>,
{
    if seeds == 0 {
        return Err(Error::Config("consistency curve needs at least one seed".into()));
    }
    let refs = (0..seeds).map(&reference).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut sims = Vec::with_capacity(seeds);
        for (s, r) in refs.iter().enumerate() {
            let g = estimate(n, s)?;
            sims.push(cosine(&g, r).ok_or(Error::ZeroGradientNorm)?);
        }
        rows.push(PgRow {
            n,
            cos_sim: mean(&sims),
            seeds,
        });
    }
    Ok(PgCurve {
        env: env_name.into(),
        reference_n,
        rows,
    })
}

/// Cosine similarity of finite-N policy-gradient estimates against an
/// estimate at `reference_n` with `ref_episodes` episodes. Seed `s` drives
/// both the reference and the estimates (common random numbers).
#[allow(clippy::too_many_arguments)]
pub fn pg_consistency<E: Environment>(
    env: &E,
    env_name: &str,
    params: &PolicyParams,
    ns: &[usize],
    reference_n: usize,
    seeds: usize,
    episodes: usize,
    ref_episodes: usize,
    gamma: f64,
    seed: u64,
) -> Result<PgCurve> {
    if episodes == 0 || ref_episodes == 0 {
        return Err(Error::Config("policy-gradient estimates need at least one episode".into()));
    }
    let s_of = |s: usize| derive_seed(seed, &[PG_REF_TAG, s as u64]);
    consistency_curve(
        env_name,
        ns,
        reference_n,
        seeds,
        |n, s| estimate_pg(env, params, n, episodes, gamma, s_of(s)),
        |s| estimate_pg(env, params, reference_n, ref_episodes, gamma, s_of(s)),
    )
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_lines(path: &Path, header: &str, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for l in lines {
        writeln!(w, "{l}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `env,N,mode,mean,ci,episodes,seed`, one block per sweep.
pub fn write_transfer_csv(path: &Path, sweeps: &[&SweepResult]) -> Result<()> {
    let lines = sweeps.iter().flat_map(|s| {
        s.rows
            .iter()
            .map(move |r| format!("{},{},{},{},{},{},{}", s.env, r.n, s.mode, r.mean, r.ci, r.episodes, r.seed))
    });
    write_lines(path, "env,N,mode,mean,ci,episodes,seed", lines)
}

pub fn write_rate_csv(path: &Path, fit: &RateFit) -> Result<()> {
    let lines = fit.rows.iter().map(|r| format!("{},{},{},{}", fit.env, r.n, r.mean_gap, r.draws));
    write_lines(path, "env,N,mean_gap,draws", lines)
}

pub fn write_pg_csv(path: &Path, curve: &PgCurve) -> Result<()> {
    let lines = curve.rows.iter().map(|r| format!("{},{},{},{}", curve.env, r.n, r.cos_sim, r.seeds));
    write_lines(path, "env,N,cos_sim,seeds", lines)
}

/// Pretty-printed JSON twin of a CSV.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(e.to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{initial_params, TrainConfig};
    use crate::envs::{DiscreteTorus, TorusConfig};

    /// Two states; every agent lands on either with probability ½.
    struct Coin;

    impl FiniteModel for Coin {
        fn n_states(&self) -> usize {
            2
        }
        fn n_actions(&self) -> usize {
            1
        }
        fn n_major_states(&self) -> usize {
            1
        }
        fn n_major_actions(&self) -> usize {
            1
        }
        fn minor_kernel(&self, _: usize, _: usize, _: usize, _: usize, _: &crate::measures::FiniteMF, out: &mut [f64]) {
            out.copy_from_slice(&[0.5, 0.5]);
        }
        fn major_kernel(&self, _: usize, _: usize, _: &crate::measures::FiniteMF, out: &mut [f64]) {
            out[0] = 1.0;
        }
        fn mf_reward(&self, _: usize, _: usize, _: &crate::measures::FiniteMF) -> f64 {
            0.0
        }
    }

    /// Every agent stays put.
    struct Still;

    impl FiniteModel for Still {
        fn n_states(&self) -> usize {
            3
        }
        fn n_actions(&self) -> usize {
            1
        }
        fn n_major_states(&self) -> usize {
            1
        }
        fn n_major_actions(&self) -> usize {
            1
        }
        fn minor_kernel(&self, x: usize, _: usize, _: usize, _: usize, _: &crate::measures::FiniteMF, out: &mut [f64]) {
            out.fill(0.0);
            out[x] = 1.0;
        }
        fn major_kernel(&self, _: usize, _: usize, _: &crate::measures::FiniteMF, out: &mut [f64]) {
            out[0] = 1.0;
        }
        fn mf_reward(&self, _: usize, _: usize, _: &crate::measures::FiniteMF) -> f64 {
            0.0
        }
    }

    /// `E|2k/N − 1|` for `k ~ Bin(N, ½)`, summed exactly in log space.
    fn coin_mad(n: usize) -> f64 {
        let ln_fact: Vec<f64> = (0..=n).scan(0.0, |acc, k| {
            if k > 0 {
                *acc += (k as f64).ln();
            }
            Some(*acc)
        })
        .collect();
        (0..=n)
            .map(|k| {
                let lp = ln_fact[n] - ln_fact[k] - ln_fact[n - k] - n as f64 * 2f64.ln();
                lp.exp() * (2.0 * k as f64 / n as f64 - 1.0).abs()
            })
            .sum()
    }

    #[test]
    fn coin_gap_matches_binomial_oracle() {
        let ns = [100, 400, 1600, 6400];
        let fit = lln_rate_fit(&Coin, "coin", 0, 0, &[0.5, 0.5], &[1.0, 1.0], &ns, 3000, 7).unwrap();
        for r in &fit.rows {
            let want = coin_mad(r.n);
            assert!((r.mean_gap - want).abs() < 0.06 * want, "N={} {} vs {}", r.n, r.mean_gap, want);
        }
        let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
        let y: Vec<f64> = ns.iter().map(|&n| coin_mad(n).ln()).collect();
        let oracle = ols_slope(&x, &y);
        assert!((oracle + 0.5).abs() < 0.01);
        assert!((fit.slope.unwrap() - oracle).abs() < 0.05);
    }

    #[test]
    fn deterministic_kernel_is_degenerate() {
        let fit = lln_rate_fit(&Still, "still", 0, 0, &[0.2, 0.3, 0.5], &[1.0; 3], &[10, 100], 20, 1).unwrap();
        assert!(fit.rows.iter().all(|r| r.mean_gap == 0.0));
        assert_eq!(fit.slope, None);
    }

    #[test]
    fn random_rules_are_stochastic() {
        let r = random_rule(25, 5, &mut rng_from_seed(3));
        for row in r.chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn orthogonal_estimates_have_zero_similarity() {
        let c = consistency_curve("stub", &[1, 2], 3, 4, |_, _| Ok(vec![0.0, 2.0]), |_| Ok(vec![5.0, 0.0])).unwrap();
        assert!(c.rows.iter().all(|r| r.cos_sim == 0.0));
        let e = consistency_curve("stub", &[1], 3, 1, |_, _| Ok(vec![0.0, 0.0]), |_| Ok(vec![1.0, 0.0]));
        assert!(matches!(e, Err(Error::ZeroGradientNorm)));
    }

    #[test]
    fn reference_size_gives_unit_similarity() {
        let env = DiscreteTorus::new(
            crate::envs::EnvId::Beach,
            TorusConfig {
                episode_len: 10,
                ..TorusConfig::beach()
            },
        )
        .unwrap();
        let cfg = TrainConfig {
            hidden: vec![8],
            ..TrainConfig::default()
        };
        let params = initial_params(&env, &cfg).unwrap();
        let c = pg_consistency(&env, "beach", &params, &[6], 6, 2, 3, 3, 0.99, 11).unwrap();
        assert!((c.rows[0].cos_sim - 1.0).abs() < 1e-12);
    }

    fn beach_checkpoint(episode_len: usize) -> (DiscreteTorus, EnvConfig, Checkpoint) {
        let tc = TorusConfig {
            episode_len,
            ..TorusConfig::beach()
        };
        let config = EnvConfig::Beach(tc.clone());
        let env = DiscreteTorus::new(crate::envs::EnvId::Beach, tc).unwrap();
        let cfg = TrainConfig {
            hidden: vec![8],
            ..TrainConfig::default()
        };
        let ckpt = Checkpoint {
            params: initial_params(&env, &cfg).unwrap(),
            env: config.to_json(),
            env_steps: 0,
            iteration: 0,
        };
        (env, config, ckpt)
    }

    #[test]
    fn single_point_sweep_is_its_own_reference() {
        let (env, config, ckpt) = beach_checkpoint(5);
        let s = transfer_sweep(&env, &config, &ckpt, "init", &[500], 500, ExecutionMode::Centralized, 30, 2).unwrap();
        assert_eq!(s.rows, vec![s.reference.clone()]);
        assert_eq!(s.gaps(), vec![0.0]);
    }

    #[test]
    fn sweeps_validate_inputs() {
        let (env, config, ckpt) = beach_checkpoint(5);
        let m = ExecutionMode::Centralized;
        assert!(transfer_sweep(&env, &config, &ckpt, "x", &[5, 5], 5, m, 30, 0).is_err());
        assert!(transfer_sweep(&env, &config, &ckpt, "x", &[5], 5, m, 29, 0).is_err());
        let toy = EnvConfig::Toy3(TorusConfig::toy3());
        let e = transfer_sweep(&env, &toy, &ckpt, "x", &[5], 5, m, 30, 0);
        assert!(matches!(e, Err(Error::CheckpointEnvMismatch { .. })));
    }

    #[test]
    fn one_agent_modes_coincide() {
        let (env, config, ckpt) = beach_checkpoint(8);
        let p = cde_compare(&env, &config, &ckpt, "init", 1, 30, 5).unwrap();
        assert!(p.overlap());
    }

    #[test]
    fn zero_variance_heads_ignore_the_mode() {
        let (env, _, ckpt) = beach_checkpoint(8);
        let run = |mode| {
            let opts = EvalOptions { mode, deterministic: true };
            evaluate_return(&env, &ckpt.params, 7, 4, 3, opts).unwrap().returns
        };
        assert_eq!(run(ExecutionMode::Centralized), run(ExecutionMode::Decentralized));
    }

    #[test]
    fn csv_schemas() {
        let dir = tempfile::tempdir().unwrap();
        let fit = RateFit {
            env: "beach".into(),
            rows: vec![RateRow {
                n: 10,
                mean_gap: 0.25,
                draws: 200,
            }],
            slope: None,
        };
        let path = dir.path().join("rate.csv");
        write_rate_csv(&path, &fit).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "env,N,mean_gap,draws\nbeach,10,0.25,200\n");
        write_json(&dir.path().join("rate.json"), &fit).unwrap();
    }
}
