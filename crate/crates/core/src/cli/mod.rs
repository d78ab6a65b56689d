//! The `m3fc` command line.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::algo::{train, DirSink};
use crate::chaos_eval::{
    cde_compare, check_checkpoint, lln_rate_fit, pg_consistency, random_rule, transfer_sweep, write_json, write_pg_csv, write_rate_csv,
    write_transfer_csv, REFERENCE_N,
};
use crate::envs::{AnyEnv, EnvConfig};
use crate::error::{Error, Result};
use crate::finite_sim::{dump_episodes, evaluate_return, read_trace, replay_rewards, EvalOptions, ExecutionMode};
use crate::mf_limit::{greedy_policy, value_iteration, DppConfig, FiniteModel, SimplexGrid};
use crate::nn::Checkpoint;
use crate::rng::rng_from_seed;
use crate::with_env;
pub use config::{RunConfig, SEED_ENV};

#[derive(Parser, Debug)]
#[command(name = "m3fc", version, about = "Major-minor mean-field control experiments")]
struct Cli {
    /// Worker threads (default: logical cores - 1).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Source {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained parameters; the environment defaults to the one stored inside.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory (overrides `run.out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a policy; writes metrics.csv, checkpoints and config.resolved.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean episode return of a checkpoint at one population size.
    Eval {
        #[command(flatten)]
        src: Source,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = ExecutionMode::Centralized)]
        mode: ExecutionMode,
        /// Use the head means instead of sampling.
        #[arg(long)]
        deterministic: bool,
        /// Also write a trajectory dump of the evaluated episodes.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Returns over a list of population sizes against a large-N reference.
    Transfer {
        #[command(flatten)]
        src: Source,
        #[arg(long, value_delimiter = ',', default_value = "2,5,10,20,50")]
        ns: Vec<usize>,
        #[arg(long, default_value_t = REFERENCE_N)]
        reference: usize,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = ExecutionMode::Centralized)]
        mode: ExecutionMode,
        /// Evaluate both execution modes at the first N instead.
        #[arg(long)]
        paired: bool,
    },
    /// One-step mean-field gap over N and its log-log slope (finite-state envs).
    Chaos {
        #[command(flatten)]
        src: Source,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000")]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        draws: usize,
    },
    /// Cosine similarity of finite-N gradient estimates to a large-N one.
    Pgcheck {
        #[command(flatten)]
        src: Source,
        #[arg(long, value_delimiter = ',', default_value = "5,20,100")]
        ns: Vec<usize>,
        #[arg(long, default_value_t = REFERENCE_N)]
        reference: usize,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 8)]
        episodes: usize,
        #[arg(long, default_value_t = 32)]
        ref_episodes: usize,
    },
    /// Value iteration on the discretized simplex (finite-state envs).
    Dpp {
        #[command(flatten)]
        src: Source,
        /// Grid resolution K: weights are multiples of 1/K.
        #[arg(long, default_value_t = 20)]
        resolution: usize,
    },
    /// Recompute logged rewards of a trajectory dump.
    Replay {
        trace: PathBuf,
        /// Largest tolerated absolute difference.
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
    },
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::CheckpointEnvMismatch { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_workers(workers: Option<usize>, configured: usize) {
    let n = workers.filter(|&w| w > 0).or((configured > 0).then_some(configured)).unwrap_or_else(|| {
        std::thread::available_parallelism().map(|p| p.get().saturating_sub(1).max(1)).unwrap_or(1)
    });
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let mut c = RunConfig::load(path)?;
    c.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
    c.validate()?;
    Ok(c)
}

/// Environment, run configuration and optional checkpoint for the evaluation
/// commands.
struct Resolved {
    config: RunConfig,
    env: AnyEnv,
    ckpt: Option<(Checkpoint, String)>,
}

fn resolve(src: &Source, need_checkpoint: bool) -> Result<Resolved> {
    let ckpt = match &src.checkpoint {
        Some(p) => {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint missing")));
            }
            Some((Checkpoint::load(p)?, p.display().to_string()))
        }
        None if need_checkpoint => return Err(Error::Config("--checkpoint is required".into())),
        None => None,
    };
    let mut config = match (&src.config, &ckpt) {
        (Some(p), _) => load_config(p)?,
        (None, Some((c, _))) => {
            let env = EnvConfig::from_json(&c.env)?;
            let mut rc = RunConfig::parse(&format!("env.id = {}", env.id()))?;
            rc.env = env;
            rc.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
            rc
        }
        (None, None) => return Err(Error::Config("need --config or --checkpoint".into())),
    };
    if let Some(o) = &src.out {
        config.out_dir = o.clone();
    }
    let env = config.env.build()?;
    if let Some((c, _)) = &ckpt {
        with_env!(&env, e => check_checkpoint(e, &config.env, c))?;
    }
    Ok(Resolved { config, env, ckpt })
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    Ok(config.out_dir.clone())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config, out } => {
            let mut rc = load_config(&config)?;
            if let Some(o) = out {
                rc.out_dir = o;
            }
            init_workers(cli.workers, rc.workers);
            cmd_train(&rc)
        }
        Cmd::Eval {
            src,
            n,
            episodes,
            mode,
            deterministic,
            dump,
        } => {
            let r = resolve(&src, true)?;
            init_workers(cli.workers, r.config.workers);
            let (ckpt, _) = r.ckpt.as_ref().expect("required");
            let opts = EvalOptions { mode, deterministic };
            let seed = r.config.train.seed;
            let res = with_env!(&r.env, e => evaluate_return(e, &ckpt.params, n, episodes, seed, opts))?;
            println!("env={} N={n} mode={mode} episodes={episodes} mean={} ci={}", r.config.env.id(), res.mean, res.ci);
            if let Some(path) = dump {
                let steps = with_env!(&r.env, e => dump_episodes(e, &r.config.env, &ckpt.params, n, episodes, seed, opts, &path))?;
                println!("wrote {steps} steps to {}", path.display());
            }
            Ok(())
        }
        Cmd::Transfer {
            src,
            ns,
            reference,
            episodes,
            mode,
            paired,
        } => {
            let r = resolve(&src, true)?;
            init_workers(cli.workers, r.config.workers);
            let (ckpt, id) = r.ckpt.as_ref().expect("required");
            let seed = r.config.train.seed;
            let dir = out_dir(&r.config)?;
            if paired {
                let n = *ns.first().ok_or_else(|| Error::Config("--ns is empty".into()))?;
                let p = with_env!(&r.env, e => cde_compare(e, &r.config.env, ckpt, id, n, episodes, seed))?;
                write_transfer_csv(&dir.join("paired.csv"), &[&p.centralized, &p.decentralized])?;
                write_json(&dir.join("paired.json"), &p)?;
                for s in [&p.centralized, &p.decentralized] {
                    println!("N={n} mode={} mean={} ci={}", s.mode, s.rows[0].mean, s.rows[0].ci);
                }
                println!("intervals overlap: {}", p.overlap());
            } else {
                let s = with_env!(&r.env, e => transfer_sweep(e, &r.config.env, ckpt, id, &ns, reference, mode, episodes, seed))?;
                write_transfer_csv(&dir.join("transfer.csv"), &[&s])?;
                write_json(&dir.join("transfer.json"), &s)?;
                for (row, gap) in s.rows.iter().zip(s.gaps()) {
                    println!("N={} mean={} ci={} gap={gap}", row.n, row.mean, row.ci);
                }
            }
            Ok(())
        }
        Cmd::Chaos { src, ns, draws } => {
            let r = resolve(&src, false)?;
            init_workers(cli.workers, r.config.workers);
            let model = finite_model(&r.env)?;
            let seed = r.config.train.seed;
            let rule = random_rule(model.n_states(), model.n_actions(), &mut rng_from_seed(seed));
            let mu0 = vec![1.0 / model.n_states() as f64; model.n_states()];
            let name = r.config.env.id().as_str();
            let fit = lln_rate_fit(model, name, 0, 0, &mu0, &rule, &ns, draws, seed)?;
            let dir = out_dir(&r.config)?;
            write_rate_csv(&dir.join("rate.csv"), &fit)?;
            write_json(&dir.join("rate.json"), &fit)?;
            for row in &fit.rows {
                println!("N={} mean_gap={}", row.n, row.mean_gap);
            }
            match fit.slope {
                Some(s) => println!("log-log slope {s}"),
                None => println!("log-log slope undefined (some gap is zero)"),
            }
            Ok(())
        }
        Cmd::Pgcheck {
            src,
            ns,
            reference,
            seeds,
            episodes,
            ref_episodes,
        } => {
            let r = resolve(&src, true)?;
            init_workers(cli.workers, r.config.workers);
            let (ckpt, _) = r.ckpt.as_ref().expect("required");
            let (gamma, seed) = (r.config.train.gamma, r.config.train.seed);
            let name = r.config.env.id().as_str();
            let curve = with_env!(&r.env, e => pg_consistency(e, name, &ckpt.params, &ns, reference, seeds, episodes, ref_episodes, gamma, seed))?;
            let dir = out_dir(&r.config)?;
            write_pg_csv(&dir.join("pg.csv"), &curve)?;
            write_json(&dir.join("pg.json"), &curve)?;
            for row in &curve.rows {
                println!("N={} cos_sim={}", row.n, row.cos_sim);
            }
            Ok(())
        }
        Cmd::Dpp { src, resolution } => {
            let r = resolve(&src, false)?;
            init_workers(cli.workers, r.config.workers);
            let model = finite_model(&r.env)?;
            let grid = SimplexGrid::new(model.n_states(), resolution)?;
            let cfg = DppConfig {
                gamma: r.config.train.gamma,
                ..DppConfig::default()
            };
            let table = value_iteration(model, &grid, &cfg)?;
            let policy = greedy_policy(&table, model, &cfg)?;
            let dir = out_dir(&r.config)?;
            let path = dir.join("values.csv");
            let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            table.write_csv(std::io::BufWriter::new(f)).map_err(|e| Error::io(&path, e))?;
            let residual = table.residuals.last().copied().unwrap_or(0.0);
            println!(
                "{} nodes x {} major states, {} sweeps, final residual {residual:e}, converged {}",
                grid.len(),
                table.n_major,
                table.residuals.len(),
                table.converged
            );
            let (_, u0) = policy.act_node(0, 0);
            println!("greedy major action at (0, node 0): {u0}");
            if !table.converged {
                return Err(Error::Format("value iteration did not converge".into()));
            }
            Ok(())
        }
        Cmd::Replay { trace, tol } => {
            init_workers(cli.workers, 0);
            let (header, steps) = read_trace(&trace)?;
            let env = EnvConfig::from_json(&header.env)?.build()?;
            let (count, worst) = with_env!(&env, e => replay_rewards(e, &steps))?;
            println!("replayed {count} steps, max |reward difference| = {worst:e}");
            if worst > tol {
                return Err(Error::Format(format!("replayed rewards differ by {worst:e}")));
            }
            Ok(())
        }
    }
}

fn finite_model(env: &AnyEnv) -> Result<&dyn FiniteModel> {
    match env {
        AnyEnv::Beach(e) | AnyEnv::Toy3(e) => Ok(e),
        _ => Err(Error::Config("this command needs a finite-state environment (beach or toy3)".into())),
    }
}

fn cmd_train(rc: &RunConfig) -> Result<()> {
    let dir = out_dir(rc)?;
    let snapshot = dir.join("config.resolved");
    fs::write(&snapshot, rc.to_flat()).map_err(|e| Error::io(&snapshot, e))?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    // a second handler registration in the same process is harmless to skip
    let _ = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst));
    let mut sink = DirSink::create(&dir)?.with_stop_flag(stop);
    let env = rc.env.build()?;
    let json = rc.env.to_json();
    let out = with_env!(&env, e => train(e, &json, &rc.train, &mut sink))?;
    if let Some(last) = out.rows.last() {
        println!("iteration {} env_steps {} mean_return {}", last.iteration, last.env_steps, last.mean_return);
    }
    println!(
        "{} updates, {} env steps{}; outputs in {}",
        out.iterations,
        out.env_steps,
        if out.stopped { " (interrupted)" } else { "" },
        dir.display()
    );
    Ok(())
}
