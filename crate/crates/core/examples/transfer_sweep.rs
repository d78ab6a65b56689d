//! Evaluates one checkpoint across population sizes and both execution
//! modes. Without a path, an untrained Beach policy is used.
//!
//! `cargo run --release --example transfer_sweep -- [checkpoint.bin] [episodes]`

use std::path::Path;

use m3fc::algo::{initial_params, TrainConfig};
use m3fc::chaos_eval::{cde_compare, transfer_sweep};
use m3fc::envs::{EnvConfig, EnvId};
use m3fc::finite_sim::ExecutionMode;
use m3fc::nn::Checkpoint;
use m3fc::with_env;

fn main() -> m3fc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let episodes = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let (ckpt, id) = match args.first() {
        Some(p) => (Checkpoint::load(Path::new(p))?, p.clone()),
        None => {
            let config = EnvConfig::default_for(EnvId::Beach);
            let env = config.build()?;
            let params = with_env!(&env, e => initial_params(e, &TrainConfig { hidden: vec![64, 64], ..TrainConfig::default() }))?;
            let ckpt = Checkpoint {
                params,
                env: config.to_json(),
                env_steps: 0,
                iteration: 0,
            };
            (ckpt, "untrained".to_string())
        }
    };
    let config = EnvConfig::from_json(&ckpt.env)?;
    let env = config.build()?;
    with_env!(&env, e => {
        let sweep = transfer_sweep(e, &config, &ckpt, &id, &[2, 5, 10, 20, 50], 200, ExecutionMode::Centralized, episodes, 0)?;
        println!("{} reference N={}: {:.2} ± {:.2}", sweep.env, sweep.reference.n, sweep.reference.mean, sweep.reference.ci);
        for (r, gap) in sweep.rows.iter().zip(sweep.gaps()) {
            println!("N {:>3}  J {:9.2} ± {:6.2}  |J - J_ref| {:7.2}", r.n, r.mean, r.ci, gap);
        }
        let paired = cde_compare(e, &config, &ckpt, &id, 20, episodes, 1)?;
        let (c, d) = (&paired.centralized.rows[0], &paired.decentralized.rows[0]);
        println!("N 20 centralized {:.2} ± {:.2}, decentralized {:.2} ± {:.2}, overlap {}", c.mean, c.ci, d.mean, d.ci, paired.overlap());
        Ok::<(), m3fc::Error>(())
    })
}
