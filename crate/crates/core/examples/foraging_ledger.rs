//! Foraging under an untrained policy, tracking where the foraged mass goes.
//!
//! `cargo run --release --example foraging_ledger -- [N] [seed]`

use m3fc::algo::{initial_params, TrainConfig};
use m3fc::envs::{Foraging, ForagingConfig};
use m3fc::finite_sim::{run_episode, EvalOptions};
use m3fc::rng::EpisodeRng;

fn main() -> m3fc::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(50) as usize;
    let seed = args.get(1).copied().unwrap_or(0);
    let env = Foraging::new(ForagingConfig::default())?;
    let params = initial_params(&env, &TrainConfig { hidden: vec![64, 64], seed, ..TrainConfig::default() })?;
    let mut rng = EpisodeRng::new(seed, n);
    let mut worst = 0.0f64;
    let mut last = None;
    let ret = run_episode(&env, &params, &mut rng, EvalOptions::default(), |s, _, o| {
        worst = worst.max(s.ledger_residual().abs());
        if s.t % 50 == 0 {
            println!(
                "t {:>3}  areas {:>2}  in areas {:8.3}  carried {:6.3}  deposited {:8.3}  wasted {:6.3}  reward {:7.4}",
                s.t,
                s.areas.len(),
                s.in_areas(),
                s.carried(),
                s.ledger.deposited,
                s.ledger.wasted,
                o.reward
            );
        }
        last = Some(s.ledger.clone());
    })?;
    let l = last.expect("episode has steps");
    println!("return {ret:.3}; arrived {:.3}, deposited {:.3}; worst ledger residual {worst:.2e}", l.arrived, l.deposited);
    Ok(())
}
