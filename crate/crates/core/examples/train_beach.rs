//! Desk-scale PPO on the Beach bar problem.
//!
//! `cargo run --release --example train_beach -- [total_steps] [seed] [lr]`

use std::time::Instant;

use m3fc::algo::{train, NullSink, TrainConfig};
use m3fc::envs::{DiscreteTorus, EnvConfig, TorusConfig};

fn main() -> m3fc::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let total_steps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40_000);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let desk = TrainConfig::desk();
    let lr = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(desk.lr);
    let env = DiscreteTorus::beach();
    let cfg = TrainConfig {
        total_steps,
        seed,
        lr,
        ..desk
    };
    let start = Instant::now();
    let out = train(&env, &EnvConfig::Beach(TorusConfig::beach()).to_json(), &cfg, &mut NullSink)?;
    for r in &out.rows {
        println!(
            "iter {:4}  steps {:8}  return {:9.3} ± {:.3}  kl {:.4}  clip {:.3}  vloss {:.3}  ent {:.3}",
            r.iteration, r.env_steps, r.mean_return, r.ci, r.stats.kl, r.stats.clip_frac, r.stats.value_loss, r.stats.entropy
        );
    }
    println!("{} updates in {:.1}s", out.iterations, start.elapsed().as_secs_f64());
    Ok(())
}
