//! Cosine similarity between finite-population policy-gradient estimates
//! and a large-population reference, at a fixed Beach policy.
//!
//! `cargo run --release --example pg_consistency -- [seeds] [episodes]`

use m3fc::algo::{initial_params, TrainConfig};
use m3fc::chaos_eval::pg_consistency;
use m3fc::envs::DiscreteTorus;

fn main() -> m3fc::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let seeds = args.first().copied().unwrap_or(5);
    let episodes = args.get(1).copied().unwrap_or(8);
    let env = DiscreteTorus::beach();
    let params = initial_params(&env, &TrainConfig { hidden: vec![64, 64], ..TrainConfig::default() })?;
    let curve = pg_consistency(&env, "beach", &params, &[5, 20, 100], 500, seeds, episodes, 4 * episodes, 0.99, 0)?;
    for r in &curve.rows {
        println!("N {:>3}  cos {:.4}", r.n, r.cos_sim);
    }
    println!("nondecreasing: {}", curve.nondecreasing());
    Ok(())
}
