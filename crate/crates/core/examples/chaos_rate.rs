//! Empirical mean field vs the exact one-step mean-field update on Beach,
//! for growing populations under a fixed random decision rule.
//!
//! `cargo run --release --example chaos_rate -- [draws]`

use m3fc::chaos_eval::{lln_rate_fit, random_rule};
use m3fc::envs::DiscreteTorus;
use m3fc::mf_limit::FiniteModel;
use m3fc::rng::rng_from_seed;

fn main() -> m3fc::Result<()> {
    let draws = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let env = DiscreteTorus::beach();
    let (states, actions) = (env.n_states(), env.n_actions());
    let rule = random_rule(states, actions, &mut rng_from_seed(3));
    let mu0 = vec![1.0 / states as f64; states];
    let fit = lln_rate_fit(&env, "beach", 0, 0, &mu0, &rule, &[10, 100, 1000, 10_000], draws, 11)?;
    println!("{:>7}  {:>10}", "N", "mean L1");
    for r in &fit.rows {
        println!("{:>7}  {:>10.5}", r.n, r.mean_gap);
    }
    match fit.slope {
        Some(s) => println!("log-log slope {s:.3}"),
        None => println!("some gap was exactly zero; no slope"),
    }
    Ok(())
}
