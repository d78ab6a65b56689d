//! Exact empirical optimal transport between sample clouds, and the
//! two-Gaussians reward it drives.
//!
//! `cargo run --release --example optimal_transport -- [points]`

use m3fc::envs::{Environment, MajorAction, TwoGaussians, TwoGConfig};
use m3fc::rng::{rng_from_seed, EpisodeRng};
use m3fc::transport::{ot_cost, w1_1d_abs, SampleCloud};
use rand::Rng;

fn main() -> m3fc::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let mut rng = rng_from_seed(1);
    let a = SampleCloud::new(1, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let b = SampleCloud::new(1, (0..n).map(|_| rng.random_range(0.5..1.5)).collect())?;
    println!("1-D clouds: squared-cost OT {:.6}, W1 {:.6}", ot_cost(&a, &b)?, w1_1d_abs(&a, &b)?);

    let env = TwoGaussians::new(TwoGConfig::default())?;
    for clock in [0, 12, 25, 37] {
        let target = env.sample_target(clock, n, &mut rng);
        let other = env.sample_target(clock, n, &mut rng);
        println!("clock {clock:>2}: weight {:.3}, two target draws {:.4} apart", env.mixture_weight(clock), ot_cost(&target, &other)?);
    }

    let mut erng = EpisodeRng::new(5, n);
    let s = env.reset(&mut erng);
    let r = env.reward(&s, &MajorAction::None, &mut rng_from_seed(9))?;
    println!("uniform start with {n} agents: reward {r:.4}");
    Ok(())
}
