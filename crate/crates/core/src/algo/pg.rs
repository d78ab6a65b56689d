//! Score-function estimate of the policy gradient on the finite system,
//! without critic or baseline.

use ndarray::Array2;
use rayon::prelude::*;

use crate::envs::Environment;
use crate::error::Result;
use crate::finite_sim::{run_episode, EvalOptions};
use crate::nn::PolicyParams;
use crate::policy::M3fcAction;
use crate::rng::{derive_seed, EpisodeRng};

const PG_TAG: u64 = 0x7067;
/// Episodes per parallel work unit; fixed so that sums do not depend on the
/// number of threads.
const CHUNK: usize = 8;

pub fn pg_episode_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(seed, &[PG_TAG, episode as u64])
}

/// `Σ_t γ^t Ĝ_t ∇_θ log π̃(u_t | s_t)` for one episode, `Ĝ_t` the discounted
/// reward-to-go.
fn episode_gradient<E: Environment>(env: &E, params: &PolicyParams, n_agents: usize, seed: u64, gamma: f64) -> Result<Vec<f64>> {
    let mut rng = EpisodeRng::new(seed, n_agents);
    let mut obs: Vec<Vec<f64>> = Vec::new();
    let mut actions: Vec<M3fcAction> = Vec::new();
    let mut rewards = Vec::new();
    run_episode(env, params, &mut rng, EvalOptions::default(), |_, ob, o| {
        obs.push(ob.to_vec());
        actions.push(o.action.clone());
        rewards.push(o.reward);
    })?;
    let t_len = rewards.len();
    let mut togo = vec![0.0; t_len];
    let mut acc = 0.0;
    for t in (0..t_len).rev() {
        acc = rewards[t] + gamma * acc;
        togo[t] = acc;
    }
    let d = params.obs_dim();
    let mut m = Array2::zeros((t_len, d));
    for (r, o) in obs.iter().enumerate() {
        m.row_mut(r).iter_mut().zip(o).for_each(|(a, b)| *a = *b);
    }
    let (outs, tape) = params.policy_batch(m.view())?;
    let mut g_out = Array2::zeros(outs.dim());
    let mut disc = 1.0;
    for t in 0..t_len {
        let out = outs.row(t);
        let mut g = g_out.row_mut(t);
        params.heads.joint_logprob_grad(
            out.as_slice().expect("row-major"),
            &actions[t],
            Some(g.as_slice_mut().expect("row-major")),
            disc * togo[t],
        )?;
        disc *= gamma;
    }
    let mut grad = vec![0.0; params.len()];
    params.policy_backward(&tape, g_out.view(), &mut grad)?;
    grad.truncate(params.n_policy());
    Ok(grad)
}

/// Average of the per-episode estimator over `episodes` seeded episodes;
/// returns the gradient with respect to the policy-network parameters.
pub fn estimate_pg<E: Environment>(
    env: &E,
    params: &PolicyParams,
    n_agents: usize,
    episodes: usize,
    gamma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = params.n_policy();
    let chunks: Vec<Vec<f64>> = (0..episodes.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut sum = vec![0.0; n];
            for e in c * CHUNK..((c + 1) * CHUNK).min(episodes) {
                let g = episode_gradient(env, params, n_agents, pg_episode_seed(seed, e), gamma)?;
                sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
            }
            Ok(sum)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; n];
    for c in chunks {
        total.iter_mut().zip(&c).for_each(|(s, v)| *s += v);
    }
    let k = episodes.max(1) as f64;
    total.iter_mut().for_each(|s| *s /= k);
    Ok(total)
}
