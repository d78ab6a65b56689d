//! Generalized advantage estimation over contiguous trajectory segments.

use crate::error::{Error, Result};
use crate::finite_sim::TrajectoryBatch;

/// Advantages and value targets for one contiguous run of steps.
///
/// `dones[t]` ends an episode after step `t` (no bootstrap across it);
/// `bootstrap` is the value of the state following the last step when that
/// step is not terminal.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: values.len().min(dones.len()),
        });
    }
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut running = 0.0;
    for t in (0..n).rev() {
        if dones[t] {
            next_value = 0.0;
            running = 0.0;
        }
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
        next_value = values[t];
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// [`gae`] applied segment by segment over a batch.
pub fn batch_gae(batch: &TrajectoryBatch, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut adv = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for s in &batch.segments {
        let r = s.start..s.start + s.len;
        let (a, t) = gae(
            &batch.rewards[r.clone()],
            &batch.values[r.clone()],
            &batch.dones[r],
            s.bootstrap,
            gamma,
            lambda,
        )?;
        adv.extend(a);
        targets.extend(t);
    }
    if adv.len() != batch.len() {
        return Err(Error::LengthMismatch {
            expected: batch.len(),
            got: adv.len(),
        });
    }
    Ok((adv, targets))
}
