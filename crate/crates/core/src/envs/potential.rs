//! Potential: minor agents on the 1-D torus `[-2, 2)` push an unactuated
//! major agent through a short-range linear repulsive field.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{continuous_actions, move_point, wrap, Boundary, EnvId, EnvSpec, Environment, MajorAction, MinorActions, StateRecord};
use crate::error::{Error, Result};
use crate::measures::{histogram, BinGrid};
use crate::nn::heads::standard_normal;
use crate::policy::{encode_obs, to_unit, HeadConfig, MajorHead, XiLayout};
use crate::rng::EpisodeRng;

const LO: f64 = -2.0;
const HI: f64 = 2.0;
const PERIOD: f64 = HI - LO;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialConfig {
    pub episode_len: usize,
    pub v_max: f64,
    /// Field strength multiplier on the push integral.
    pub push_gain: f64,
    pub force_range: f64,
    pub target_decay: f64,
    pub target_var: f64,
    pub cells: usize,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self {
            episode_len: 100,
            v_max: 0.3,
            push_gain: 1.0 / 20.0,
            force_range: 1.0,
            target_decay: 0.99,
            target_var: 0.005,
            cells: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialState {
    pub t: usize,
    pub major: f64,
    pub target: f64,
    pub minors: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Potential {
    cfg: PotentialConfig,
    spec: EnvSpec,
}

/// Wrap-around distance on the torus.
pub fn torus_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PERIOD);
    d.min(PERIOD - d)
}

impl Potential {
    pub fn new(cfg: PotentialConfig) -> Result<Self> {
        if cfg.force_range <= 0.0 || cfg.target_var < 0.0 {
            return Err(Error::Config("potential: force_range must be positive".into()));
        }
        let grid = BinGrid::uniform(1, LO, HI, cfg.cells)?;
        let spec = EnvSpec {
            id: EnvId::Potential,
            episode_len: cfg.episode_len,
            obs_dim: 2 + grid.len(),
            heads: HeadConfig {
                major: MajorHead::None,
                xi: XiLayout::Continuous {
                    bins: grid.len(),
                    lo: vec![-1.0],
                    hi: vec![1.0],
                },
            },
            grid,
            minor_state_dim: 1,
        };
        Ok(Self { cfg, spec })
    }

    pub fn config(&self) -> &PotentialConfig {
        &self.cfg
    }

    /// Displacement of the major agent at `major` under the field of `minors`.
    pub fn push(&self, major: f64, minors: &[f64]) -> f64 {
        let r = self.cfg.force_range;
        let mut total = 0.0;
        for &x in minors {
            for off in [-PERIOD, 0.0, PERIOD] {
                let d = major - x + off;
                let mag = (1.0 - d.abs() / r).max(0.0);
                if mag > 0.0 && d != 0.0 {
                    total += mag * d.signum();
                }
            }
        }
        self.cfg.push_gain * total / minors.len() as f64
    }
}

impl Environment for Potential {
    type State = PotentialState;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut EpisodeRng) -> PotentialState {
        let minors = rng.agents.iter_mut().map(|r| r.random_range(LO..HI)).collect();
        let major = rng.main.random_range(LO..HI);
        let target = wrap(self.cfg.target_var.sqrt() * standard_normal(&mut rng.main), LO, HI);
        PotentialState {
            t: 0,
            major,
            target,
            minors,
        }
    }

    fn n_agents(&self, s: &PotentialState) -> usize {
        s.minors.len()
    }

    fn time(&self, s: &PotentialState) -> usize {
        s.t
    }

    fn observe(&self, s: &PotentialState) -> Result<Vec<f64>> {
        let hist = histogram(s.minors.chunks(1), &self.spec.grid)?;
        let major = [to_unit(s.major, LO, HI), to_unit(s.target, LO, HI)];
        encode_obs(&self.spec.grid, &major, &hist, &[])
    }

    fn slot(&self, s: &PotentialState, i: usize) -> Result<usize> {
        self.spec.grid.cell_of(&s.minors[i..i + 1])
    }

    fn reward(&self, s: &PotentialState, _major: &MajorAction, _rng: &mut ChaCha8Rng) -> Result<f64> {
        Ok(-torus_distance(s.major, s.target))
    }

    fn step(&self, s: &mut PotentialState, _major: &MajorAction, minors: &MinorActions, rng: &mut EpisodeRng) -> Result<()> {
        let n = self.n_agents(s);
        let acts = continuous_actions(minors, n, 1)?;
        let push = self.push(s.major, &s.minors);
        for (i, r) in rng.agents.iter_mut().enumerate() {
            move_point(&mut s.minors[i..i + 1], &acts[i..i + 1], self.cfg.v_max, 0.0, &[LO], &[HI], Boundary::Wrap, r);
        }
        s.major = wrap(s.major + push, LO, HI);
        let noise = self.cfg.target_var.sqrt() * standard_normal(&mut rng.main);
        s.target = wrap(self.cfg.target_decay * s.target + noise, LO, HI);
        s.t += 1;
        Ok(())
    }

    fn record(&self, s: &PotentialState) -> StateRecord {
        StateRecord {
            t: s.t,
            major: vec![s.major, s.target],
            minors: s.minors.clone(),
        }
    }

    fn restore(&self, r: &StateRecord) -> Result<PotentialState> {
        if r.minors.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("potential positions must be finite".into()));
        }
        match r.major.as_slice() {
            [a, b] => Ok(PotentialState {
                t: r.t,
                major: *a,
                target: *b,
                minors: r.minors.clone(),
            }),
            _ => Err(Error::Format("potential major record has 2 entries".into())),
        }
    }
}
