//! Foraging: minor agents collect mass from transient areas and deposit it at
//! the major agent. All masses are measured in mean-field units, i.e. one
//! agent's encumbrance `e` contributes `e / N`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{
    continuous_actions, major_vector, move_point, Boundary, EnvId, EnvSpec, Environment, MajorAction, MinorActions,
    StateRecord,
};
use crate::error::{Error, Result};
use crate::measures::{histogram, mean_per_bin, BinGrid};
use crate::policy::{encode_obs, to_unit, HeadConfig, MajorHead, XiLayout};
use crate::rng::EpisodeRng;

const LO: [f64; 2] = [-2.0, -2.0];
const HI: [f64; 2] = [2.0, 2.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForagingConfig {
    pub episode_len: usize,
    pub v_max: f64,
    pub major_v_max: f64,
    /// Major agent box `[lo, hi]` (x, y).
    pub major_lo: [f64; 2],
    pub major_hi: [f64; 2],
    /// Poisson rate of new areas per step.
    pub arrival_rate: f64,
    pub max_areas: usize,
    pub area_size_min: f64,
    pub area_size_max: f64,
    pub forage_range: f64,
    /// Per-area depletion cap per step.
    pub max_depletion: f64,
    pub deposit_range: f64,
    pub reward_scale: f64,
    pub cells_per_dim: usize,
}

impl Default for ForagingConfig {
    fn default() -> Self {
        Self {
            episode_len: 200,
            v_max: 0.3,
            major_v_max: 0.1,
            major_lo: [-2.0, -2.0],
            major_hi: [2.0, -1.0],
            arrival_rate: 0.2,
            max_areas: 5,
            area_size_min: 0.5,
            area_size_max: 1.5,
            forage_range: 0.5,
            max_depletion: 0.1,
            deposit_range: 0.5,
            reward_scale: 1.0,
            cells_per_dim: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Area {
    pub center: [f64; 2],
    pub remaining: f64,
}

/// Running mass balance of one episode.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MassLedger {
    pub initial_carried: f64,
    pub arrived: f64,
    pub deposited: f64,
    pub wasted: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForagingState {
    pub t: usize,
    pub major: [f64; 2],
    pub areas: Vec<Area>,
    /// Per agent `(x, y, encumbrance)`.
    pub minors: Vec<f64>,
    pub ledger: MassLedger,
}

impl ForagingState {
    pub fn carried(&self) -> f64 {
        let n = self.minors.len() / 3;
        self.minors.chunks(3).map(|m| m[2]).sum::<f64>() / n as f64
    }

    pub fn in_areas(&self) -> f64 {
        self.areas.iter().map(|a| a.remaining).sum()
    }

    /// `initial + arrived − (in areas + carried + deposited + wasted)`; zero up
    /// to round-off.
    pub fn ledger_residual(&self) -> f64 {
        let l = &self.ledger;
        l.initial_carried + l.arrived - (self.in_areas() + self.carried() + l.deposited + l.wasted)
    }
}

struct Harvest {
    encumbrance: Vec<f64>,
    remaining: Vec<f64>,
    deposited: f64,
    wasted: f64,
}

#[derive(Clone, Debug)]
pub struct Foraging {
    cfg: ForagingConfig,
    spec: EnvSpec,
}

impl Foraging {
    pub fn new(cfg: ForagingConfig) -> Result<Self> {
        if cfg.area_size_min > cfg.area_size_max || cfg.arrival_rate < 0.0 || cfg.forage_range <= 0.0 {
            return Err(Error::Config("foraging: invalid area parameters".into()));
        }
        if (0..2).any(|k| !(cfg.major_lo[k] < cfg.major_hi[k])) {
            return Err(Error::Config("foraging: empty major box".into()));
        }
        let grid = BinGrid::uniform(2, -2.0, 2.0, cfg.cells_per_dim)?;
        let spec = EnvSpec {
            id: EnvId::Foraging,
            episode_len: cfg.episode_len,
            obs_dim: 2 + 2 * grid.len(),
            heads: HeadConfig {
                major: MajorHead::Gaussian {
                    lo: vec![-1.0, -1.0],
                    hi: vec![1.0, 1.0],
                },
                xi: XiLayout::Continuous {
                    bins: grid.len(),
                    lo: vec![-1.0, -1.0],
                    hi: vec![1.0, 1.0],
                },
            },
            grid,
            minor_state_dim: 3,
        };
        Ok(Self { cfg, spec })
    }

    pub fn config(&self) -> &ForagingConfig {
        &self.cfg
    }

    /// Depletion and encumbrance updates at the current positions: each area
    /// loses `min(L, min(cap, ∫(r − ‖x − c‖)⁺ dμ))`, split among agents in
    /// range by their weight; agents then in range of the major agent deposit
    /// everything they carry.
    fn harvest(&self, s: &ForagingState) -> Harvest {
        let n = s.minors.len() / 3;
        let inv_n = 1.0 / n as f64;
        let mut enc: Vec<f64> = s.minors.chunks(3).map(|m| m[2]).collect();
        let mut remaining = Vec::with_capacity(s.areas.len());
        let mut wasted = 0.0;
        let mut w = vec![0.0; n];
        for area in &s.areas {
            let mut mass = 0.0;
            for (i, m) in s.minors.chunks(3).enumerate() {
                let d = ((m[0] - area.center[0]).powi(2) + (m[1] - area.center[1]).powi(2)).sqrt();
                w[i] = (self.cfg.forage_range - d).max(0.0);
                mass += w[i];
            }
            mass *= inv_n;
            if mass <= 0.0 {
                remaining.push(area.remaining);
                continue;
            }
            let dl = area.remaining.min(self.cfg.max_depletion.min(mass));
            remaining.push(area.remaining - dl);
            for i in 0..n {
                if w[i] > 0.0 {
                    let e = enc[i] + dl * w[i] / mass;
                    if e > 1.0 {
                        wasted += (e - 1.0) * inv_n;
                        enc[i] = 1.0;
                    } else {
                        enc[i] = e;
                    }
                }
            }
        }
        let mut deposited = 0.0;
        for (i, m) in s.minors.chunks(3).enumerate() {
            let d = ((m[0] - s.major[0]).powi(2) + (m[1] - s.major[1]).powi(2)).sqrt();
            if d < self.cfg.deposit_range {
                deposited += enc[i] * inv_n;
                enc[i] = 0.0;
            }
        }
        Harvest {
            encumbrance: enc,
            remaining,
            deposited,
            wasted,
        }
    }

    fn spawn<R: Rng + ?Sized>(&self, s: &mut ForagingState, rng: &mut R) {
        let k = if self.cfg.arrival_rate > 0.0 {
            Poisson::new(self.cfg.arrival_rate).expect("positive rate").sample(rng) as usize
        } else {
            0
        };
        for _ in 0..k {
            if s.areas.len() >= self.cfg.max_areas {
                break;
            }
            let center = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let size = if self.cfg.area_size_max > self.cfg.area_size_min {
                rng.random_range(self.cfg.area_size_min..self.cfg.area_size_max)
            } else {
                self.cfg.area_size_min
            };
            s.ledger.arrived += size;
            s.areas.push(Area { center, remaining: size });
        }
    }

    fn positions(s: &ForagingState) -> impl Iterator<Item = &[f64]> {
        s.minors.chunks(3).map(|m| &m[..2])
    }
}

impl Environment for Foraging {
    type State = ForagingState;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut EpisodeRng) -> ForagingState {
        let mut minors = Vec::with_capacity(3 * rng.n_agents());
        for r in rng.agents.iter_mut() {
            minors.push(r.random_range(-2.0..2.0));
            minors.push(r.random_range(-2.0..2.0));
            minors.push(r.random_range(0.0..1.0));
        }
        let (lo, hi) = (self.cfg.major_lo, self.cfg.major_hi);
        let major = [rng.main.random_range(lo[0]..hi[0]), rng.main.random_range(lo[1]..hi[1])];
        let mut s = ForagingState {
            t: 0,
            major,
            areas: Vec::new(),
            minors,
            ledger: MassLedger::default(),
        };
        s.ledger.initial_carried = s.carried();
        s
    }

    fn n_agents(&self, s: &ForagingState) -> usize {
        s.minors.len() / 3
    }

    fn time(&self, s: &ForagingState) -> usize {
        s.t
    }

    fn observe(&self, s: &ForagingState) -> Result<Vec<f64>> {
        let hist = histogram(Self::positions(s), &self.spec.grid)?;
        let enc: Vec<f64> = s.minors.chunks(3).map(|m| m[2]).collect();
        let load = mean_per_bin(Self::positions(s), &enc, &self.spec.grid)?;
        let (lo, hi) = (self.cfg.major_lo, self.cfg.major_hi);
        let major = [to_unit(s.major[0], lo[0], hi[0]), to_unit(s.major[1], lo[1], hi[1])];
        encode_obs(&self.spec.grid, &major, &hist, &load)
    }

    fn slot(&self, s: &ForagingState, i: usize) -> Result<usize> {
        self.spec.grid.cell_of(&s.minors[3 * i..3 * i + 2])
    }

    fn reward(&self, s: &ForagingState, _major: &MajorAction, _rng: &mut ChaCha8Rng) -> Result<f64> {
        Ok(self.cfg.reward_scale * self.harvest(s).deposited)
    }

    fn step(&self, s: &mut ForagingState, major: &MajorAction, minors: &MinorActions, rng: &mut EpisodeRng) -> Result<()> {
        let n = self.n_agents(s);
        let acts = continuous_actions(minors, n, 2)?;
        let u0 = major_vector(major, 2)?;
        let h = self.harvest(s);
        for (m, e) in s.minors.chunks_mut(3).zip(&h.encumbrance) {
            m[2] = *e;
        }
        for (a, r) in s.areas.iter_mut().zip(&h.remaining) {
            a.remaining = *r;
        }
        s.areas.retain(|a| a.remaining > 0.0);
        s.ledger.deposited += h.deposited;
        s.ledger.wasted += h.wasted;

        for (i, r) in rng.agents.iter_mut().enumerate() {
            let pos = &mut s.minors[3 * i..3 * i + 2];
            move_point(pos, &acts[2 * i..2 * i + 2], self.cfg.v_max, 0.0, &LO, &HI, Boundary::Clip, r);
        }
        let (lo, hi) = (self.cfg.major_lo, self.cfg.major_hi);
        move_point(&mut s.major, u0, self.cfg.major_v_max, 0.0, &lo, &hi, Boundary::Clip, &mut rng.main);
        self.spawn(s, &mut rng.main);
        s.t += 1;
        Ok(())
    }

    /// Major record: `[x, y, arrived, deposited, wasted, initial, (cx, cy, L)*]`.
    fn record(&self, s: &ForagingState) -> StateRecord {
        let l = &s.ledger;
        let mut major = vec![s.major[0], s.major[1], l.arrived, l.deposited, l.wasted, l.initial_carried];
        for a in &s.areas {
            major.extend([a.center[0], a.center[1], a.remaining]);
        }
        StateRecord {
            t: s.t,
            major,
            minors: s.minors.clone(),
        }
    }

    fn restore(&self, r: &StateRecord) -> Result<ForagingState> {
        if r.major.len() < 6 || (r.major.len() - 6) % 3 != 0 || r.minors.len() % 3 != 0 {
            return Err(Error::Format("malformed foraging record".into()));
        }
        let areas = r.major[6..]
            .chunks(3)
            .map(|c| Area {
                center: [c[0], c[1]],
                remaining: c[2],
            })
            .collect();
        Ok(ForagingState {
            t: r.t,
            major: [r.major[0], r.major[1]],
            areas,
            minors: r.minors.clone(),
            ledger: MassLedger {
                arrived: r.major[2],
                deposited: r.major[3],
                wasted: r.major[4],
                initial_carried: r.major[5],
            },
        })
    }
}
