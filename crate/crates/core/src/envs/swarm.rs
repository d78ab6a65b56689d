//! Continuous swarm-shaping environments on `[-2, 2]²`: tracking a periodic
//! Gaussian mixture (2G) and forming a Gaussian around a moving major agent
//! (Formation). Both score the swarm by exact transport cost against a
//! sampled target cloud of the same size.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    continuous_actions, major_vector, move_point, Boundary, EnvId, EnvSpec, Environment, MajorAction, MinorActions,
    StateRecord,
};
use crate::error::{Error, Result};
use crate::measures::{histogram, BinGrid};
use crate::nn::heads::standard_normal;
use crate::policy::{clock_encoding, encode_obs, to_unit, HeadConfig, MajorHead, XiLayout};
use crate::rng::EpisodeRng;
use crate::transport::{ot_cost, SampleCloud};

const LO: [f64; 2] = [-2.0, -2.0];
const HI: [f64; 2] = [2.0, 2.0];

fn box_grid(cells: usize) -> Result<BinGrid> {
    BinGrid::uniform(2, -2.0, 2.0, cells)
}

fn unit_box() -> (Vec<f64>, Vec<f64>) {
    (vec![-1.0, -1.0], vec![1.0, 1.0])
}

fn uniform_minors(rng: &mut EpisodeRng) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * rng.n_agents());
    for r in rng.agents.iter_mut() {
        v.push(r.random_range(-2.0..2.0));
        v.push(r.random_range(-2.0..2.0));
    }
    v
}

fn move_minors(minors: &mut [f64], actions: &[f64], v_max: f64, noise_std: f64, rng: &mut EpisodeRng) {
    for (i, r) in rng.agents.iter_mut().enumerate() {
        let pos = &mut minors[2 * i..2 * i + 2];
        move_point(pos, &actions[2 * i..2 * i + 2], v_max, noise_std, &LO, &HI, Boundary::Clip, r);
    }
}

fn check_positions(v: &[f64]) -> Result<()> {
    if v.len() % 2 != 0 || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Format("positions must be finite pairs".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoGConfig {
    pub episode_len: usize,
    /// Clock period of the mixture weights.
    pub period: usize,
    pub v_max: f64,
    pub noise_var: f64,
    /// Per-coordinate variance of each mixture component.
    pub target_var: f64,
    pub cells_per_dim: usize,
}

impl Default for TwoGConfig {
    fn default() -> Self {
        Self {
            episode_len: 100,
            period: 50,
            v_max: 0.2,
            noise_var: 0.03,
            target_var: 0.05,
            cells_per_dim: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoGState {
    pub t: usize,
    /// Major agent: the clock `t mod period`.
    pub clock: usize,
    pub minors: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TwoGaussians {
    cfg: TwoGConfig,
    spec: EnvSpec,
}

impl TwoGaussians {
    pub fn new(cfg: TwoGConfig) -> Result<Self> {
        if cfg.period == 0 || cfg.noise_var < 0.0 || cfg.target_var < 0.0 {
            return Err(Error::Config("2g: period must be positive and variances nonnegative".into()));
        }
        let grid = box_grid(cfg.cells_per_dim)?;
        let (lo, hi) = unit_box();
        let spec = EnvSpec {
            id: EnvId::TwoG,
            episode_len: cfg.episode_len,
            obs_dim: 2 + grid.len(),
            heads: HeadConfig {
                major: MajorHead::None,
                xi: XiLayout::Continuous {
                    bins: grid.len(),
                    lo,
                    hi,
                },
            },
            grid,
            minor_state_dim: 2,
        };
        Ok(Self { cfg, spec })
    }

    pub fn config(&self) -> &TwoGConfig {
        &self.cfg
    }

    /// Weight of the component centered at `+e₁`.
    pub fn mixture_weight(&self, clock: usize) -> f64 {
        (1.0 + (2.0 * std::f64::consts::PI * clock as f64 / self.cfg.period as f64).cos()) / 2.0
    }

    /// `n` samples from the target mixture at `clock`.
    pub fn sample_target<R: Rng + ?Sized>(&self, clock: usize, n: usize, rng: &mut R) -> SampleCloud {
        let w = self.mixture_weight(clock);
        let s = self.cfg.target_var.sqrt();
        let mut pts = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let cx = if rng.random::<f64>() < w { 1.0 } else { -1.0 };
            pts.push(cx + s * standard_normal(rng));
            pts.push(s * standard_normal(rng));
        }
        SampleCloud::new(2, pts).expect("n ≥ 1")
    }
}

impl Environment for TwoGaussians {
    type State = TwoGState;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut EpisodeRng) -> TwoGState {
        TwoGState {
            t: 0,
            clock: 0,
            minors: uniform_minors(rng),
        }
    }

    fn n_agents(&self, s: &TwoGState) -> usize {
        s.minors.len() / 2
    }

    fn time(&self, s: &TwoGState) -> usize {
        s.t
    }

    fn observe(&self, s: &TwoGState) -> Result<Vec<f64>> {
        let hist = histogram(s.minors.chunks(2), &self.spec.grid)?;
        encode_obs(&self.spec.grid, &clock_encoding(s.clock, self.cfg.period), &hist, &[])
    }

    fn slot(&self, s: &TwoGState, i: usize) -> Result<usize> {
        self.spec.grid.cell_of(&s.minors[2 * i..2 * i + 2])
    }

    fn reward(&self, s: &TwoGState, _major: &MajorAction, rng: &mut ChaCha8Rng) -> Result<f64> {
        let swarm = SampleCloud::new(2, s.minors.clone())?;
        let target = self.sample_target(s.clock, swarm.len(), rng);
        Ok(-ot_cost(&swarm, &target)?)
    }

    fn step(&self, s: &mut TwoGState, _major: &MajorAction, minors: &MinorActions, rng: &mut EpisodeRng) -> Result<()> {
        let n = self.n_agents(s);
        let acts = continuous_actions(minors, n, 2)?;
        move_minors(&mut s.minors, acts, self.cfg.v_max, self.cfg.noise_var.sqrt(), rng);
        s.clock = (s.clock + 1) % self.cfg.period;
        s.t += 1;
        Ok(())
    }

    fn record(&self, s: &TwoGState) -> StateRecord {
        StateRecord {
            t: s.t,
            major: vec![s.clock as f64],
            minors: s.minors.clone(),
        }
    }

    fn restore(&self, r: &StateRecord) -> Result<TwoGState> {
        check_positions(&r.minors)?;
        match r.major.as_slice() {
            [c] if *c >= 0.0 && c.fract() == 0.0 => Ok(TwoGState {
                t: r.t,
                clock: *c as usize,
                minors: r.minors.clone(),
            }),
            _ => Err(Error::Format("2g major record is the clock".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormationConfig {
    pub episode_len: usize,
    pub v_max: f64,
    /// Movement noise variance for minor and major agents.
    pub noise_var: f64,
    /// Per-coordinate variance of the desired formation around the major agent.
    pub formation_var: f64,
    /// Ornstein-Uhlenbeck target: `x* ← N(decay · x*, target_var)`.
    pub target_decay: f64,
    pub target_var: f64,
    pub cells_per_dim: usize,
}

impl Default for FormationConfig {
    fn default() -> Self {
        Self {
            episode_len: 100,
            v_max: 0.2,
            noise_var: 0.0,
            formation_var: 0.3,
            target_decay: 0.95,
            target_var: 0.02,
            cells_per_dim: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormationState {
    pub t: usize,
    pub major: [f64; 2],
    pub target: [f64; 2],
    pub minors: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Formation {
    cfg: FormationConfig,
    spec: EnvSpec,
}

impl Formation {
    pub fn new(cfg: FormationConfig) -> Result<Self> {
        if cfg.noise_var < 0.0 || cfg.formation_var < 0.0 || cfg.target_var < 0.0 {
            return Err(Error::Config("formation: variances must be nonnegative".into()));
        }
        let grid = box_grid(cfg.cells_per_dim)?;
        let (lo, hi) = unit_box();
        let spec = EnvSpec {
            id: EnvId::Formation,
            episode_len: cfg.episode_len,
            obs_dim: 4 + grid.len(),
            heads: HeadConfig {
                major: MajorHead::Gaussian {
                    lo: lo.clone(),
                    hi: hi.clone(),
                },
                xi: XiLayout::Continuous {
                    bins: grid.len(),
                    lo,
                    hi,
                },
            },
            grid,
            minor_state_dim: 2,
        };
        Ok(Self { cfg, spec })
    }

    pub fn config(&self) -> &FormationConfig {
        &self.cfg
    }

    /// `n` samples of the desired formation `N(center, formation_var · I)`.
    pub fn sample_formation<R: Rng + ?Sized>(&self, center: [f64; 2], n: usize, rng: &mut R) -> SampleCloud {
        let s = self.cfg.formation_var.sqrt();
        let pts = (0..n)
            .flat_map(|_| [center[0] + s * standard_normal(rng), center[1] + s * standard_normal(rng)])
            .collect();
        SampleCloud::new(2, pts).expect("n ≥ 1")
    }

    /// One Ornstein-Uhlenbeck step of the target, clipped into the box.
    pub fn next_target<R: Rng + ?Sized>(&self, target: [f64; 2], rng: &mut R) -> [f64; 2] {
        let s = self.cfg.target_var.sqrt();
        let mut out = [0.0; 2];
        for k in 0..2 {
            out[k] = (self.cfg.target_decay * target[k] + s * standard_normal(rng)).clamp(LO[k], HI[k]);
        }
        out
    }
}

impl Environment for Formation {
    type State = FormationState;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut EpisodeRng) -> FormationState {
        let minors = uniform_minors(rng);
        let major = [rng.main.random_range(-2.0..2.0), rng.main.random_range(-2.0..2.0)];
        let s = self.cfg.target_var.sqrt();
        let mut target = [0.0; 2];
        for (k, t) in target.iter_mut().enumerate() {
            *t = (s * standard_normal(&mut rng.main)).clamp(LO[k], HI[k]);
        }
        FormationState {
            t: 0,
            major,
            target,
            minors,
        }
    }

    fn n_agents(&self, s: &FormationState) -> usize {
        s.minors.len() / 2
    }

    fn time(&self, s: &FormationState) -> usize {
        s.t
    }

    fn observe(&self, s: &FormationState) -> Result<Vec<f64>> {
        let hist = histogram(s.minors.chunks(2), &self.spec.grid)?;
        let major: Vec<f64> = s
            .major
            .iter()
            .chain(&s.target)
            .map(|&x| to_unit(x, -2.0, 2.0))
            .collect();
        encode_obs(&self.spec.grid, &major, &hist, &[])
    }

    fn slot(&self, s: &FormationState, i: usize) -> Result<usize> {
        self.spec.grid.cell_of(&s.minors[2 * i..2 * i + 2])
    }

    fn reward(&self, s: &FormationState, _major: &MajorAction, rng: &mut ChaCha8Rng) -> Result<f64> {
        let swarm = SampleCloud::new(2, s.minors.clone())?;
        let target = self.sample_formation(s.major, swarm.len(), rng);
        let gap = ((s.major[0] - s.target[0]).powi(2) + (s.major[1] - s.target[1]).powi(2)).sqrt();
        Ok(-gap - ot_cost(&swarm, &target)?)
    }

    fn step(&self, s: &mut FormationState, major: &MajorAction, minors: &MinorActions, rng: &mut EpisodeRng) -> Result<()> {
        let n = self.n_agents(s);
        let acts = continuous_actions(minors, n, 2)?;
        let u0 = major_vector(major, 2)?;
        let noise = self.cfg.noise_var.sqrt();
        move_minors(&mut s.minors, acts, self.cfg.v_max, noise, rng);
        move_point(&mut s.major, u0, self.cfg.v_max, noise, &LO, &HI, Boundary::Clip, &mut rng.main);
        s.target = self.next_target(s.target, &mut rng.main);
        s.t += 1;
        Ok(())
    }

    fn record(&self, s: &FormationState) -> StateRecord {
        StateRecord {
            t: s.t,
            major: vec![s.major[0], s.major[1], s.target[0], s.target[1]],
            minors: s.minors.clone(),
        }
    }

    fn restore(&self, r: &StateRecord) -> Result<FormationState> {
        check_positions(&r.minors)?;
        match r.major.as_slice() {
            [a, b, c, d] => Ok(FormationState {
                t: r.t,
                major: [*a, *b],
                target: [*c, *d],
                minors: r.minors.clone(),
            }),
            _ => Err(Error::Format("formation major record has 4 entries".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn mixture_weight_schedule() {
        let env = TwoGaussians::new(TwoGConfig::default()).unwrap();
        assert_eq!(env.mixture_weight(0), 1.0);
        assert!(env.mixture_weight(25).abs() < 1e-15);
    }

    #[test]
    fn long_actions_are_normalized() {
        let env = TwoGaussians::new(TwoGConfig {
            noise_var: 0.0,
            ..Default::default()
        })
        .unwrap();
        let mut rng = EpisodeRng::new(1, 1);
        let mut s = TwoGState {
            t: 0,
            clock: 0,
            minors: vec![0.0, 0.0],
        };
        let acts = MinorActions::Continuous {
            dim: 2,
            values: vec![2.0, 0.0],
        };
        env.step(&mut s, &MajorAction::None, &acts, &mut rng).unwrap();
        assert!((s.minors[0] - 0.2).abs() < 1e-15 && s.minors[1] == 0.0);
        assert_eq!(s.clock, 1);
    }

    #[test]
    fn positions_stay_in_box() {
        let env = TwoGaussians::new(TwoGConfig::default()).unwrap();
        let mut rng = EpisodeRng::new(2, 50);
        let mut s = env.reset(&mut rng);
        let acts = MinorActions::Continuous {
            dim: 2,
            values: vec![1.0; 100],
        };
        for _ in 0..40 {
            env.step(&mut s, &MajorAction::None, &acts, &mut rng).unwrap();
        }
        assert!(s.minors.iter().all(|x| (-2.0..=2.0).contains(x)));
    }

    #[test]
    fn formation_reward_vanishes_on_exact_match() {
        let env = Formation::new(FormationConfig::default()).unwrap();
        let mut rng = crate::rng::reward_rng(3, 0);
        let center = [0.4, -0.3];
        let cloud = env.sample_formation(center, 300, &mut rng.clone());
        let s = FormationState {
            t: 0,
            major: center,
            target: center,
            minors: cloud.as_slice().to_vec(),
        };
        assert_eq!(env.reward(&s, &MajorAction::Continuous(vec![0.0, 0.0]), &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn target_mean_decays() {
        let env = Formation::new(FormationConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let t = env.next_target([1.0, 1.0], &mut rng);
            acc[0] += t[0];
            acc[1] += t[1];
        }
        // sd of the mean: sqrt(0.02 / 40000) ≈ 7e-4
        assert!((acc[0] / n as f64 - 0.95).abs() < 4e-3);
        assert!((acc[1] / n as f64 - 0.95).abs() < 4e-3);
    }
}
