//! Discrete-torus crowd environments: the 5×5 beach bar process and the
//! 3-cell ring used for exact dynamic programming.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvId, EnvSpec, Environment, MajorAction, MinorActions, StateRecord};
use crate::error::{Error, Result};
use crate::measures::{BinGrid, FiniteMF, MeanFieldHist};
use crate::mf_limit::FiniteModel;
use crate::policy::{encode_obs, one_hot, HeadConfig, MajorHead, XiLayout};
use crate::rng::EpisodeRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TorusConfig {
    /// Side length per axis.
    pub sizes: Vec<usize>,
    pub episode_len: usize,
    /// Probability that the target takes a uniform cardinal step.
    pub target_walk_prob: f64,
    /// Probability that the major agent's move fails and it stays.
    pub major_slip_prob: f64,
    pub w_target: f64,
    pub w_distance: f64,
    pub w_crowd: f64,
    /// Initial target cell.
    pub target_init: usize,
}

impl Default for TorusConfig {
    fn default() -> Self {
        Self::beach()
    }
}

impl TorusConfig {
    pub fn beach() -> Self {
        Self {
            sizes: vec![5, 5],
            episode_len: 200,
            target_walk_prob: 0.2,
            major_slip_prob: 0.0,
            w_target: 0.5,
            w_distance: 2.5,
            w_crowd: 6.25,
            target_init: 0,
        }
    }

    /// 3-cell ring with a static target and a slipping major agent.
    pub fn toy3() -> Self {
        Self {
            sizes: vec![3],
            episode_len: 200,
            target_walk_prob: 0.0,
            major_slip_prob: 0.2,
            ..Self::beach()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TorusState {
    pub t: usize,
    pub major: usize,
    pub target: usize,
    pub minors: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct DiscreteTorus {
    cfg: TorusConfig,
    spec: EnvSpec,
    n_cells: usize,
}

impl DiscreteTorus {
    pub fn new(id: EnvId, cfg: TorusConfig) -> Result<Self> {
        if cfg.sizes.is_empty() || cfg.sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("torus sizes must be positive".into()));
        }
        for p in [cfg.target_walk_prob, cfg.major_slip_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("probabilities must lie in [0, 1]".into()));
            }
        }
        let n_cells: usize = cfg.sizes.iter().product();
        if cfg.target_init >= n_cells {
            return Err(Error::Config("target_init is not a cell".into()));
        }
        let dims = cfg.sizes.len();
        let grid = BinGrid::new(
            vec![0.0; dims],
            cfg.sizes.iter().map(|&s| s as f64).collect(),
            cfg.sizes.clone(),
        )?;
        let n_actions = 2 * dims + 1;
        let spec = EnvSpec {
            id,
            episode_len: cfg.episode_len,
            grid,
            heads: HeadConfig {
                major: MajorHead::Categorical { k: n_actions },
                xi: XiLayout::Finite {
                    states: n_cells,
                    actions: n_actions,
                },
            },
            obs_dim: 2 * cfg.sizes.iter().sum::<usize>() + n_cells,
            minor_state_dim: 1,
        };
        Ok(Self { cfg, spec, n_cells })
    }

    pub fn beach() -> Self {
        Self::new(EnvId::Beach, TorusConfig::beach()).expect("valid defaults")
    }

    pub fn toy3() -> Self {
        Self::new(EnvId::Toy3, TorusConfig::toy3()).expect("valid defaults")
    }

    pub fn config(&self) -> &TorusConfig {
        &self.cfg
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Stay, then `-1` along each axis, then `+1` along each axis.
    pub fn n_moves(&self) -> usize {
        2 * self.cfg.sizes.len() + 1
    }

    pub fn coords(&self, cell: usize) -> Vec<usize> {
        let mut rest = cell;
        let mut out = vec![0; self.cfg.sizes.len()];
        for d in (0..out.len()).rev() {
            out[d] = rest % self.cfg.sizes[d];
            rest /= self.cfg.sizes[d];
        }
        out
    }

    pub fn cell(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.cfg.sizes)
            .fold(0, |acc, (&c, &s)| acc * s + c % s)
    }

    pub fn apply_move(&self, cell: usize, action: usize) -> usize {
        let dims = self.cfg.sizes.len();
        if action == 0 {
            return cell;
        }
        let mut c = self.coords(cell);
        let axis = (action - 1) % dims;
        let s = self.cfg.sizes[axis];
        c[axis] = if action <= dims { (c[axis] + s - 1) % s } else { (c[axis] + 1) % s };
        self.cell(&c)
    }

    /// Wrap-around L1 distance.
    pub fn distance(&self, a: usize, b: usize) -> usize {
        self.coords(a)
            .iter()
            .zip(self.coords(b))
            .zip(&self.cfg.sizes)
            .map(|((&x, y), &s)| {
                let d = x.abs_diff(y);
                d.min(s - d)
            })
            .sum()
    }

    pub fn counts(&self, minors: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_cells];
        for &x in minors {
            c[x] += 1;
        }
        c
    }

    /// `−w_t·d(x̂⁰, x*) − w_d·Σ μ(x) d(x, x̂⁰) − w_c·Σ μ(x)²`.
    pub fn reward_of(&self, major: usize, target: usize, mu: &[f64]) -> f64 {
        let spread: f64 = mu
            .iter()
            .enumerate()
            .map(|(x, &m)| m * self.distance(x, major) as f64)
            .sum();
        let crowd: f64 = mu.iter().map(|m| m * m).sum();
        -self.cfg.w_target * self.distance(major, target) as f64 - self.cfg.w_distance * spread - self.cfg.w_crowd * crowd
    }

    fn major_encoding(&self, state: &TorusState) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.cfg.sizes.iter().sum::<usize>());
        for cell in [state.major, state.target] {
            for (c, &s) in self.coords(cell).iter().zip(&self.cfg.sizes) {
                v.extend(one_hot(*c, s));
            }
        }
        v
    }

    /// Major agent and target transition, drawing from `rng`.
    fn step_major<R: Rng + ?Sized>(&self, state: &mut TorusState, u0: usize, rng: &mut R) {
        let slip: f64 = rng.random();
        if slip >= self.cfg.major_slip_prob {
            state.major = self.apply_move(state.major, u0);
        }
        let walk: f64 = rng.random();
        let dir = rng.random_range(1..self.n_moves());
        if walk < self.cfg.target_walk_prob {
            state.target = self.apply_move(state.target, dir);
        }
    }
}

impl Environment for DiscreteTorus {
    type State = TorusState;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut EpisodeRng) -> TorusState {
        let minors = rng
            .agents
            .iter_mut()
            .map(|r| r.random_range(0..self.n_cells))
            .collect();
        TorusState {
            t: 0,
            major: rng.main.random_range(0..self.n_cells),
            target: self.cfg.target_init,
            minors,
        }
    }

    fn n_agents(&self, s: &TorusState) -> usize {
        s.minors.len()
    }

    fn time(&self, s: &TorusState) -> usize {
        s.t
    }

    fn observe(&self, s: &TorusState) -> Result<Vec<f64>> {
        let hist = MeanFieldHist::from_counts(self.spec.grid.clone(), &self.counts(&s.minors))?;
        encode_obs(&self.spec.grid, &self.major_encoding(s), &hist, &[])
    }

    fn slot(&self, s: &TorusState, i: usize) -> Result<usize> {
        Ok(s.minors[i])
    }

    fn reward(&self, s: &TorusState, _major: &MajorAction, _rng: &mut ChaCha8Rng) -> Result<f64> {
        let mu = FiniteMF::from_counts(&self.counts(&s.minors))?;
        Ok(self.reward_of(s.major, s.target, &mu.probs))
    }

    fn step(&self, s: &mut TorusState, major: &MajorAction, minors: &MinorActions, rng: &mut EpisodeRng) -> Result<()> {
        let k = self.n_moves();
        let MinorActions::Discrete(acts) = minors else {
            return Err(Error::LengthMismatch {
                expected: s.minors.len(),
                got: 0,
            });
        };
        if acts.len() != s.minors.len() {
            return Err(Error::LengthMismatch {
                expected: s.minors.len(),
                got: acts.len(),
            });
        }
        let u0 = match major {
            MajorAction::Discrete(a) => *a,
            _ => return Err(Error::InvalidDiscreteAction { action: usize::MAX, count: k }),
        };
        if let Some(&bad) = acts.iter().chain(std::iter::once(&u0)).find(|&&a| a >= k) {
            return Err(Error::InvalidDiscreteAction { action: bad, count: k });
        }
        for (x, &a) in s.minors.iter_mut().zip(acts) {
            *x = self.apply_move(*x, a);
        }
        self.step_major(s, u0, &mut rng.main);
        s.t += 1;
        Ok(())
    }

    fn record(&self, s: &TorusState) -> StateRecord {
        StateRecord {
            t: s.t,
            major: vec![s.major as f64, s.target as f64],
            minors: s.minors.iter().map(|&x| x as f64).collect(),
        }
    }

    fn restore(&self, r: &StateRecord) -> Result<TorusState> {
        let cell = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < self.n_cells {
                Ok(v as usize)
            } else {
                Err(Error::Format(format!("{v} is not a cell index")))
            }
        };
        if r.major.len() != 2 {
            return Err(Error::Format("torus major record has 2 entries".into()));
        }
        Ok(TorusState {
            t: r.t,
            major: cell(r.major[0])?,
            target: cell(r.major[1])?,
            minors: r.minors.iter().map(|&v| cell(v)).collect::<Result<_>>()?,
        })
    }
}

impl FiniteModel for DiscreteTorus {
    fn n_states(&self) -> usize {
        self.n_cells
    }

    fn n_actions(&self) -> usize {
        self.n_moves()
    }

    /// Major state index `major · |X| + target`.
    fn n_major_states(&self) -> usize {
        self.n_cells * self.n_cells
    }

    fn n_major_actions(&self) -> usize {
        self.n_moves()
    }

    fn minor_kernel(&self, x: usize, u: usize, _x0: usize, _u0: usize, _mu: &FiniteMF, out: &mut [f64]) {
        out.iter_mut().for_each(|p| *p = 0.0);
        out[self.apply_move(x, u)] = 1.0;
    }

    fn major_kernel(&self, x0: usize, u0: usize, _mu: &FiniteMF, out: &mut [f64]) {
        out.iter_mut().for_each(|p| *p = 0.0);
        let (m, g) = (x0 / self.n_cells, x0 % self.n_cells);
        let slip = self.cfg.major_slip_prob;
        let walk = self.cfg.target_walk_prob;
        let n_dirs = (self.n_moves() - 1) as f64;
        for (m2, pm) in [(self.apply_move(m, u0), 1.0 - slip), (m, slip)] {
            if pm == 0.0 {
                continue;
            }
            out[m2 * self.n_cells + g] += pm * (1.0 - walk);
            for d in 1..self.n_moves() {
                out[m2 * self.n_cells + self.apply_move(g, d)] += pm * walk / n_dirs;
            }
        }
    }

    fn mf_reward(&self, x0: usize, _u0: usize, mu: &FiniteMF) -> f64 {
        self.reward_of(x0 / self.n_cells, x0 % self.n_cells, &mu.probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moves_wrap() {
        let b = DiscreteTorus::beach();
        assert_eq!(b.apply_move(b.cell(&[4, 0]), 3), b.cell(&[0, 0]));
        assert_eq!(b.apply_move(b.cell(&[0, 0]), 1), b.cell(&[4, 0]));
        assert_eq!(b.apply_move(b.cell(&[2, 0]), 2), b.cell(&[2, 4]));
        assert_eq!(b.apply_move(b.cell(&[2, 4]), 4), b.cell(&[2, 0]));
        assert_eq!(b.distance(b.cell(&[0, 0]), b.cell(&[3, 0])), 2);
        assert_eq!(b.distance(b.cell(&[0, 0]), b.cell(&[2, 2])), 4);
    }

    #[test]
    fn stacked_reward() {
        let b = DiscreteTorus::beach();
        let c = b.cell(&[1, 3]);
        let s = TorusState {
            t: 0,
            major: c,
            target: c,
            minors: vec![c; 7],
        };
        let mut rng = crate::rng::reward_rng(0, 0);
        assert_eq!(b.reward(&s, &MajorAction::Discrete(0), &mut rng).unwrap(), -6.25);
    }

    #[test]
    fn observation_layout() {
        let b = DiscreteTorus::beach();
        let s = TorusState {
            t: 0,
            major: 0,
            target: 0,
            minors: vec![0, 1],
        };
        let o = b.observe(&s).unwrap();
        assert_eq!(o.len(), 45);
        assert_eq!(&o[..10], &o[10..20]);
        assert_eq!(o[0], 1.0);
        assert_eq!(o[5], 1.0);
        assert_eq!(o[20], 0.5);
        assert_eq!(o[21], 0.5);
    }

    #[test]
    fn invalid_action() {
        let b = DiscreteTorus::beach();
        let mut rng = EpisodeRng::new(0, 2);
        let mut s = b.reset(&mut rng);
        let err = b.step(&mut s, &MajorAction::Discrete(0), &MinorActions::Discrete(vec![0, 5]), &mut rng);
        assert!(matches!(err, Err(Error::InvalidDiscreteAction { action: 5, count: 5 })));
    }

    #[test]
    fn major_kernel_rows_normalized() {
        for env in [DiscreteTorus::beach(), DiscreteTorus::toy3()] {
            let mu = FiniteMF::uniform(env.n_states());
            let mut row = vec![0.0; env.n_major_states()];
            for x0 in 0..env.n_major_states() {
                for u0 in 0..env.n_major_actions() {
                    env.major_kernel(x0, u0, &mu, &mut row);
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
