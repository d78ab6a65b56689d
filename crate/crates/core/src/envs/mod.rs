//! Benchmark major-minor environments behind a common stepping interface.
//!
//! A step at time `t` first evaluates the reward `r(x⁰_t, u⁰_t, μ_t)` on the
//! current state and then applies the minor and major transitions.

mod foraging;
mod potential;
mod swarm;
mod torus;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use foraging::{Area, Foraging, ForagingConfig, ForagingState, MassLedger};
pub use potential::{Potential, PotentialConfig, PotentialState};
pub use swarm::{Formation, FormationConfig, FormationState, TwoGaussians, TwoGConfig, TwoGState};
pub use torus::{DiscreteTorus, TorusConfig, TorusState};

use crate::error::{Error, Result};
use crate::measures::BinGrid;
use crate::policy::HeadConfig;
use crate::rng::EpisodeRng;

#[derive(Clone, Debug, PartialEq)]
pub enum MajorAction {
    None,
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// Actions of all minor agents, in agent order.
#[derive(Clone, Debug, PartialEq)]
pub enum MinorActions {
    Discrete(Vec<usize>),
    /// `values[i * dim..(i + 1) * dim]` is agent `i`'s action.
    Continuous { dim: usize, values: Vec<f64> },
}

impl MinorActions {
    pub fn len(&self) -> usize {
        match self {
            MinorActions::Discrete(v) => v.len(),
            MinorActions::Continuous { dim, values } => values.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvId {
    #[serde(rename = "2g")]
    TwoG,
    #[serde(rename = "formation")]
    Formation,
    #[serde(rename = "beach")]
    Beach,
    #[serde(rename = "foraging")]
    Foraging,
    #[serde(rename = "potential")]
    Potential,
    #[serde(rename = "toy3")]
    Toy3,
}

impl EnvId {
    pub const ALL: [EnvId; 6] = [
        EnvId::TwoG,
        EnvId::Formation,
        EnvId::Beach,
        EnvId::Foraging,
        EnvId::Potential,
        EnvId::Toy3,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EnvId::TwoG => "2g",
            EnvId::Formation => "formation",
            EnvId::Beach => "beach",
            EnvId::Foraging => "foraging",
            EnvId::Potential => "potential",
            EnvId::Toy3 => "toy3",
        }
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown environment `{s}`")))
    }
}

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub id: EnvId,
    pub episode_len: usize,
    /// Cells of the observed histogram (finite environments: the state set).
    pub grid: BinGrid,
    pub heads: HeadConfig,
    pub obs_dim: usize,
    /// Values per minor in a `StateRecord`.
    pub minor_state_dim: usize,
}

/// Flat snapshot of a system state, used by trajectory dumps.
#[derive(Clone, Debug, PartialEq)]
pub struct StateRecord {
    pub t: usize,
    pub major: Vec<f64>,
    pub minors: Vec<f64>,
}

pub trait Environment: Send + Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;

    fn spec(&self) -> &EnvSpec;

    /// Initial state with one minor agent per agent stream of `rng`.
    fn reset(&self, rng: &mut EpisodeRng) -> Self::State;

    fn n_agents(&self, state: &Self::State) -> usize;

    /// Step index within the episode.
    fn time(&self, state: &Self::State) -> usize;

    fn observe(&self, state: &Self::State) -> Result<Vec<f64>>;

    /// Decision-rule slot of agent `i`: its state (finite) or its bin.
    fn slot(&self, state: &Self::State, i: usize) -> Result<usize>;

    fn reward(&self, state: &Self::State, major: &MajorAction, rng: &mut ChaCha8Rng) -> Result<f64>;

    fn step(
        &self,
        state: &mut Self::State,
        major: &MajorAction,
        minors: &MinorActions,
        rng: &mut EpisodeRng,
    ) -> Result<()>;

    fn record(&self, state: &Self::State) -> StateRecord;

    fn restore(&self, record: &StateRecord) -> Result<Self::State>;
}

/// Serializable environment configuration; every field defaults to the
/// published constant for that environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id")]
pub enum EnvConfig {
    #[serde(rename = "2g")]
    TwoG(TwoGConfig),
    #[serde(rename = "formation")]
    Formation(FormationConfig),
    #[serde(rename = "beach")]
    Beach(TorusConfig),
    #[serde(rename = "foraging")]
    Foraging(ForagingConfig),
    #[serde(rename = "potential")]
    Potential(PotentialConfig),
    #[serde(rename = "toy3")]
    Toy3(TorusConfig),
}

impl EnvConfig {
    pub fn default_for(id: EnvId) -> Self {
        match id {
            EnvId::TwoG => EnvConfig::TwoG(TwoGConfig::default()),
            EnvId::Formation => EnvConfig::Formation(FormationConfig::default()),
            EnvId::Beach => EnvConfig::Beach(TorusConfig::beach()),
            EnvId::Foraging => EnvConfig::Foraging(ForagingConfig::default()),
            EnvId::Potential => EnvConfig::Potential(PotentialConfig::default()),
            EnvId::Toy3 => EnvConfig::Toy3(TorusConfig::toy3()),
        }
    }

    pub fn id(&self) -> EnvId {
        match self {
            EnvConfig::TwoG(_) => EnvId::TwoG,
            EnvConfig::Formation(_) => EnvId::Formation,
            EnvConfig::Beach(_) => EnvId::Beach,
            EnvConfig::Foraging(_) => EnvId::Foraging,
            EnvConfig::Potential(_) => EnvId::Potential,
            EnvConfig::Toy3(_) => EnvId::Toy3,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("env configs serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(value.clone()).map_err(|e| Error::Config(format!("environment config: {e}")))
    }

    pub fn build(&self) -> Result<AnyEnv> {
        Ok(match self {
            EnvConfig::TwoG(c) => AnyEnv::TwoG(TwoGaussians::new(c.clone())?),
            EnvConfig::Formation(c) => AnyEnv::Formation(Formation::new(c.clone())?),
            EnvConfig::Beach(c) => AnyEnv::Beach(DiscreteTorus::new(EnvId::Beach, c.clone())?),
            EnvConfig::Foraging(c) => AnyEnv::Foraging(Foraging::new(c.clone())?),
            EnvConfig::Potential(c) => AnyEnv::Potential(Potential::new(c.clone())?),
            EnvConfig::Toy3(c) => AnyEnv::Toy3(DiscreteTorus::new(EnvId::Toy3, c.clone())?),
        })
    }
}

/// Closed set of the shipped environments.
#[derive(Clone, Debug)]
pub enum AnyEnv {
    TwoG(TwoGaussians),
    Formation(Formation),
    Beach(DiscreteTorus),
    Foraging(Foraging),
    Potential(Potential),
    Toy3(DiscreteTorus),
}

/// Runs `$body` with `$e` bound to the concrete environment inside `$env`.
#[macro_export]
macro_rules! with_env {
    ($env:expr, $e:ident => $body:expr) => {
        match $env {
            $crate::envs::AnyEnv::TwoG($e) => $body,
            $crate::envs::AnyEnv::Formation($e) => $body,
            $crate::envs::AnyEnv::Beach($e) => $body,
            $crate::envs::AnyEnv::Foraging($e) => $body,
            $crate::envs::AnyEnv::Potential($e) => $body,
            $crate::envs::AnyEnv::Toy3($e) => $body,
        }
    };
}

impl AnyEnv {
    pub fn spec(&self) -> &EnvSpec {
        with_env!(self, e => e.spec())
    }

    pub fn config(&self) -> EnvConfig {
        match self {
            AnyEnv::TwoG(e) => EnvConfig::TwoG(e.config().clone()),
            AnyEnv::Formation(e) => EnvConfig::Formation(e.config().clone()),
            AnyEnv::Beach(e) => EnvConfig::Beach(e.config().clone()),
            AnyEnv::Foraging(e) => EnvConfig::Foraging(e.config().clone()),
            AnyEnv::Potential(e) => EnvConfig::Potential(e.config().clone()),
            AnyEnv::Toy3(e) => EnvConfig::Toy3(e.config().clone()),
        }
    }
}

/// Boundary handling for continuous positions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Boundary {
    Clip,
    Wrap,
}

/// Clamps each action component into `[-1, 1]` and rescales to unit norm
/// when longer.
pub(crate) fn normalize_action(u: &[f64], out: &mut [f64]) {
    let mut norm2 = 0.0;
    for (o, &v) in out.iter_mut().zip(u) {
        *o = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        norm2 += *o * *o;
    }
    let scale = norm2.sqrt().max(1.0);
    out.iter_mut().for_each(|o| *o /= scale);
}

pub(crate) fn wrap(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let y = lo + (x - lo).rem_euclid(w);
    // rem_euclid can round up to exactly w
    if y >= hi {
        lo
    } else {
        y
    }
}

/// `pos ← pos + v_max · û + noise`, then clipped or wrapped into `[lo, hi]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn move_point<R: Rng + ?Sized>(
    pos: &mut [f64],
    u: &[f64],
    v_max: f64,
    noise_std: f64,
    lo: &[f64],
    hi: &[f64],
    boundary: Boundary,
    rng: &mut R,
) {
    let mut dir = [0.0; 4];
    let d = pos.len();
    normalize_action(u, &mut dir[..d]);
    for k in 0..d {
        let mut x = pos[k] + v_max * dir[k];
        if noise_std > 0.0 {
            x += noise_std * crate::nn::heads::standard_normal(rng);
        }
        pos[k] = match boundary {
            Boundary::Clip => x.clamp(lo[k], hi[k]),
            Boundary::Wrap => wrap(x, lo[k], hi[k]),
        };
    }
}

pub(crate) fn continuous_actions<'a>(minors: &'a MinorActions, n: usize, dim: usize) -> Result<&'a [f64]> {
    match minors {
        MinorActions::Continuous { dim: d, values } if *d == dim && values.len() == n * dim => Ok(values),
        _ => Err(Error::LengthMismatch {
            expected: n * dim,
            got: minors.len() * dim,
        }),
    }
}

pub(crate) fn major_vector(major: &MajorAction, dim: usize) -> Result<&[f64]> {
    match major {
        MajorAction::Continuous(v) if v.len() == dim => Ok(v),
        _ => Err(Error::DimMismatch { expected: dim, got: 0 }),
    }
}
