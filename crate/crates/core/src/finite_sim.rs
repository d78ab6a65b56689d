//! N-agent rollouts: every step the policy sees `(x⁰, μᴺ)`, emits an M3FC
//! action `(u⁰, ξ)`, ξ is decoded into a decision rule and each minor agent
//! samples its own action from it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvConfig, Environment, MajorAction, MinorActions, StateRecord};
use crate::error::{Error, Result};
use crate::nn::heads::sample_categorical;
use crate::nn::PolicyParams;
use crate::policy::{decode_bin, decode_finite, HeadConfig, M3fcAction, XiLayout};
use crate::rng::{derive_seed, reward_rng, EpisodeRng};
use crate::stats::mean_ci;

const TRAIN_TAG: u64 = 0x7472_6169_6e;
const EVAL_TAG: u64 = 0x6576_616c;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    /// One shared ξ sample per step.
    #[default]
    Centralized,
    /// Each minor agent draws its own ξ block from its own stream.
    Decentralized,
}

impl std::str::FromStr for ExecutionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centralized" => Ok(Self::Centralized),
            "decentralized" => Ok(Self::Decentralized),
            _ => Err(Error::Config(format!("unknown execution mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for ExecutionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Centralized => "centralized",
            Self::Decentralized => "decentralized",
        })
    }
}

/// Anything that maps observation rows to action-head parameters and values.
pub trait ActionSource: Sync {
    fn heads(&self) -> &HeadConfig;
    fn outputs(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>>;
    fn values(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>>;
}

impl ActionSource for PolicyParams {
    fn heads(&self) -> &HeadConfig {
        &self.heads
    }

    fn outputs(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.policy_batch(obs)?.0)
    }

    fn values(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.value_batch(obs)?.0.column(0).iter().map(|&v| self.value_norm.denormalize(v)).collect())
    }
}

/// Observation-independent head parameters; used for scripted policies.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantPolicy {
    pub heads: HeadConfig,
    pub out: Vec<f64>,
    pub value: f64,
}

impl ActionSource for ConstantPolicy {
    fn heads(&self) -> &HeadConfig {
        &self.heads
    }

    fn outputs(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut a = Array2::zeros((obs.nrows(), self.out.len()));
        for mut row in a.rows_mut() {
            row.iter_mut().zip(&self.out).for_each(|(r, &o)| *r = o);
        }
        Ok(a)
    }

    fn values(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(vec![self.value; obs.nrows()])
    }
}

/// Contiguous steps of one environment slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    /// Value of the state after the last step. Segments end at the batch edge
    /// or at an episode's time limit; both are truncations.
    pub bootstrap: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryBatch {
    pub obs_dim: usize,
    pub out_dim: usize,
    /// Row-major `len × obs_dim`.
    pub obs: Vec<f64>,
    /// Policy outputs at sampling time, row-major `len × out_dim`.
    pub outs: Vec<f64>,
    pub actions: Vec<M3fcAction>,
    pub logp: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Set on steps that end in a terminal state (none of the shipped
    /// environments has one; time limits split segments instead).
    pub dones: Vec<bool>,
    pub segments: Vec<Segment>,
    /// Undiscounted returns of episodes that finished inside this batch.
    pub episode_returns: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.len(), self.obs_dim), &self.obs).expect("consistent batch")
    }

    pub fn out_row(&self, i: usize) -> &[f64] {
        &self.outs[i * self.out_dim..(i + 1) * self.out_dim]
    }

    fn append(&mut self, other: TrajectoryBatch) {
        let offset = self.len();
        self.obs.extend(other.obs);
        self.outs.extend(other.outs);
        self.actions.extend(other.actions);
        self.logp.extend(other.logp);
        self.rewards.extend(other.rewards);
        self.values.extend(other.values);
        self.dones.extend(other.dones);
        self.segments.extend(other.segments.into_iter().map(|s| Segment {
            start: s.start + offset,
            ..s
        }));
        self.episode_returns.extend(other.episode_returns);
    }
}

/// Squashed ξ block → action for one agent, drawing from `rng`.
fn sample_minor<R: rand::Rng + ?Sized>(heads: &HeadConfig, block: &[f64], rng: &mut R, out: &mut [f64]) -> f64 {
    match &heads.xi {
        XiLayout::Finite { actions, .. } => {
            let rule = decode_finite(block, 1, *actions);
            sample_categorical(&rule, rng) as f64
        }
        XiLayout::Continuous { lo, hi, .. } => {
            decode_bin(block, lo, hi).sample_into(lo, hi, rng, out);
            0.0
        }
    }
}

/// Minor actions for the whole population given the step's policy output and
/// (centralized) action sample.
pub fn minor_actions<E: Environment>(
    env: &E,
    state: &E::State,
    heads: &HeadConfig,
    out: &[f64],
    action: &M3fcAction,
    rng: &mut EpisodeRng,
    mode: ExecutionMode,
    deterministic: bool,
) -> Result<MinorActions> {
    let n = env.n_agents(state);
    let shared: Vec<f64> = match mode {
        ExecutionMode::Centralized => action.xi.iter().map(|z| z.tanh()).collect(),
        ExecutionMode::Decentralized => Vec::new(),
    };
    let finite = matches!(heads.xi, XiLayout::Finite { .. });
    let dim = match &heads.xi {
        XiLayout::Finite { .. } => 1,
        XiLayout::Continuous { lo, .. } => lo.len(),
    };
    let mut idx = Vec::with_capacity(if finite { n } else { 0 });
    let mut vals = vec![0.0; if finite { 0 } else { n * dim }];
    let mut scratch = [0.0; 4];
    for i in 0..n {
        let block = heads.xi.block(env.slot(state, i)?);
        let r = &mut rng.agents[i];
        let a = match mode {
            ExecutionMode::Centralized => sample_minor(heads, &shared[block], r, &mut scratch[..dim]),
            ExecutionMode::Decentralized => {
                let own = heads.sample_xi_block(out, block, r, deterministic)?;
                sample_minor(heads, &own, r, &mut scratch[..dim])
            }
        };
        if finite {
            idx.push(a as usize);
        } else {
            vals[i * dim..(i + 1) * dim].copy_from_slice(&scratch[..dim]);
        }
    }
    Ok(if finite {
        MinorActions::Discrete(idx)
    } else {
        MinorActions::Continuous { dim, values: vals }
    })
}

/// Everything produced by one system step.
pub struct StepOutcome {
    pub action: M3fcAction,
    pub major: MajorAction,
    pub logp: f64,
    pub reward: f64,
}

/// Samples the M3FC action from `out`, evaluates the reward on the current
/// state and advances the system.
pub fn system_step<E: Environment>(
    env: &E,
    state: &mut E::State,
    heads: &HeadConfig,
    out: &[f64],
    rng: &mut EpisodeRng,
    mode: ExecutionMode,
    deterministic: bool,
) -> Result<StepOutcome> {
    let action = heads.sample(out, &mut rng.main, deterministic)?;
    let logp = heads.joint_logprob(out, &action)?;
    let major = heads.major_action(&action);
    let minors = minor_actions(env, state, heads, out, &action, rng, mode, deterministic)?;
    let t = env.time(state);
    let reward = env.reward(state, &major, &mut reward_rng(rng.seed(), t))?;
    env.step(state, &major, &minors, rng)?;
    Ok(StepOutcome {
        action,
        major,
        logp,
        reward,
    })
}

struct Slot<S> {
    state: S,
    rng: EpisodeRng,
    episode: u64,
    ret: f64,
}

/// Lockstep sampler over several independent environment slots. Episodes
/// continue across `collect` calls.
pub struct Sampler<'a, E: Environment> {
    env: &'a E,
    n_agents: usize,
    seed: u64,
    pub mode: ExecutionMode,
    pub deterministic: bool,
    slots: Vec<Slot<E::State>>,
}

impl<'a, E: Environment> Sampler<'a, E> {
    pub fn new(env: &'a E, n_agents: usize, num_envs: usize, seed: u64) -> Result<Self> {
        if n_agents == 0 || num_envs == 0 {
            return Err(Error::Config("need at least one agent and one environment".into()));
        }
        let slots = (0..num_envs)
            .map(|k| {
                let mut rng = EpisodeRng::new(derive_seed(seed, &[TRAIN_TAG, k as u64, 0]), n_agents);
                let state = env.reset(&mut rng);
                Slot {
                    state,
                    rng,
                    episode: 0,
                    ret: 0.0,
                }
            })
            .collect();
        Ok(Self {
            env,
            n_agents,
            seed,
            mode: ExecutionMode::Centralized,
            deterministic: false,
            slots,
        })
    }

    pub fn num_envs(&self) -> usize {
        self.slots.len()
    }

    fn observe_all(&self) -> Result<Array2<f64>> {
        let d = self.env.spec().obs_dim;
        let mut m = Array2::zeros((self.slots.len(), d));
        for (k, s) in self.slots.iter().enumerate() {
            let o = self.env.observe(&s.state)?;
            if o.len() != d {
                return Err(Error::DimMismatch { expected: d, got: o.len() });
            }
            m.row_mut(k).iter_mut().zip(&o).for_each(|(a, b)| *a = *b);
        }
        Ok(m)
    }

    /// `steps` transitions from every slot; the batch holds each slot's steps
    /// contiguously.
    pub fn collect<P: ActionSource + ?Sized>(&mut self, policy: &P, steps: usize) -> Result<TrajectoryBatch> {
        let heads = policy.heads().clone();
        let od = self.env.spec().obs_dim;
        let outd = heads.output_dim();
        let ne = self.slots.len();
        let mut parts: Vec<TrajectoryBatch> = (0..ne)
            .map(|_| TrajectoryBatch {
                obs_dim: od,
                out_dim: outd,
                ..Default::default()
            })
            .collect();
        let episode_len = self.env.spec().episode_len;
        let mut seg_start = vec![0usize; ne];
        for _ in 0..steps {
            let obs = self.observe_all()?;
            let outs = policy.outputs(obs.view())?;
            let values = policy.values(obs.view())?;
            for k in 0..ne {
                let out = outs.row(k).to_vec();
                let slot = &mut self.slots[k];
                let o = system_step(self.env, &mut slot.state, &heads, &out, &mut slot.rng, self.mode, self.deterministic)?;
                let p = &mut parts[k];
                p.obs.extend(obs.row(k).iter());
                p.outs.extend_from_slice(&out);
                p.actions.push(o.action);
                p.logp.push(o.logp);
                p.rewards.push(o.reward);
                p.values.push(values[k]);
                p.dones.push(false);
                slot.ret += o.reward;
                if self.env.time(&slot.state) >= episode_len {
                    // time limit: the segment ends here and bootstraps from the last state
                    let last = Array2::from_shape_vec((1, od), self.env.observe(&slot.state)?).map_err(|_| Error::DimMismatch {
                        expected: od,
                        got: 0,
                    })?;
                    p.segments.push(Segment {
                        start: seg_start[k],
                        len: p.len() - seg_start[k],
                        bootstrap: policy.values(last.view())?[0],
                    });
                    seg_start[k] = p.len();
                    p.episode_returns.push(slot.ret);
                    slot.ret = 0.0;
                    slot.episode += 1;
                    slot.rng = EpisodeRng::new(derive_seed(self.seed, &[TRAIN_TAG, k as u64, slot.episode]), self.n_agents);
                    slot.state = self.env.reset(&mut slot.rng);
                }
            }
        }
        // Bootstrap values for slots cut mid-episode.
        let obs = self.observe_all()?;
        let tail = policy.values(obs.view())?;
        let mut batch = TrajectoryBatch {
            obs_dim: od,
            out_dim: outd,
            ..Default::default()
        };
        for (k, mut p) in parts.into_iter().enumerate() {
            if seg_start[k] < p.len() {
                p.segments.push(Segment {
                    start: seg_start[k],
                    len: p.len() - seg_start[k],
                    bootstrap: tail[k],
                });
            }
            batch.append(p);
        }
        Ok(batch)
    }
}

/// Single-slot rollout of `steps` transitions starting from a fresh episode.
pub fn rollout<E: Environment, P: ActionSource + ?Sized>(
    env: &E,
    policy: &P,
    n_agents: usize,
    steps: usize,
    mode: ExecutionMode,
    seed: u64,
) -> Result<TrajectoryBatch> {
    let mut s = Sampler::new(env, n_agents, 1, seed)?;
    s.mode = mode;
    s.collect(policy, steps)
}

/// Per-episode seed used by [`evaluate_return`] and [`episode_return`].
pub fn eval_episode_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(seed, &[EVAL_TAG, episode as u64])
}

/// Options shared by evaluation entry points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub mode: ExecutionMode,
    pub deterministic: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: ExecutionMode::Centralized,
            deterministic: false,
        }
    }
}

/// Runs one full episode from `rng`, calling `on_step` with the pre-step
/// state, its observation and the outcome. Returns the undiscounted return.
pub fn run_episode<E, P, F>(env: &E, policy: &P, rng: &mut EpisodeRng, opts: EvalOptions, mut on_step: F) -> Result<f64>
where
    E: Environment,
    P: ActionSource + ?Sized,
    F: FnMut(&E::State, &[f64], &StepOutcome),
{
    let mut state = env.reset(rng);
    let heads = policy.heads();
    let mut ret = 0.0;
    let od = env.spec().obs_dim;
    for _ in 0..env.spec().episode_len {
        let obs = env.observe(&state)?;
        let out = policy.outputs(ArrayView2::from_shape((1, od), &obs).map_err(|_| Error::DimMismatch {
            expected: od,
            got: obs.len(),
        })?)?;
        let before = state.clone();
        let o = system_step(env, &mut state, heads, out.row(0).as_slice().unwrap(), rng, opts.mode, opts.deterministic)?;
        on_step(&before, &obs, &o);
        ret += o.reward;
    }
    Ok(ret)
}

pub fn episode_return<E: Environment, P: ActionSource + ?Sized>(
    env: &E,
    policy: &P,
    n_agents: usize,
    seed: u64,
    episode: usize,
    opts: EvalOptions,
) -> Result<f64> {
    let mut rng = EpisodeRng::new(eval_episode_seed(seed, episode), n_agents);
    run_episode(env, policy, &mut rng, opts, |_, _, _| {})
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub mean: f64,
    /// 95% normal-approximation half-width.
    pub ci: f64,
    pub returns: Vec<f64>,
}

impl EvalResult {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let (mean, ci) = mean_ci(&returns);
        Self { mean, ci, returns }
    }
}

/// Mean undiscounted episode return over `episodes` independently seeded
/// episodes; episode `e` is identical for every mode and worker count.
pub fn evaluate_return<E: Environment, P: ActionSource + ?Sized>(
    env: &E,
    policy: &P,
    n_agents: usize,
    episodes: usize,
    seed: u64,
    opts: EvalOptions,
) -> Result<EvalResult> {
    if episodes < 2 {
        return Err(Error::Config("evaluation needs at least two episodes".into()));
    }
    let returns = (0..episodes)
        .into_par_iter()
        .map(|e| episode_return(env, policy, n_agents, seed, e, opts))
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalResult::from_returns(returns))
}

const TRACE_MAGIC: &[u8; 8] = b"M3FCTRCE";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub env: serde_json::Value,
    pub n_agents: usize,
    pub seed: u64,
    pub mode: ExecutionMode,
    pub episodes: usize,
}

/// One logged step: the state before the step and what happened in it.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub episode_seed: u64,
    pub state: StateRecord,
    pub major: Vec<f64>,
    pub reward: f64,
}

fn major_to_vec(a: &MajorAction) -> Vec<f64> {
    match a {
        MajorAction::None => Vec::new(),
        MajorAction::Discrete(i) => vec![*i as f64],
        MajorAction::Continuous(v) => v.clone(),
    }
}

/// Rebuilds the major action from its logged form given the head config.
pub fn major_from_vec(heads: &HeadConfig, v: &[f64]) -> MajorAction {
    use crate::policy::MajorHead;
    match heads.major {
        MajorHead::None => MajorAction::None,
        MajorHead::Categorical { .. } => MajorAction::Discrete(v[0] as usize),
        MajorHead::Gaussian { .. } => MajorAction::Continuous(v.to_vec()),
    }
}

fn put_f64s(buf: &mut Vec<u8>, v: &[f64]) {
    buf.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

impl TraceStep {
    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&self.episode_seed.to_le_bytes());
        b.extend_from_slice(&(self.state.t as u64).to_le_bytes());
        b.extend_from_slice(&self.reward.to_le_bytes());
        put_f64s(&mut b, &self.major);
        put_f64s(&mut b, &self.state.major);
        put_f64s(&mut b, &self.state.minors);
        b
    }

    fn decode(b: &[u8]) -> Result<Self> {
        let bad = || Error::Format("truncated trace record".into());
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = b.get(pos..pos + n).ok_or_else(bad)?;
            pos += n;
            Ok(s)
        };
        let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
        let episode_seed = u64_at(take(8)?);
        let t = u64_at(take(8)?) as usize;
        let reward = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut vecs = Vec::with_capacity(3);
        for _ in 0..3 {
            let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let raw = take(8 * n)?;
            vecs.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect::<Vec<f64>>());
        }
        let minors = vecs.pop().unwrap();
        let major_state = vecs.pop().unwrap();
        let major = vecs.pop().unwrap();
        Ok(Self {
            episode_seed,
            state: StateRecord {
                t,
                major: major_state,
                minors,
            },
            major,
            reward,
        })
    }
}

/// Writes `episodes` evaluation episodes to `path`: magic, u32 header length,
/// JSON header, then u32-length-prefixed step records.
#[allow(clippy::too_many_arguments)]
pub fn dump_episodes<E: Environment, P: ActionSource + ?Sized>(
    env: &E,
    env_config: &EnvConfig,
    policy: &P,
    n_agents: usize,
    episodes: usize,
    seed: u64,
    opts: EvalOptions,
    path: &Path,
) -> Result<usize> {
    let header = TraceHeader {
        env: env_config.to_json(),
        n_agents,
        seed,
        mode: opts.mode,
        episodes,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut body = Vec::new();
    body.extend_from_slice(TRACE_MAGIC);
    body.extend_from_slice(&(json.len() as u32).to_le_bytes());
    body.extend_from_slice(&json);
    let mut count = 0;
    for e in 0..episodes {
        let es = eval_episode_seed(seed, e);
        let mut rng = EpisodeRng::new(es, n_agents);
        run_episode(env, policy, &mut rng, opts, |s, _, o| {
            let rec = TraceStep {
                episode_seed: es,
                state: env.record(s),
                major: major_to_vec(&o.major),
                reward: o.reward,
            }
            .encode();
            body.extend_from_slice(&(rec.len() as u32).to_le_bytes());
            body.extend_from_slice(&rec);
            count += 1;
        })?;
    }
    w.write_all(&body).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(count)
}

pub fn read_trace(path: &Path) -> Result<(TraceHeader, Vec<TraceStep>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(f).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != TRACE_MAGIC {
        return Err(Error::Format("not a trajectory dump".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hbytes = bytes.get(12..12 + hlen).ok_or_else(|| Error::Format("truncated trace header".into()))?;
    let header: TraceHeader = serde_json::from_slice(hbytes).map_err(|e| Error::Format(e.to_string()))?;
    let mut pos = 12 + hlen;
    let mut steps = Vec::new();
    while pos < bytes.len() {
        let len_bytes = bytes.get(pos..pos + 4).ok_or_else(|| Error::Format("truncated record length".into()))?;
        let n = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        let rec = bytes.get(pos + 4..pos + 4 + n).ok_or_else(|| Error::Format("truncated record".into()))?;
        steps.push(TraceStep::decode(rec)?);
        pos += 4 + n;
    }
    Ok((header, steps))
}

/// Recomputes every logged reward from the logged state; returns the number
/// of steps checked and the largest absolute deviation.
pub fn replay_rewards<E: Environment>(env: &E, steps: &[TraceStep]) -> Result<(usize, f64)> {
    let heads = &env.spec().heads;
    let mut worst: f64 = 0.0;
    for s in steps {
        let state = env.restore(&s.state)?;
        let major = major_from_vec(heads, &s.major);
        let r = env.reward(&state, &major, &mut reward_rng(s.episode_seed, s.state.t))?;
        worst = worst.max((r - s.reward).abs());
    }
    Ok((steps.len(), worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{DiscreteTorus, TorusState};
    use crate::policy::MajorHead;

    /// Beach policy whose decision rule puts all but O(ε) mass on "stay".
    pub(crate) fn stay_policy(env: &DiscreteTorus) -> ConstantPolicy {
        let heads = env.spec().heads.clone();
        let (states, actions) = match heads.xi {
            XiLayout::Finite { states, actions } => (states, actions),
            _ => unreachable!(),
        };
        let k = match heads.major {
            MajorHead::Categorical { k } => k,
            _ => unreachable!(),
        };
        let mut out = vec![0.0; heads.output_dim()];
        out[0] = 50.0; // major: stay
        for s in 0..states {
            for a in 0..actions {
                out[k + s * actions + a] = if a == 0 { 40.0 } else { -40.0 };
            }
        }
        for v in out[k + states * actions..].iter_mut() {
            *v = -10.0;
        }
        ConstantPolicy { heads, out, value: 0.0 }
    }

    #[test]
    fn stay_policy_is_a_fixed_point() {
        let env = DiscreteTorus::new(crate::envs::EnvId::Beach, crate::envs::TorusConfig {
            target_walk_prob: 0.0,
            ..crate::envs::TorusConfig::beach()
        })
        .unwrap();
        let p = stay_policy(&env);
        let opts = EvalOptions {
            deterministic: true,
            ..Default::default()
        };
        let mut rng = EpisodeRng::new(3, 10);
        let mut first: Option<TorusState> = None;
        let mut rewards = Vec::new();
        run_episode(&env, &p, &mut rng, opts, |s, _, o| {
            let f = first.get_or_insert_with(|| s.clone());
            assert_eq!((f.major, f.target, &f.minors), (s.major, s.target, &s.minors));
            rewards.push(o.reward);
        })
        .unwrap();
        assert!(rewards.iter().all(|&r| r == rewards[0]));
        let gamma: f64 = 0.99;
        let disc: f64 = rewards.iter().enumerate().map(|(t, r)| gamma.powi(t as i32) * r).sum();
        let closed = rewards[0] * (1.0 - gamma.powi(200)) / (1.0 - gamma);
        assert!((disc - closed).abs() < 1e-9 * closed.abs());
    }

    #[test]
    fn batch_layout() {
        let env = DiscreteTorus::beach();
        let p = stay_policy(&env);
        let mut s = Sampler::new(&env, 4, 3, 1).unwrap();
        let b = s.collect(&p, 250).unwrap();
        assert_eq!(b.len(), 750);
        // each slot: a 200-step episode, then 50 steps of the next
        assert_eq!(b.segments.len(), 6);
        assert_eq!(b.episode_returns.len(), 3);
        let lens: Vec<(usize, usize)> = b.segments.iter().map(|s| (s.start, s.len)).collect();
        assert_eq!(lens, [(0, 200), (200, 50), (250, 200), (450, 50), (500, 200), (700, 50)]);
        assert!(b.dones.iter().all(|d| !d));
        assert!(b.logp.iter().all(|l| l.is_finite()));
    }
}
