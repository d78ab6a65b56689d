//! Mean-field limit of finite-state models: the deterministic transition
//! operator on mean fields, one-step law-of-large-numbers gaps, and a
//! value-iteration solver over a discretized probability simplex.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{l1_distance, FiniteMF};

const ROW_TOL: f64 = 1e-9;

/// Finite minor/major state and action spaces with mean-field dependent
/// kernels. Major states and actions are indexed `0..n`.
pub trait FiniteModel: Send + Sync {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn n_major_states(&self) -> usize;
    fn n_major_actions(&self) -> usize;
    /// Writes `p(· | x, u, x⁰, u⁰, μ)` into `out` (length `n_states`).
    fn minor_kernel(&self, x: usize, u: usize, x0: usize, u0: usize, mu: &FiniteMF, out: &mut [f64]);
    /// Writes `p⁰(· | x⁰, u⁰, μ)` into `out` (length `n_major_states`).
    fn major_kernel(&self, x0: usize, u0: usize, mu: &FiniteMF, out: &mut [f64]);
    fn mf_reward(&self, x0: usize, u0: usize, mu: &FiniteMF) -> f64;
}

fn check_rule(rule: &[f64], states: usize, actions: usize) -> Result<()> {
    if rule.len() != states * actions {
        return Err(Error::LengthMismatch {
            expected: states * actions,
            got: rule.len(),
        });
    }
    for (row, r) in rule.chunks(actions).enumerate() {
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > ROW_TOL || r.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::RowNotNormalized { row, sum });
        }
    }
    Ok(())
}

/// Next-state law of an agent in state `x` under the rule: `Σ_u π(u|x) p(·|x,u,…)`.
fn next_state_law<M: FiniteModel + ?Sized>(
    model: &M,
    x: usize,
    x0: usize,
    u0: usize,
    mu: &FiniteMF,
    rule: &[f64],
    row: &mut [f64],
    out: &mut [f64],
) -> Result<()> {
    let nu = model.n_actions();
    out.iter_mut().for_each(|v| *v = 0.0);
    for u in 0..nu {
        let pu = rule[x * nu + u];
        if pu == 0.0 {
            continue;
        }
        model.minor_kernel(x, u, x0, u0, mu, row);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_TOL || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::RowNotNormalized { row: x * nu + u, sum });
        }
        for (o, &p) in out.iter_mut().zip(row.iter()) {
            *o += pu * p;
        }
    }
    Ok(())
}

/// `μ'(y) = Σₓ Σᵤ μ(x) π(u|x) p(y | x, u, x⁰, u⁰, μ)`.
pub fn mf_step<M: FiniteModel + ?Sized>(model: &M, x0: usize, u0: usize, mu: &FiniteMF, rule: &[f64]) -> Result<FiniteMF> {
    let nx = model.n_states();
    if mu.len() != nx {
        return Err(Error::SupportMismatch(mu.len(), nx));
    }
    check_rule(rule, nx, model.n_actions())?;
    let mut next = vec![0.0; nx];
    let mut row = vec![0.0; nx];
    let mut law = vec![0.0; nx];
    for x in 0..nx {
        if mu.probs[x] == 0.0 {
            continue;
        }
        next_state_law(model, x, x0, u0, mu, rule, &mut row, &mut law)?;
        for (n, &q) in next.iter_mut().zip(&law) {
            *n += mu.probs[x] * q;
        }
    }
    Ok(FiniteMF { probs: next })
}

/// Splits `n` draws over the categories of `probs`.
pub fn multinomial<R: Rng + ?Sized>(n: usize, probs: &[f64], rng: &mut R) -> Vec<usize> {
    let mut out = vec![0; probs.len()];
    let mut left = n as u64;
    let mut mass: f64 = probs.iter().sum();
    for (k, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == probs.len() || p >= mass {
            out[k] = left as usize;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let b = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        out[k] = b as usize;
        left -= b;
        mass -= p;
    }
    out
}

/// Moves every agent once: agents in state `x` draw their next state from the
/// rule-averaged kernel. Returns the next-state counts.
pub fn sample_step<M: FiniteModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: usize,
    u0: usize,
    counts: &[usize],
    rule: &[f64],
    rng: &mut R,
) -> Result<Vec<usize>> {
    let nx = model.n_states();
    let mu = FiniteMF::from_counts(counts)?;
    check_rule(rule, nx, model.n_actions())?;
    let mut next = vec![0; nx];
    let mut row = vec![0.0; nx];
    let mut law = vec![0.0; nx];
    for x in 0..nx {
        if counts[x] == 0 {
            continue;
        }
        next_state_law(model, x, x0, u0, &mu, rule, &mut row, &mut law)?;
        for (n, c) in next.iter_mut().zip(multinomial(counts[x], &law, rng)) {
            *n += c;
        }
    }
    Ok(next)
}

/// L1 distance between the empirical mean field after one sampled step of the
/// agents in `counts` and the exact operator applied to their empirical
/// mean field.
pub fn lln_gap<M: FiniteModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: usize,
    u0: usize,
    counts: &[usize],
    rule: &[f64],
    rng: &mut R,
) -> Result<f64> {
    let before = FiniteMF::from_counts(counts)?;
    let exact = mf_step(model, x0, u0, &before, rule)?;
    let sampled = FiniteMF::from_counts(&sample_step(model, x0, u0, counts, rule, rng)?)?;
    l1_distance(&sampled, &exact)
}

/// All mean fields on `|X|` states with weights in multiples of `1/K`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexGrid {
    states: usize,
    resolution: usize,
    nodes: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

fn compositions(parts: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if parts == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for k in (0..=total).rev() {
        prefix.push(k);
        compositions(parts - 1, total - k, prefix, out);
        prefix.pop();
    }
}

/// `C(n, k)` in u128, saturating.
pub fn binomial_coeff(n: u64, k: u64) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    acc
}

impl SimplexGrid {
    pub fn new(states: usize, resolution: usize) -> Result<Self> {
        if states == 0 || resolution == 0 {
            return Err(Error::Config("simplex grid needs at least one state and K ≥ 1".into()));
        }
        let size = binomial_coeff((resolution + states - 1) as u64, (states - 1) as u64);
        if size > 10_000_000 {
            return Err(Error::MeshTooLarge {
                size,
                cap: 10_000_000,
            });
        }
        let mut nodes = Vec::with_capacity(size as usize);
        compositions(states, resolution as u32, &mut Vec::new(), &mut nodes);
        let index = nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            states,
            resolution,
            nodes,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Integer weights of node `i` (sum `K`).
    pub fn counts(&self, i: usize) -> &[u32] {
        &self.nodes[i]
    }

    pub fn node(&self, i: usize) -> FiniteMF {
        let k = self.resolution as f64;
        FiniteMF {
            probs: self.nodes[i].iter().map(|&c| c as f64 / k).collect(),
        }
    }

    pub fn index_of(&self, counts: &[u32]) -> Option<usize> {
        self.index.get(counts).copied()
    }

    /// Euclidean-nearest node: floor `K·μ`, then hand the missing units to the
    /// largest remainders (lowest index first on ties).
    pub fn nearest(&self, mu: &FiniteMF) -> usize {
        let k = self.resolution as f64;
        let scaled: Vec<f64> = mu.probs.iter().map(|&p| p * k).collect();
        let mut counts: Vec<u32> = scaled.iter().map(|&s| s.floor().max(0.0) as u32).collect();
        let assigned: u32 = counts.iter().sum();
        let missing = (self.resolution as u32).saturating_sub(assigned) as usize;
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - scaled[a].floor();
            let rb = scaled[b] - scaled[b].floor();
            rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &i in order.iter().take(missing) {
            counts[i] += 1;
        }
        // Over-assignment only happens through round-off in `scaled`.
        let mut excess = counts.iter().sum::<u32>().saturating_sub(self.resolution as u32);
        for &i in order.iter().rev() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
        self.index[&counts]
    }
}

/// Value-iteration settings.
#[derive(Clone, Debug)]
pub struct DppConfig {
    pub gamma: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    /// Upper bound on `|X⁰| · |grid| · |U|^|X| · |U⁰|`.
    pub mesh_cap: u128,
}

impl Default for DppConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tol: 1e-8,
            max_sweeps: 100_000,
            mesh_cap: 20_000_000,
        }
    }
}

/// Optimal values on `(major state, simplex node)`.
#[derive(Clone, Debug)]
pub struct ValueTable {
    pub grid: SimplexGrid,
    pub n_major: usize,
    /// `values[x0 * grid.len() + node]`.
    pub values: Vec<f64>,
    pub gamma: f64,
    /// Sup-norm change of each sweep.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl ValueTable {
    pub fn value(&self, x0: usize, node: usize) -> f64 {
        self.values[x0 * self.grid.len() + node]
    }

    /// Rows `major_state, w0, …, w_{|X|−1}, value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let weights: Vec<String> = (0..self.grid.states()).map(|i| format!("w{i}")).collect();
        writeln!(w, "major_state,{},value", weights.join(","))?;
        for x0 in 0..self.n_major {
            for n in 0..self.grid.len() {
                let mu = self.grid.node(n);
                let ws: Vec<String> = mu.probs.iter().map(|p| format!("{p}")).collect();
                writeln!(w, "{x0},{},{}", ws.join(","), self.value(x0, n))?;
            }
        }
        Ok(())
    }
}

/// Deterministic decision rule number `r`: state `x` plays digit `x` of `r`
/// in base `|U|`.
pub fn rule_actions(r: usize, states: usize, actions: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(states);
    let mut r = r;
    for _ in 0..states {
        v.push(r % actions);
        r /= actions;
    }
    v
}

pub fn rule_matrix(actions_per_state: &[usize], actions: usize) -> Vec<f64> {
    let mut m = vec![0.0; actions_per_state.len() * actions];
    for (x, &u) in actions_per_state.iter().enumerate() {
        m[x * actions + u] = 1.0;
    }
    m
}

/// Bellman data for every `(x⁰, node)` and mesh action `a = rule · |U⁰| + u⁰`.
struct Transitions {
    n_rules: usize,
    n_u0: usize,
    /// Per `(x0, node, u0)`: reward and sparse major kernel.
    reward: Vec<f64>,
    major: Vec<Vec<(usize, f64)>>,
    /// Per `(x0, node, u0, rule)`: projected next node.
    next: Vec<u32>,
}

fn mesh_size<M: FiniteModel + ?Sized>(model: &M, grid: &SimplexGrid) -> u128 {
    let rules = (model.n_actions() as u128).saturating_pow(model.n_states() as u32);
    (model.n_major_states() as u128)
        .saturating_mul(grid.len() as u128)
        .saturating_mul(rules)
        .saturating_mul(model.n_major_actions() as u128)
}

fn build_transitions<M: FiniteModel + ?Sized>(model: &M, grid: &SimplexGrid, cap: u128) -> Result<Transitions> {
    let size = mesh_size(model, grid);
    if size > cap {
        return Err(Error::MeshTooLarge { size, cap });
    }
    if grid.states() != model.n_states() {
        return Err(Error::SupportMismatch(grid.states(), model.n_states()));
    }
    let (nx, nu, n0, nu0) = (model.n_states(), model.n_actions(), model.n_major_states(), model.n_major_actions());
    let n_rules = nu.pow(nx as u32);
    let rules: Vec<Vec<f64>> = (0..n_rules).map(|r| rule_matrix(&rule_actions(r, nx, nu), nu)).collect();
    let cells: Vec<(usize, usize)> = (0..n0).flat_map(|x0| (0..grid.len()).map(move |n| (x0, n))).collect();
    let per_cell: Vec<Result<(Vec<f64>, Vec<Vec<(usize, f64)>>, Vec<u32>)>> = cells
        .par_iter()
        .map(|&(x0, n)| {
            let mu = grid.node(n);
            let mut rewards = Vec::with_capacity(nu0);
            let mut majors = Vec::with_capacity(nu0);
            let mut next = Vec::with_capacity(nu0 * n_rules);
            let mut row = vec![0.0; n0];
            for u0 in 0..nu0 {
                rewards.push(model.mf_reward(x0, u0, &mu));
                model.major_kernel(x0, u0, &mu, &mut row);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_TOL {
                    return Err(Error::RowNotNormalized { row: x0, sum });
                }
                majors.push(row.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, &p)| (i, p)).collect());
                for rule in &rules {
                    let mu2 = mf_step(model, x0, u0, &mu, rule)?;
                    next.push(grid.nearest(&mu2) as u32);
                }
            }
            Ok((rewards, majors, next))
        })
        .collect();
    let mut t = Transitions {
        n_rules,
        n_u0: nu0,
        reward: Vec::with_capacity(cells.len() * nu0),
        major: Vec::with_capacity(cells.len() * nu0),
        next: Vec::with_capacity(cells.len() * nu0 * n_rules),
    };
    for c in per_cell {
        let (r, m, n) = c?;
        t.reward.extend(r);
        t.major.extend(m);
        t.next.extend(n);
    }
    Ok(t)
}

/// Best mesh action and its value at cell `c = x0 · |grid| + node`; ties go to
/// the lowest action index.
fn best_action(t: &Transitions, c: usize, values: &[f64], m: usize, gamma: f64) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for u0 in 0..t.n_u0 {
        let k = c * t.n_u0 + u0;
        let r = t.reward[k];
        let major = &t.major[k];
        let next = &t.next[k * t.n_rules..(k + 1) * t.n_rules];
        for (rule, &nn) in next.iter().enumerate() {
            let mut ev = 0.0;
            for &(x0n, p) in major {
                ev += p * values[x0n * m + nn as usize];
            }
            let q = r + gamma * ev;
            if q > best.1 {
                best = (rule * t.n_u0 + u0, q);
            }
        }
    }
    best
}

/// Jacobi value iteration over all deterministic decision rules and major
/// actions, stopping when a sweep changes no value by more than `tol`.
pub fn value_iteration<M: FiniteModel + ?Sized>(model: &M, grid: &SimplexGrid, cfg: &DppConfig) -> Result<ValueTable> {
    let t = build_transitions(model, grid, cfg.mesh_cap)?;
    let m = grid.len();
    let cells = model.n_major_states() * m;
    let mut values = vec![0.0; cells];
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_sweeps {
        let new: Vec<f64> = (0..cells).into_par_iter().map(|c| best_action(&t, c, &values, m, cfg.gamma).1).collect();
        let res = new.iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        values = new;
        residuals.push(res);
        if res <= cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(ValueTable {
        grid: grid.clone(),
        n_major: model.n_major_states(),
        values,
        gamma: cfg.gamma,
        residuals,
        converged,
    })
}

/// Stationary deterministic M3FC policy read off a value table.
#[derive(Clone, Debug)]
pub struct GreedyPolicy {
    pub grid: SimplexGrid,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_major_actions: usize,
    /// Mesh action per `(x0, node)`.
    pub choice: Vec<usize>,
}

impl GreedyPolicy {
    /// `(per-state minor action, major action)` at `(x⁰, μ)`; `μ` is first
    /// projected onto the grid.
    pub fn act(&self, x0: usize, mu: &FiniteMF) -> (Vec<usize>, usize) {
        let node = self.grid.nearest(mu);
        self.act_node(x0, node)
    }

    pub fn act_node(&self, x0: usize, node: usize) -> (Vec<usize>, usize) {
        let a = self.choice[x0 * self.grid.len() + node];
        (
            rule_actions(a / self.n_major_actions, self.n_states, self.n_actions),
            a % self.n_major_actions,
        )
    }
}

pub fn greedy_policy<M: FiniteModel + ?Sized>(table: &ValueTable, model: &M, cfg: &DppConfig) -> Result<GreedyPolicy> {
    let t = build_transitions(model, &table.grid, cfg.mesh_cap)?;
    let m = table.grid.len();
    let choice = (0..table.n_major * m)
        .into_par_iter()
        .map(|c| best_action(&t, c, &table.values, m, table.gamma).0)
        .collect();
    Ok(GreedyPolicy {
        grid: table.grid.clone(),
        n_states: model.n_states(),
        n_actions: model.n_actions(),
        n_major_actions: model.n_major_actions(),
        choice,
    })
}

/// Discounted return of one finite-system episode simulated on agent counts.
/// `policy` maps `(x⁰, μᴺ)` to a decision rule and a major action.
pub fn simulate_counts<M, P, R>(
    model: &M,
    policy: P,
    x0: usize,
    counts: &[usize],
    gamma: f64,
    horizon: usize,
    rng: &mut R,
) -> Result<f64>
where
    M: FiniteModel + ?Sized,
    P: Fn(usize, &FiniteMF) -> (Vec<f64>, usize),
    R: Rng + ?Sized,
{
    let mut x0 = x0;
    let mut counts = counts.to_vec();
    let mut row = vec![0.0; model.n_major_states()];
    let mut ret = 0.0;
    let mut disc = 1.0;
    for _ in 0..horizon {
        let mu = FiniteMF::from_counts(&counts)?;
        let (rule, u0) = policy(x0, &mu);
        ret += disc * model.mf_reward(x0, u0, &mu);
        disc *= gamma;
        let next = sample_step(model, x0, u0, &counts, &rule, rng)?;
        model.major_kernel(x0, u0, &mu, &mut row);
        x0 = crate::nn::heads::sample_categorical(&row, rng);
        counts = next;
    }
    Ok(ret)
}
