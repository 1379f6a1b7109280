//! Sampling-based MPC solver (MPPI): perturbs a nominal control sequence
//! with Gaussian noise, rolls out a model over the horizon, and combines the
//! rollouts by min-shifted exponential weighting.
//!
//! Rollouts are independent pure computations. With the `parallel` feature
//! they run on rayon; per-rollout RNG streams are derived from
//! (seed, rollout index), so the result is bitwise identical regardless of
//! the number of workers or backend.

use crate::cost::discounted_cost;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MppiError {
    #[error("all {0} rollouts produced non-finite costs")]
    AllRolloutsNonFinite(usize),
    #[error("warm-start plan length {got} does not match horizon {expected}")]
    WarmStartLength { got: usize, expected: usize },
    #[error("goal sequence length {got} does not match horizon + 1 = {expected}")]
    GoalSequenceLength { got: usize, expected: usize },
}

/// The finite-horizon problem MPPI optimizes: dynamics, per-step cost, and a
/// terminal value hook, all safe for concurrent read-only evaluation.
pub trait MppiProblem: Sync {
    type State: Clone + Send + Sync;

    fn control_dim(&self) -> usize;
    fn step(&self, s: &Self::State, u: &[f64], t: usize) -> Self::State;
    fn cost(&self, s: &Self::State, u: &[f64], t: usize) -> f64;
    fn terminal_value(&self, s: &Self::State) -> f64;
    /// Clamps a control in place; the clamped control is both simulated and
    /// costed.
    fn clamp(&self, u: &mut [f64]);
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MppiConfig {
    /// Horizon in steps.
    pub horizon: usize,
    /// Number of sampled rollouts K.
    pub rollouts: usize,
    /// Softmin temperature.
    pub lambda: f64,
    /// Diagonal noise covariance per control dimension (variances).
    pub sigma: Vec<f64>,
    pub gamma: f64,
    pub seed: u64,
    /// Importance-sampling iterations per solve: each iteration re-samples
    /// around the plan produced by the previous one. One iteration is plain
    /// MPPI; a few chained iterations let the plan accumulate coherent
    /// multi-step corrections that a single batch of i.i.d. noise sequences
    /// is unlikely to contain.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

fn default_iterations() -> usize {
    1
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            horizon: 80,
            rollouts: 30,
            lambda: 5.0,
            sigma: vec![1.0, 1.0, 0.0004],
            gamma: 0.999,
            seed: 0,
            iterations: 1,
        }
    }
}

/// Nominal control sequence over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan(pub Vec<Vec<f64>>);

impl Plan {
    pub fn constant(u: &[f64], horizon: usize) -> Self {
        Plan(vec![u.to_vec(); horizon])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> &[f64] {
        &self.0[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Backend {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Backend::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Backend::Sequential
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveStats {
    pub best_cost: f64,
    pub mean_cost: f64,
    pub effective_sample_size: f64,
    pub wall_time: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic per-rollout stream seed.
fn rollout_seed(seed: u64, rollout: usize) -> u64 {
    splitmix64(seed ^ splitmix64(rollout as u64 + 1))
}

/// Min-shifted exponential weights on the simplex. A uniform shift of the
/// costs leaves the weights exactly unchanged.
pub fn weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    debug_assert!(lambda > 0.0);
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs.iter().map(|&c| (-(c - min) / lambda).exp()).collect();
    let sum: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= sum;
    }
    w
}

/// Receding-horizon shift: drop the first control, repeat the last.
pub fn shift_warm_start(plan: &Plan) -> Plan {
    let mut shifted = plan.0[1..].to_vec();
    shifted.push(plan.0.last().expect("plan must be non-empty").clone());
    Plan(shifted)
}

struct Rollout {
    score: f64,
    noise: Vec<f64>,
}

fn run_rollout<P: MppiProblem>(
    problem: &P,
    x0: &P::State,
    warm: &Plan,
    cfg: &MppiConfig,
    stds: &[f64],
    seed: u64,
    index: usize,
) -> Rollout {
    let dim = problem.control_dim();
    let horizon = cfg.horizon;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rollout_seed(seed, index));
    let mut noise = Vec::with_capacity(horizon * dim);
    for _ in 0..horizon * dim {
        noise.push(0.0);
    }
    for (d, &std) in stds.iter().enumerate() {
        let dist = Normal::new(0.0, std).expect("std is finite and nonnegative");
        for t in 0..horizon {
            noise[t * dim + d] = dist.sample(&mut rng);
        }
    }

    let mut state = x0.clone();
    let mut costs = Vec::with_capacity(horizon);
    let mut u = vec![0.0; dim];
    for t in 0..horizon {
        for d in 0..dim {
            u[d] = warm.0[t][d] + noise[t * dim + d];
        }
        problem.clamp(&mut u);
        costs.push(problem.cost(&state, &u, t));
        state = problem.step(&state, &u, t);
    }
    let terminal = problem.terminal_value(&state);
    let score = discounted_cost(&costs, cfg.gamma, terminal, horizon)
        .expect("lengths match by construction");
    let score = if score.is_finite() { score } else { f64::INFINITY };
    Rollout { score, noise }
}

/// One MPPI solve (`cfg.iterations` chained importance-sampling passes).
/// Deterministic given (inputs, seed); the `seed` argument lets callers
/// derive a fresh stream per control cycle.
pub fn solve<P: MppiProblem>(
    problem: &P,
    x0: &P::State,
    warm: &Plan,
    cfg: &MppiConfig,
    seed: u64,
    backend: Backend,
) -> Result<(Plan, Vec<f64>, SolveStats), MppiError> {
    let start = Instant::now();
    let iterations = cfg.iterations.max(1);
    let mut plan = warm.clone();
    let mut stats = None;
    for iter in 0..iterations {
        let iter_seed = splitmix64(seed ^ splitmix64(0x17e7 + iter as u64));
        let (next, s) = solve_once(problem, x0, &plan, cfg, iter_seed, backend)?;
        plan = next;
        stats = Some(s);
    }
    let mut stats = stats.expect("at least one iteration");
    stats.wall_time = start.elapsed().as_secs_f64();
    let first = plan.first().to_vec();
    Ok((plan, first, stats))
}

/// A single importance-sampling pass around `warm`.
fn solve_once<P: MppiProblem>(
    problem: &P,
    x0: &P::State,
    warm: &Plan,
    cfg: &MppiConfig,
    seed: u64,
    backend: Backend,
) -> Result<(Plan, SolveStats), MppiError> {
    if warm.len() != cfg.horizon {
        return Err(MppiError::WarmStartLength {
            got: warm.len(),
            expected: cfg.horizon,
        });
    }
    let start = Instant::now();
    let dim = problem.control_dim();
    let stds: Vec<f64> = cfg.sigma.iter().map(|&v| v.sqrt()).collect();
    debug_assert_eq!(stds.len(), dim);

    let rollouts: Vec<Rollout> = match backend {
        Backend::Sequential => (0..cfg.rollouts)
            .map(|i| run_rollout(problem, x0, warm, cfg, &stds, seed, i))
            .collect(),
        #[cfg(feature = "parallel")]
        Backend::Parallel => {
            use rayon::prelude::*;
            (0..cfg.rollouts)
                .into_par_iter()
                .map(|i| run_rollout(problem, x0, warm, cfg, &stds, seed, i))
                .collect()
        }
    };

    let scores: Vec<f64> = rollouts.iter().map(|r| r.score).collect();
    if scores.iter().all(|s| !s.is_finite()) {
        return Err(MppiError::AllRolloutsNonFinite(cfg.rollouts));
    }
    let w = weights(&scores, cfg.lambda);

    // Single-writer reduction over the rollouts, in index order.
    let mut plan = warm.clone();
    for (rollout, &wi) in rollouts.iter().zip(&w) {
        if wi == 0.0 {
            continue;
        }
        for t in 0..cfg.horizon {
            for d in 0..dim {
                plan.0[t][d] += wi * rollout.noise[t * dim + d];
            }
        }
    }
    for u in &mut plan.0 {
        problem.clamp(u);
    }

    let finite: Vec<f64> = scores.iter().cloned().filter(|s| s.is_finite()).collect();
    let stats = SolveStats {
        best_cost: finite.iter().cloned().fold(f64::INFINITY, f64::min),
        mean_cost: finite.iter().sum::<f64>() / finite.len() as f64,
        effective_sample_size: 1.0 / w.iter().map(|wi| wi * wi).sum::<f64>(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((plan, stats))
}

/// Rolls a plan out noise-free and returns its discounted cost and the
/// terminal state. Used for target computation and oracle comparisons.
pub fn evaluate_plan<P: MppiProblem>(
    problem: &P,
    x0: &P::State,
    plan: &Plan,
    gamma: f64,
) -> (f64, P::State) {
    let dim = problem.control_dim();
    let mut state = x0.clone();
    let mut costs = Vec::with_capacity(plan.len());
    let mut u = vec![0.0; dim];
    for (t, step_u) in plan.0.iter().enumerate() {
        u.copy_from_slice(step_u);
        problem.clamp(&mut u);
        costs.push(problem.cost(&state, &u, t));
        state = problem.step(&state, &u, t);
    }
    let terminal = problem.terminal_value(&state);
    let cost = discounted_cost(&costs, gamma, terminal, plan.len())
        .expect("lengths match by construction");
    (cost, state)
}
