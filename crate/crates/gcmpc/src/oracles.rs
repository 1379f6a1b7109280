//! Independent reference solvers used to verify the solver and the learned
//! value function on problems with known optima: a discrete-LQR double
//! integrator (Riccati recursion), a two-state chain with an analytic Bellman
//! fixed point, and a quadratic-value regression check.

use crate::mppi::{self, Backend, MppiConfig, MppiProblem, Plan};
use crate::value_fn::{Adam, Normalizer, ValueNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    /// Measured relative error.
    pub measured: f64,
    /// Pass threshold on the relative error.
    pub threshold: f64,
    pub pass: bool,
    pub detail: String,
}

impl OracleReport {
    fn new(name: &str, measured: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            measured,
            threshold,
            pass: measured < threshold,
            detail,
        }
    }
}

type Mat2 = [[f64; 2]; 2];

fn mat_vec(m: &Mat2, v: &[f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

fn quad_form(m: &Mat2, v: &[f64; 2]) -> f64 {
    let mv = mat_vec(m, v);
    v[0] * mv[0] + v[1] * mv[1]
}

/// One backward Riccati step for x' = A x + B u with stage cost
/// x'Qx + r u^2: P <- Q + A'PA - A'PB (r + B'PB)^{-1} B'PA.
fn riccati_step(a: &Mat2, b: &[f64; 2], q: &Mat2, r: f64, p: &Mat2) -> Mat2 {
    // A'PA
    let pa = [
        mat_vec(p, &[a[0][0], a[0][1]]),
        mat_vec(p, &[a[1][0], a[1][1]]),
    ];
    // column i of PA is P * (column i of A)
    let pa_col = |i: usize| mat_vec(p, &[a[0][i], a[1][i]]);
    let (pa0, pa1) = (pa_col(0), pa_col(1));
    let atpa = [
        [
            a[0][0] * pa0[0] + a[1][0] * pa0[1],
            a[0][0] * pa1[0] + a[1][0] * pa1[1],
        ],
        [
            a[0][1] * pa0[0] + a[1][1] * pa0[1],
            a[0][1] * pa1[0] + a[1][1] * pa1[1],
        ],
    ];
    let _ = pa;
    let pb = mat_vec(p, b);
    let btpb = b[0] * pb[0] + b[1] * pb[1];
    // B'PA (row vector)
    let btpa = [
        b[0] * pa0[0] + b[1] * pa0[1],
        b[0] * pa1[0] + b[1] * pa1[1],
    ];
    let s = r + btpb;
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            // A'PB (B'PA)' outer product / s
            let atpb_i = btpa[i];
            out[i][j] = q[i][j] + atpa[i][j] - atpb_i * btpa[j] / s;
        }
    }
    out
}

/// Finite-horizon cost-to-go matrices P_0..P_H for the double integrator.
pub fn riccati_recursion(
    a: &Mat2,
    b: &[f64; 2],
    q: &Mat2,
    r: f64,
    qf: &Mat2,
    horizon: usize,
) -> Vec<Mat2> {
    let mut ps = vec![*qf; horizon + 1];
    for t in (0..horizon).rev() {
        ps[t] = riccati_step(a, b, q, r, &ps[t + 1]);
    }
    ps
}

/// Double integrator with quadratic stage cost and Riccati terminal cost,
/// phrased as an MPPI problem (undiscounted).
struct LqrProblem {
    a: Mat2,
    b: [f64; 2],
    q: Mat2,
    r: f64,
    qf: Mat2,
}

impl MppiProblem for LqrProblem {
    type State = [f64; 2];

    fn control_dim(&self) -> usize {
        1
    }

    fn step(&self, s: &[f64; 2], u: &[f64], _t: usize) -> [f64; 2] {
        let ax = mat_vec(&self.a, s);
        [ax[0] + self.b[0] * u[0], ax[1] + self.b[1] * u[0]]
    }

    fn cost(&self, s: &[f64; 2], u: &[f64], _t: usize) -> f64 {
        quad_form(&self.q, s) + self.r * u[0] * u[0]
    }

    fn terminal_value(&self, s: &[f64; 2]) -> f64 {
        quad_form(&self.qf, s)
    }

    fn clamp(&self, _u: &mut [f64]) {}
}

/// MPPI vs the Riccati optimum on the double integrator: H=20, K=256,
/// warm-start chaining across repeated solves from the same state. Reports
/// the relative cost excess of the best plan found.
pub fn lqr_mppi(backend: Backend) -> OracleReport {
    let dt = 0.1;
    let problem = LqrProblem {
        a: [[1.0, dt], [0.0, 1.0]],
        b: [0.5 * dt * dt, dt],
        q: [[1.0, 0.0], [0.0, 0.1]],
        r: 0.1,
        qf: [[1.0, 0.0], [0.0, 0.1]],
    };
    let horizon = 20;
    let ps = riccati_recursion(&problem.a, &problem.b, &problem.q, problem.r, &problem.qf, horizon);
    let x0 = [1.0, 0.0];
    let optimum = quad_form(&ps[0], &x0);

    let mut cfg = MppiConfig {
        horizon,
        rollouts: 256,
        lambda: 0.05,
        sigma: vec![0.25],
        gamma: 1.0,
        seed: 0,
        iterations: 1,
    };
    let mut warm = Plan::constant(&[0.0], horizon);
    let mut best = f64::INFINITY;
    for iter in 0..120 {
        // Anneal the exploration noise as the plan converges.
        cfg.sigma[0] = (0.25 * 0.96f64.powi(iter)).max(1e-4);
        let (plan, _, _) =
            mppi::solve(&problem, &x0, &warm, &cfg, iter as u64, backend).expect("finite costs");
        let (cost, _) = mppi::evaluate_plan(&problem, &x0, &plan, 1.0);
        if cost < best {
            best = cost;
        }
        warm = plan;
    }
    let rel = (best - optimum) / optimum;
    OracleReport::new(
        "lqr_mppi",
        rel,
        0.05,
        format!("mppi cost {best:.6} vs riccati optimum {optimum:.6}"),
    )
}

/// Two-state chain: in s0, "stay" costs 1 and remains; "go" costs 2 and
/// moves to s1. In s1, "stay" costs 0 and remains; "back" costs 3 and moves
/// to s0. At gamma = 0.9 the Bellman fixed point is V*(s0) = 2, V*(s1) = 0.
pub const CHAIN_GAMMA: f64 = 0.9;
pub const CHAIN_V_STAR: [f64; 2] = [2.0, 0.0];

fn chain_actions(state: usize) -> [(f64, usize); 2] {
    match state {
        0 => [(1.0, 0), (2.0, 1)],
        _ => [(0.0, 1), (3.0, 0)],
    }
}

/// Fitted value iteration on the chain with a small net: each round computes
/// Bellman targets against a frozen snapshot and regresses onto them.
/// Reports sup-norm error relative to ||V*||_inf after `rounds` rounds.
pub fn fitted_vi_chain(rounds: usize, seed: u64) -> OracleReport {
    let mut net = ValueNet::new(1, 0, &[16], Normalizer::identity(1), seed);
    let mut opt = Adam::new(1e-2);
    let inputs: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0]];
    for _ in 0..rounds {
        let snapshot = net.clone();
        let targets: Vec<f64> = (0..2)
            .map(|s| {
                chain_actions(s)
                    .iter()
                    .map(|&(c, s2)| c + CHAIN_GAMMA * snapshot.forward_unchecked(&[s2 as f64]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        for _ in 0..30 {
            let (_, grads) = net.grad_mse(&inputs, &targets);
            opt.step(&mut net, &grads);
        }
    }
    let sup = (0..2)
        .map(|s| (net.forward_unchecked(&[s as f64]) - CHAIN_V_STAR[s]).abs())
        .fold(0.0, f64::max);
    let rel = sup / 2.0;
    OracleReport::new(
        "fitted_vi_chain",
        rel,
        0.05,
        format!(
            "V=[{:.4},{:.4}] vs V*=[2,0]",
            net.forward_unchecked(&[0.0]),
            net.forward_unchecked(&[1.0])
        ),
    )
}

/// Regresses the net onto the converged Riccati quadratic value over sampled
/// states and reports relative RMSE on held-out states.
pub fn fitted_vi_lqr(seed: u64) -> OracleReport {
    let dt = 0.1;
    let a = [[1.0, dt], [0.0, 1.0]];
    let b = [0.5 * dt * dt, dt];
    let q = [[1.0, 0.0], [0.0, 0.1]];
    let r = 0.1;
    // Infinite-horizon P by iterating the recursion to convergence.
    let p = riccati_recursion(&a, &b, &q, r, &q, 2000)[0];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            xs.push(x.to_vec());
            ys.push(quad_form(&p, &x));
        }
        (xs, ys)
    };
    let (train_x, train_y) = draw(256);
    let (test_x, test_y) = draw(128);

    let mut net = ValueNet::new(2, 0, &[32, 32], Normalizer::identity(2), seed ^ 0x5f5f);
    let mut opt = Adam::new(3e-3);
    for _ in 0..3000 {
        let (_, grads) = net.grad_mse(&train_x, &train_y);
        opt.step(&mut net, &grads);
    }
    let mut se = 0.0;
    let mut norm = 0.0;
    for (x, &y) in test_x.iter().zip(&test_y) {
        let pred = net.forward_unchecked(x);
        se += (pred - y) * (pred - y);
        norm += y * y;
    }
    let rel_rmse = (se / norm).sqrt();
    OracleReport::new(
        "fitted_vi_lqr",
        rel_rmse,
        0.10,
        format!("held-out relative RMSE over {} states", test_x.len()),
    )
}
