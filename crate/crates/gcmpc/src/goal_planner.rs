//! Upper layer: reference trajectory generation (lemniscate, circle, line),
//! random goal sampling for training, Kanayama feedback producing
//! (v_goal, omega_goal), and slope lookahead assembling the per-horizon goal
//! variable sequences.

use crate::terrain::TerrainProfile;
use crate::value_fn::GoalVariables;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("reference parameter {name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("sample interval dt={dt} must lie in (0, T={t})")]
    BadSampleInterval { dt: f64, t: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub omega: f64,
    pub t: f64,
}

/// Componentwise goal bounds; alpha bounds are present only for slope tasks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GoalRanges {
    pub v: (f64, f64),
    pub omega: (f64, f64),
    pub alpha: Option<(f64, f64)>,
}

impl Default for GoalRanges {
    fn default() -> Self {
        Self {
            v: (0.0, 1.0),
            omega: (-1.2, 1.2),
            alpha: None,
        }
    }
}

impl GoalRanges {
    pub fn with_alpha() -> Self {
        Self {
            alpha: Some((-(25f64).to_radians(), (25f64).to_radians())),
            ..Self::default()
        }
    }

    pub fn clamp(&self, g: &GoalVariables) -> GoalVariables {
        GoalVariables {
            v: g.v.clamp(self.v.0, self.v.1),
            omega: g.omega.clamp(self.omega.0, self.omega.1),
            alpha: match (g.alpha, self.alpha) {
                (Some(a), Some((lo, hi))) => Some(a.clamp(lo, hi)),
                (a, _) => a,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct KanayamaGains {
    pub kx: f64,
    pub ky: f64,
    pub kpsi: f64,
}

impl Default for KanayamaGains {
    fn default() -> Self {
        Self {
            kx: 2.0,
            ky: 8.0,
            kpsi: 4.0,
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Figure-eight reference sampled at dt: x = r sin(4 pi t / T),
/// y = r cos(2 pi t / T) - r. Heading comes from the parametric tangent;
/// velocity and yaw rate from forward differences.
pub fn lemniscate(r: f64, period: f64, dt: f64) -> Result<Vec<ReferencePoint>, PlannerError> {
    if r <= 0.0 {
        return Err(PlannerError::NonPositive { name: "r", value: r });
    }
    if period <= 0.0 {
        return Err(PlannerError::NonPositive {
            name: "T",
            value: period,
        });
    }
    if dt <= 0.0 || dt >= period {
        return Err(PlannerError::BadSampleInterval { dt, t: period });
    }
    let pos = |t: f64| {
        let a = 4.0 * std::f64::consts::PI * t / period;
        let b = 2.0 * std::f64::consts::PI * t / period;
        (r * a.sin(), r * b.cos() - r)
    };
    let heading = |t: f64| {
        let a = 4.0 * std::f64::consts::PI * t / period;
        let b = 2.0 * std::f64::consts::PI * t / period;
        let dx = r * 4.0 * std::f64::consts::PI / period * a.cos();
        let dy = -r * 2.0 * std::f64::consts::PI / period * b.sin();
        dy.atan2(dx)
    };
    let n = (period / dt).round() as usize;
    let mut points = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * dt;
        let (x, y) = pos(t);
        let psi = heading(t);
        let (x1, y1) = pos(t + dt);
        let v = ((x1 - x).powi(2) + (y1 - y).powi(2)).sqrt() / dt;
        let omega = wrap_angle(heading(t + dt) - psi) / dt;
        points.push(ReferencePoint {
            x,
            y,
            psi,
            v,
            omega,
            t,
        });
    }
    Ok(points)
}

/// Straight line along the initial heading at constant speed.
pub fn line(length: f64, speed: f64, dt: f64) -> Result<Vec<ReferencePoint>, PlannerError> {
    if length <= 0.0 {
        return Err(PlannerError::NonPositive {
            name: "length",
            value: length,
        });
    }
    if speed <= 0.0 {
        return Err(PlannerError::NonPositive {
            name: "speed",
            value: speed,
        });
    }
    let total = length / speed;
    let n = (total / dt).ceil() as usize;
    Ok((0..=n)
        .map(|k| {
            let t = k as f64 * dt;
            ReferencePoint {
                x: speed * t,
                y: 0.0,
                psi: 0.0,
                v: speed,
                omega: 0.0,
                t,
            }
        })
        .collect())
}

/// Circle of radius rho traversed at constant speed, starting at the origin
/// heading +x.
pub fn circle(rho: f64, speed: f64, period: f64, dt: f64) -> Result<Vec<ReferencePoint>, PlannerError> {
    if rho <= 0.0 {
        return Err(PlannerError::NonPositive { name: "rho", value: rho });
    }
    if speed <= 0.0 {
        return Err(PlannerError::NonPositive { name: "speed", value: speed });
    }
    let omega = speed / rho;
    let n = (period / dt).ceil() as usize;
    Ok((0..=n)
        .map(|k| {
            let t = k as f64 * dt;
            let a = omega * t;
            ReferencePoint {
                x: rho * a.sin(),
                y: rho * (1.0 - a.cos()),
                psi: wrap_angle(a),
                v: speed,
                omega,
                t,
            }
        })
        .collect())
}

/// Uniform goal draw within the configured ranges.
pub fn sample_goal<R: Rng>(rng: &mut R, ranges: &GoalRanges) -> GoalVariables {
    GoalVariables {
        v: rng.gen_range(ranges.v.0..ranges.v.1),
        omega: rng.gen_range(ranges.omega.0..ranges.omega.1),
        alpha: ranges.alpha.map(|(lo, hi)| rng.gen_range(lo..hi)),
    }
}

/// Kanayama posture-tracking law: body-frame error, feedforward plus
/// proportional terms, clamped into the goal ranges so the value function is
/// never queried outside its training distribution.
pub fn kanayama(
    pose: (f64, f64, f64),
    reference: &ReferencePoint,
    gains: &KanayamaGains,
    ranges: &GoalRanges,
) -> (f64, f64) {
    let (x, y, psi) = pose;
    let (dx, dy) = (reference.x - x, reference.y - y);
    let e_x = psi.cos() * dx + psi.sin() * dy;
    let e_y = -psi.sin() * dx + psi.cos() * dy;
    let e_psi = wrap_angle(reference.psi - psi);

    let v_goal = reference.v * e_psi.cos() + gains.kx * e_x;
    let omega_goal = reference.omega + reference.v * (gains.ky * e_y + gains.kpsi * e_psi.sin());
    (
        v_goal.clamp(ranges.v.0, ranges.v.1),
        omega_goal.clamp(ranges.omega.0, ranges.omega.1),
    )
}

/// Looks up the reference point closest to time `t` (points are uniformly
/// sampled). Past the end, the final point is repeated with v = 0.
fn reference_at(traj: &[ReferencePoint], t: f64) -> ReferencePoint {
    let dt = if traj.len() >= 2 {
        traj[1].t - traj[0].t
    } else {
        1.0
    };
    let idx = ((t - traj[0].t) / dt).round().max(0.0) as usize;
    if idx >= traj.len() {
        let mut last = *traj.last().expect("trajectory non-empty");
        last.v = 0.0;
        last.omega = 0.0;
        return last;
    }
    traj[idx]
}

/// Goal variable sequence over the horizon (H+1 entries): Kanayama feedback
/// at the first step, reference feedforward afterwards, with the slope angle
/// taken at the reference positions. `with_alpha` selects the 3-dim goal of
/// slope tasks.
#[allow(clippy::too_many_arguments)]
pub fn plan_goal_sequence(
    pose: (f64, f64, f64),
    t_now: f64,
    traj: &[ReferencePoint],
    terrain: &TerrainProfile,
    horizon: usize,
    dt_int: f64,
    gains: &KanayamaGains,
    ranges: &GoalRanges,
    with_alpha: bool,
) -> Vec<GoalVariables> {
    let mut goals = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let reference = reference_at(traj, t_now + k as f64 * dt_int);
        let (v, omega) = if k == 0 {
            kanayama(pose, &reference, gains, ranges)
        } else {
            (
                reference.v.clamp(ranges.v.0, ranges.v.1),
                reference.omega.clamp(ranges.omega.0, ranges.omega.1),
            )
        };
        let alpha = if with_alpha {
            let raw = terrain.slope_along(reference.x, reference.y, reference.psi);
            let (lo, hi) = ranges.alpha.unwrap_or((-0.44, 0.44));
            Some(raw.clamp(lo, hi))
        } else {
            None
        };
        goals.push(GoalVariables { v, omega, alpha });
    }
    goals
}
