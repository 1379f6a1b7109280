//! Ground-truth simulator: a planar wheeled inverted pendulum with a
//! prismatic leg, differential-drive wheels behind first-order lags,
//! disturbance pushes, and fall detection.
//!
//! Integration is semi-implicit Euler at a fine timestep (1 ms by default)
//! so plant fidelity is decoupled from the coarser MPC internal model.

use crate::terrain::TerrainProfile;
use serde::{Deserialize, Serialize};

/// Physical and numerical parameters of the plant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    pub wheel_radius: f64,
    pub track_width: f64,
    pub leg_min: f64,
    pub leg_max: f64,
    pub wheel_lag: f64,
    pub leg_lag: f64,
    pub pitch_damping: f64,
    pub body_mass: f64,
    pub wheel_speed_max: f64,
    pub gravity: f64,
    pub fall_pitch: f64,
    pub min_base_height: f64,
    /// Leg extension used for resets and hold commands.
    pub leg_nominal: f64,
    pub dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            wheel_radius: 0.09,
            track_width: 0.48,
            leg_min: 0.4,
            leg_max: 0.7,
            wheel_lag: 0.05,
            leg_lag: 0.1,
            pitch_damping: 0.5,
            body_mass: 10.0,
            wheel_speed_max: 15.0,
            gravity: 9.81,
            fall_pitch: 0.6,
            min_base_height: 0.3,
            leg_nominal: 0.6,
            dt: 0.001,
        }
    }
}

/// Full simulated robot state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub omega: f64,
    pub theta_p: f64,
    pub theta_dot: f64,
    pub r_leg: f64,
    pub r_dot: f64,
    pub omega_left: f64,
    pub omega_right: f64,
    pub t: f64,
}

impl PlantState {
    /// Upright rest state at the origin with the given leg extension.
    pub fn upright(r_leg: f64) -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            psi: 0.0,
            v: 0.0,
            omega: 0.0,
            theta_p: 0.0,
            theta_dot: 0.0,
            r_leg,
            r_dot: 0.0,
            omega_left: 0.0,
            omega_right: 0.0,
            t: 0.0,
        }
    }

    /// Upright state already cruising at (v, omega), with wheel speeds
    /// consistent with the base twist so there is no lag transient.
    pub fn cruising(p: &PlantParams, r_leg: f64, v: f64, omega: f64) -> Self {
        let half = omega * p.track_width / 2.0;
        let mut s = Self::upright(r_leg);
        s.v = v;
        s.omega = omega;
        s.omega_left = (v - half) / p.wheel_radius;
        s.omega_right = (v + half) / p.wheel_radius;
        s
    }
}

/// Commanded wheel speeds and leg extension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub omega_left_cmd: f64,
    pub omega_right_cmd: f64,
    pub r_cmd: f64,
}

impl Control {
    pub fn hold(r_cmd: f64) -> Self {
        Self {
            omega_left_cmd: 0.0,
            omega_right_cmd: 0.0,
            r_cmd,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.omega_left_cmd, self.omega_right_cmd, self.r_cmd]
    }

    pub fn from_slice(u: &[f64]) -> Self {
        Self {
            omega_left_cmd: u[0],
            omega_right_cmd: u[1],
            r_cmd: u[2],
        }
    }

    pub fn clamped(self, p: &PlantParams) -> Self {
        Self {
            omega_left_cmd: self
                .omega_left_cmd
                .clamp(-p.wheel_speed_max, p.wheel_speed_max),
            omega_right_cmd: self
                .omega_right_cmd
                .clamp(-p.wheel_speed_max, p.wheel_speed_max),
            r_cmd: self.r_cmd.clamp(p.leg_min, p.leg_max),
        }
    }
}

/// Horizontal push applied along -heading for a time window.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Disturbance {
    pub force: f64,
    pub start: f64,
    pub duration: f64,
}

impl Disturbance {
    pub fn active_at(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

/// The 7-value observation fed to the terminal value function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Base height above the axle: r_leg * cos(theta_p).
    pub p_z: f64,
    pub v: f64,
    pub theta_p: f64,
    pub theta_dot: f64,
    pub omega: f64,
    pub r_leg: f64,
    /// Nominal slope at the robot's position and heading (bump-free).
    pub alpha_here: f64,
}

pub const OBS_DIM: usize = 7;

impl Observation {
    pub fn to_array(self) -> [f64; OBS_DIM] {
        [
            self.p_z,
            self.v,
            self.theta_p,
            self.theta_dot,
            self.omega,
            self.r_leg,
            self.alpha_here,
        ]
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

/// Advances the plant by one substep of `p.dt`. Pure function; identical
/// inputs give bitwise-identical outputs.
pub fn step(
    p: &PlantParams,
    s: &PlantState,
    u: Control,
    terrain: &TerrainProfile,
    dist: Option<&Disturbance>,
) -> PlantState {
    let dt = p.dt;
    let u = u.clamped(p);

    // Wheel speeds through first-order lags, then the kinematic map.
    let omega_left = s.omega_left + dt * (u.omega_left_cmd - s.omega_left) / p.wheel_lag;
    let omega_right = s.omega_right + dt * (u.omega_right_cmd - s.omega_right) / p.wheel_lag;
    let v = p.wheel_radius * (omega_left + omega_right) / 2.0;
    let omega = p.wheel_radius * (omega_right - omega_left) / p.track_width;
    let a_base = (v - s.v) / dt;

    // Prismatic leg lag, clamped to its travel.
    let r_dot = (u.r_cmd - s.r_leg) / p.leg_lag;
    let r_leg = (s.r_leg + dt * r_dot).clamp(p.leg_min, p.leg_max);

    // Pitch feels the bump-inclusive incline under the wheels; the nominal
    // slope signal used for conditioning stays bump-free.
    let incline = terrain.effective_incline(s.x, s.y, s.psi, p.track_width / 2.0);
    let a_dist = match dist {
        Some(d) if d.active_at(s.t) => d.force / p.body_mass,
        _ => 0.0,
    };
    let cos_tp = s.theta_p.cos();
    let theta_ddot = (p.gravity * (s.theta_p + incline).sin() - a_base * cos_tp) / s.r_leg
        - p.pitch_damping * s.theta_dot
        + a_dist * cos_tp / s.r_leg;
    let theta_dot = s.theta_dot + dt * theta_ddot;
    let theta_p = wrap_angle(s.theta_p + dt * theta_dot);

    // Planar pose; forward motion projected onto the horizontal plane.
    let alpha_here = terrain.slope_along(s.x, s.y, s.psi);
    let cos_a = alpha_here.cos();
    let x = s.x + dt * v * s.psi.cos() * cos_a;
    let y = s.y + dt * v * s.psi.sin() * cos_a;
    let psi = wrap_angle(s.psi + dt * omega);

    PlantState {
        x,
        y,
        psi,
        v,
        omega,
        theta_p,
        theta_dot,
        r_leg,
        r_dot,
        omega_left,
        omega_right,
        t: s.t + dt,
    }
}

/// True iff the body has tipped past the pitch threshold or the base has
/// dropped below the minimum height.
pub fn is_fallen(p: &PlantParams, s: &PlantState) -> bool {
    s.theta_p.abs() > p.fall_pitch || s.r_leg * s.theta_p.cos() < p.min_base_height
}

pub fn observe(s: &PlantState, terrain: &TerrainProfile) -> Observation {
    Observation {
        p_z: s.r_leg * s.theta_p.cos(),
        // Forward speed of the base (body) point, not the wheel axle: the
        // pendulum swing contributes r_leg * theta_dot * cos(theta_p). At
        // upright steady state the two coincide; while the body is toppling
        // they diverge, which is what makes falls read as tracking failures.
        v: s.v + s.r_leg * s.theta_dot * s.theta_p.cos(),
        theta_p: s.theta_p,
        theta_dot: s.theta_dot,
        omega: s.omega,
        r_leg: s.r_leg,
        alpha_here: terrain.slope_along(s.x, s.y, s.psi),
    }
}
