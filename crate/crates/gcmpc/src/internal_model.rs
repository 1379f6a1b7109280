//! Surrogate model used inside MPC rollouts: the plant dynamics with the
//! per-wheel lags lumped into a single velocity lag, a constant slope
//! parameter instead of terrain queries, and no bumps or disturbances.
//!
//! `project` / `lift_control` form the adapter seam between plant and
//! internal state; a richer kinematic mapping could be slotted in there.

use crate::plant::{Control, Observation, PlantParams, PlantState};
use serde::{Deserialize, Serialize};

/// Plant state minus the wheel-lag states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InternalState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub omega: f64,
    pub theta_p: f64,
    pub theta_dot: f64,
    pub r_leg: f64,
    pub r_dot: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InternalModelConfig {
    /// Internal integration timestep (5 ms flat task, 2.5 ms comparisons).
    pub dt: f64,
    /// Lumped velocity lag replacing the per-wheel lags.
    pub tau_v: f64,
}

impl Default for InternalModelConfig {
    fn default() -> Self {
        Self { dt: 0.005, tau_v: 0.05 }
    }
}

/// The surrogate dynamics: plant parameters plus the lumped lag.
#[derive(Debug, Clone)]
pub struct InternalModel {
    pub plant: PlantParams,
    pub dt: f64,
    pub tau_v: f64,
}

impl InternalModel {
    pub fn new(plant: PlantParams, cfg: &InternalModelConfig) -> Self {
        Self {
            plant,
            dt: cfg.dt,
            tau_v: cfg.tau_v,
        }
    }

    /// Drops the wheel states, copies the rest.
    pub fn project(s: &PlantState) -> InternalState {
        InternalState {
            x: s.x,
            y: s.y,
            psi: s.psi,
            v: s.v,
            omega: s.omega,
            theta_p: s.theta_p,
            theta_dot: s.theta_dot,
            r_leg: s.r_leg,
            r_dot: s.r_dot,
            t: s.t,
        }
    }

    /// Identity mapping; the explicit adapter seam for richer kinematics.
    pub fn lift_control(u: Control) -> Control {
        u
    }

    /// One internal step under constant slope `alpha`.
    ///
    /// A fallen state is absorbing: the base is on the ground, so the wheels
    /// lose authority and (v, omega) drop to zero while the pose freezes.
    /// Without this, rollouts that tip over would keep tracking the goal
    /// velocity perfectly and a fall would cost less than the transient
    /// tracking error of a recovery maneuver.
    pub fn step(&self, s: &InternalState, u: Control, alpha: f64) -> InternalState {
        if self.is_fallen(s) {
            let mut out = *s;
            out.v = 0.0;
            out.omega = 0.0;
            out.theta_dot = 0.0;
            out.r_dot = 0.0;
            out.t = s.t + self.dt;
            return out;
        }
        let p = &self.plant;
        let dt = self.dt;
        let u = u.clamped(p);

        let v_cmd = p.wheel_radius * (u.omega_left_cmd + u.omega_right_cmd) / 2.0;
        let omega_cmd = p.wheel_radius * (u.omega_right_cmd - u.omega_left_cmd) / p.track_width;
        let v = s.v + dt * (v_cmd - s.v) / self.tau_v;
        let omega = s.omega + dt * (omega_cmd - s.omega) / self.tau_v;
        let a_base = (v - s.v) / dt;

        let r_dot = (u.r_cmd - s.r_leg) / p.leg_lag;
        let r_leg = (s.r_leg + dt * r_dot).clamp(p.leg_min, p.leg_max);

        let cos_tp = s.theta_p.cos();
        let theta_ddot = (p.gravity * (s.theta_p + alpha).sin() - a_base * cos_tp) / s.r_leg
            - p.pitch_damping * s.theta_dot;
        let theta_dot = s.theta_dot + dt * theta_ddot;
        let theta_p = s.theta_p + dt * theta_dot;

        let cos_a = alpha.cos();
        let x = s.x + dt * v * s.psi.cos() * cos_a;
        let y = s.y + dt * v * s.psi.sin() * cos_a;
        let psi = s.psi + dt * omega;

        InternalState {
            x,
            y,
            psi,
            v,
            omega,
            theta_p,
            theta_dot,
            r_leg,
            r_dot,
            t: s.t + dt,
        }
    }

    pub fn observe(&self, s: &InternalState, alpha: f64) -> Observation {
        Observation {
            p_z: s.r_leg * s.theta_p.cos(),
            // Base-point forward speed including the pendulum swing term,
            // mirroring plant::observe.
            v: s.v + s.r_leg * s.theta_dot * s.theta_p.cos(),
            theta_p: s.theta_p,
            theta_dot: s.theta_dot,
            omega: s.omega,
            r_leg: s.r_leg,
            alpha_here: alpha,
        }
    }

    pub fn is_fallen(&self, s: &InternalState) -> bool {
        let p = &self.plant;
        s.theta_p.abs() > p.fall_pitch || s.r_leg * s.theta_p.cos() < p.min_base_height
    }
}
