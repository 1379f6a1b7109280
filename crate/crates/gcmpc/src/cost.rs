//! Running cost for the lower-level MPC: bounded distance kernels on the
//! velocity and yaw-rate tracking errors, a fall indicator on the predicted
//! base height, and a quadratic control cost metered by the MPPI noise
//! covariance. Discounted accumulation adds the terminal value at gamma^H.

use crate::plant::Observation;
use crate::value_fn::GoalVariables;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("kernel sharpness beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("cost sequence length {got} does not match horizon {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub w_v: f64,
    pub w_omega: f64,
    pub w_fall: f64,
    pub beta_v: f64,
    pub beta_omega: f64,
    pub z_th: f64,
    /// Diagonal control-cost metric (u' Sigma^-1 u), scaled so each actuator
    /// contributes O(1) at its operating range. Kept separate from the MPPI
    /// exploration covariance: the leg command's operating point (~0.3 m) is
    /// far from zero, so metering it by the small exploration variance would
    /// dominate the tracking terms and pin the leg at its lower limit.
    pub sigma: [f64; 3],
    pub gamma: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            w_v: 10.0,
            w_omega: 5.0,
            w_fall: 3.0,
            beta_v: 5.0,
            beta_omega: 5.0,
            // Fires near the plant's fall pitch at nominal leg extension
            // (0.6 * cos 0.6 ~= 0.50) so rollouts see falls as they happen.
            z_th: 0.5,
            sigma: [225.0, 225.0, 100.0],
            // Per internal-model step; ~1 s effective lookahead at 5 ms.
            gamma: 0.995,
        }
    }
}

/// Bounded distance kernel 1 - exp(-beta * (a - b)^2), in [0, 1).
pub fn kernel_d(a: f64, b: f64, beta: f64) -> Result<f64, CostError> {
    if beta <= 0.0 {
        return Err(CostError::NonPositiveBeta(beta));
    }
    Ok(kernel_d_unchecked(a, b, beta))
}

#[inline]
pub(crate) fn kernel_d_unchecked(a: f64, b: f64, beta: f64) -> f64 {
    1.0 - (-beta * (a - b) * (a - b)).exp()
}

/// Per-step running cost. `u` is the (already clamped) control as
/// [omega_left_cmd, omega_right_cmd, r_cmd].
pub fn running_cost(o: &Observation, u: &[f64; 3], g: &GoalVariables, p: &CostParams) -> f64 {
    let mut c = p.w_v * kernel_d_unchecked(o.v, g.v, p.beta_v)
        + p.w_omega * kernel_d_unchecked(o.omega, g.omega, p.beta_omega);
    if o.p_z < p.z_th {
        c += p.w_fall;
    }
    for (ui, si) in u.iter().zip(&p.sigma) {
        c += ui * ui / si;
    }
    c
}

/// Sum of gamma^t * costs[t] plus gamma^H * terminal_value.
pub fn discounted_cost(
    costs: &[f64],
    gamma: f64,
    terminal_value: f64,
    horizon: usize,
) -> Result<f64, CostError> {
    if costs.len() != horizon {
        return Err(CostError::LengthMismatch {
            got: costs.len(),
            expected: horizon,
        });
    }
    let mut total = 0.0;
    let mut discount = 1.0;
    for &c in costs {
        total += discount * c;
        discount *= gamma;
    }
    Ok(total + discount * terminal_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn obs(v: f64, omega: f64, p_z: f64) -> Observation {
        Observation {
            p_z,
            v,
            theta_p: 0.0,
            theta_dot: 0.0,
            omega,
            r_leg: 0.3,
            alpha_here: 0.0,
        }
    }

    #[test]
    fn kernel_basics() {
        assert_eq!(kernel_d(0.5, 0.5, 5.0).unwrap(), 0.0);
        assert_relative_eq!(kernel_d(0.0, 1.0, 5.0).unwrap(), 0.993262, max_relative = 1e-5);
        assert!(kernel_d(1.0, 2.0, 0.0).is_err());
        assert!(kernel_d(1.0, 2.0, -3.0).is_err());
    }

    #[test]
    fn running_cost_perfect_tracking_is_zero() {
        let p = CostParams::default();
        let g = GoalVariables::new(0.6, 0.4, None);
        let c = running_cost(&obs(0.6, 0.4, 0.55), &[0.0; 3], &g, &p);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn running_cost_velocity_error_hand_evaluated() {
        let p = CostParams::default();
        let g = GoalVariables::new(0.6, 0.0, None);
        let c = running_cost(&obs(0.0, 0.0, 0.55), &[0.0; 3], &g, &p);
        assert_relative_eq!(c, 8.347011, max_relative = 1e-5);
    }

    #[test]
    fn running_cost_coefficients_extractable() {
        // Saturate each kernel in turn and read back the paper's weights.
        let p = CostParams {
            beta_v: 1e9,
            beta_omega: 1e9,
            ..CostParams::default()
        };
        let g = GoalVariables::new(0.5, 0.0, None);
        let cv = running_cost(&obs(-10.0, 0.0, 0.55), &[0.0; 3], &g, &p);
        assert_relative_eq!(cv, 10.0, max_relative = 1e-9);
        let cw = running_cost(&obs(0.5, 10.0, 0.55), &[0.0; 3], &g, &p);
        assert_relative_eq!(cw, 5.0, max_relative = 1e-9);
        let cf = running_cost(&obs(0.5, 0.0, 0.0), &[0.0; 3], &g, &p);
        assert_relative_eq!(cf, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn control_cost_quadratic_form() {
        let p = CostParams {
            sigma: [1.0, 1.0, 0.0004],
            ..CostParams::default()
        };
        let g = GoalVariables::new(0.5, 0.0, None);
        let base = running_cost(&obs(0.5, 0.0, 0.55), &[0.0; 3], &g, &p);
        assert_eq!(base, 0.0);
        let c = running_cost(&obs(0.5, 0.0, 0.55), &[2.0, -1.0, 0.02], &g, &p);
        assert_relative_eq!(c, 4.0 + 1.0 + 0.0004 / 0.0004, max_relative = 1e-12);
    }

    #[test]
    fn discounted_cost_examples() {
        assert_eq!(discounted_cost(&[0.0; 4], 0.9, 0.0, 4).unwrap(), 0.0);
        assert_eq!(discounted_cost(&[1.0, 2.0, 3.0], 1.0, 4.0, 3).unwrap(), 10.0);
        assert_relative_eq!(
            discounted_cost(&[1.0, 1.0, 1.0], 0.9, 2.0, 3).unwrap(),
            4.168,
            max_relative = 1e-12
        );
        assert!(discounted_cost(&[1.0, 1.0], 0.9, 0.0, 3).is_err());
    }

    #[test]
    fn discounted_cost_linear_in_terminal_with_slope_gamma_h() {
        let costs = [0.3, 1.7, 0.0, 2.2, 0.9];
        let gamma: f64 = 0.95;
        let a = discounted_cost(&costs, gamma, 0.0, 5).unwrap();
        let b = discounted_cost(&costs, gamma, 1.0, 5).unwrap();
        assert_relative_eq!(b - a, gamma.powi(5), max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn kernel_symmetric_and_bounded(a in -10f64..10.0, b in -10f64..10.0, beta in 0.01f64..50.0) {
            let d_ab = kernel_d(a, b, beta).unwrap();
            let d_ba = kernel_d(b, a, beta).unwrap();
            prop_assert_eq!(d_ab, d_ba);
            // exp(-beta (a-b)^2) can underflow to 0, making d exactly 1.
            prop_assert!((0.0..=1.0).contains(&d_ab));
        }

        #[test]
        fn kernel_monotone_in_distance(a in -5f64..5.0, d1 in 0f64..5.0, d2 in 0f64..5.0) {
            prop_assume!(d1 < d2);
            let near = kernel_d(a, a + d1, 5.0).unwrap();
            let far = kernel_d(a, a + d2, 5.0).unwrap();
            prop_assert!(near <= far);
        }

        #[test]
        fn running_cost_bounded(v in -2f64..2.0, w in -2f64..2.0, pz in 0f64..0.4,
                                u0 in -15f64..15.0, u1 in -15f64..15.0, u2 in 0.15f64..0.35) {
            let p = CostParams::default();
            let g = GoalVariables::new(0.5, 0.3, None);
            let u = [u0, u1, u2];
            let c = running_cost(&obs(v, w, pz), &u, &g, &p);
            let quad: f64 = u.iter().zip(&p.sigma).map(|(ui, si)| ui * ui / si).sum();
            prop_assert!(c >= 0.0);
            prop_assert!(c <= p.w_v + p.w_omega + p.w_fall + quad + 1e-12);
        }
    }
}
