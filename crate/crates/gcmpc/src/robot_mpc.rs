//! Glue between the generic MPPI solver and the robot: internal-model
//! rollouts, per-step goal-conditioned running cost, and the learned
//! terminal value hook.

use crate::cost::{running_cost, CostParams};
use crate::internal_model::{InternalModel, InternalState};
use crate::mppi::{MppiProblem, Plan};
use crate::value_fn::{GoalVariables, ValueFnError, ValueNet};

/// Goals over the horizon: a single constant goal (training) or a
/// time-varying sequence of H+1 entries (inference). Only the last entry
/// feeds the terminal value.
#[derive(Debug, Clone)]
pub enum GoalSequence<'a> {
    Constant(&'a GoalVariables),
    Varying(&'a [GoalVariables]),
}

impl GoalSequence<'_> {
    pub fn at(&self, t: usize) -> &GoalVariables {
        match self {
            GoalSequence::Constant(g) => g,
            GoalSequence::Varying(gs) => &gs[t.min(gs.len() - 1)],
        }
    }

    pub fn last(&self) -> &GoalVariables {
        match self {
            GoalSequence::Constant(g) => g,
            GoalSequence::Varying(gs) => gs.last().expect("goal sequence non-empty"),
        }
    }
}

pub struct RobotProblem<'a> {
    pub model: &'a InternalModel,
    pub cost: &'a CostParams,
    pub goals: GoalSequence<'a>,
    pub value: Option<&'a ValueNet>,
}

impl<'a> RobotProblem<'a> {
    pub fn new(
        model: &'a InternalModel,
        cost: &'a CostParams,
        goals: GoalSequence<'a>,
        value: Option<&'a ValueNet>,
    ) -> Result<Self, ValueFnError> {
        if let Some(net) = value {
            let goal_dim = goals.last().dim();
            if net.goal_dim() != goal_dim {
                return Err(ValueFnError::GoalDimensionMismatch {
                    expected: net.goal_dim(),
                    got: goal_dim,
                });
            }
        }
        Ok(Self {
            model,
            cost,
            goals,
            value,
        })
    }

    /// Warm-start plan that keeps the current forward speed and holds the
    /// nominal leg extension.
    pub fn hold_plan(&self, v: f64, horizon: usize) -> Plan {
        let wheel = v / self.model.plant.wheel_radius;
        Plan::constant(&[wheel, wheel, self.model.plant.leg_nominal], horizon)
    }
}

impl MppiProblem for RobotProblem<'_> {
    type State = InternalState;

    fn control_dim(&self) -> usize {
        3
    }

    fn step(&self, s: &InternalState, u: &[f64], t: usize) -> InternalState {
        let g = self.goals.at(t);
        self.model
            .step(s, crate::plant::Control::from_slice(u), g.alpha_or_zero())
    }

    fn cost(&self, s: &InternalState, u: &[f64], t: usize) -> f64 {
        let g = self.goals.at(t);
        let o = self.model.observe(s, g.alpha_or_zero());
        running_cost(&o, &[u[0], u[1], u[2]], g, self.cost)
    }

    fn terminal_value(&self, s: &InternalState) -> f64 {
        match self.value {
            Some(net) => {
                let g = self.goals.last();
                let o = self.model.observe(s, g.alpha_or_zero());
                let mut input = Vec::with_capacity(net.input_dim());
                input.extend_from_slice(&o.to_array());
                g.write_to(&mut input);
                net.forward_unchecked(&input)
            }
            None => 0.0,
        }
    }

    fn clamp(&self, u: &mut [f64]) {
        let p = &self.model.plant;
        u[0] = u[0].clamp(-p.wheel_speed_max, p.wheel_speed_max);
        u[1] = u[1].clamp(-p.wheel_speed_max, p.wheel_speed_max);
        u[2] = u[2].clamp(p.leg_min, p.leg_max);
    }
}
