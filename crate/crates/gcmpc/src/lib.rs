//! Goal-conditioned model predictive control for a wheeled inverted pendulum:
//! a learned terminal value lets short-horizon MPPI match long-horizon
//! behaviour on flat and sloped terrain.

pub mod config;
pub mod cost;
pub mod experiments;
pub mod goal_planner;
pub mod internal_model;
pub mod mppi;
pub mod oracles;
pub mod plant;
pub mod robot_mpc;
pub mod terrain;
pub mod training;
pub mod value_fn;

pub use cost::CostParams;
pub use internal_model::{InternalModel, InternalModelConfig, InternalState};
pub use mppi::{Backend, MppiConfig, MppiProblem, Plan};
pub use plant::{Control, Disturbance, Observation, PlantParams, PlantState};
pub use robot_mpc::{GoalSequence, RobotProblem};
pub use terrain::TerrainProfile;
pub use value_fn::{GoalVariables, ReplayBuffer, ValueNet};
