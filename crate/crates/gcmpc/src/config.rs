//! Single JSON configuration document covering every layer, with field-path
//! validation and resolved-config output for reproducibility.

use crate::cost::CostParams;
use crate::goal_planner::{GoalRanges, KanayamaGains};
use crate::internal_model::InternalModelConfig;
use crate::mppi::MppiConfig;
use crate::plant::PlantParams;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {field} = {value} outside valid interval {interval}")]
    OutOfRange {
        field: &'static str,
        value: String,
        interval: &'static str,
    },
    #[error("invalid config: {field}: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
}

/// MPPI section with the horizon in seconds; steps are derived from the
/// internal-model timestep at use sites.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MppiSection {
    pub horizon_s: f64,
    pub rollouts: usize,
    pub lambda: f64,
    pub sigma: [f64; 3],
    pub gamma: f64,
    pub seed: u64,
    /// Importance-sampling iterations per control-cycle solve.
    pub iterations: usize,
}

impl Default for MppiSection {
    fn default() -> Self {
        Self {
            horizon_s: 0.4,
            rollouts: 30,
            lambda: 5.0,
            sigma: [1.0, 1.0, 0.0004],
            gamma: 0.999,
            seed: 0,
            iterations: 2,
        }
    }
}

impl MppiSection {
    /// Convert to step-based solver config at the given internal timestep.
    pub fn resolve(&self, dt_int: f64) -> MppiConfig {
        MppiConfig {
            horizon: (self.horizon_s / dt_int).round().max(1.0) as usize,
            rollouts: self.rollouts,
            lambda: self.lambda,
            sigma: self.sigma.to_vec(),
            gamma: self.gamma,
            seed: self.seed,
            iterations: self.iterations,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueSection {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub replay_capacity: usize,
}

impl Default for ValueSection {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            replay_capacity: 50_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub episodes: usize,
    /// Episode timeout in seconds.
    pub episode_length: f64,
    /// Control cycle in seconds.
    pub control_cycle: f64,
    /// Value update frequency Z in environment steps.
    pub update_every: usize,
    /// Gradient steps G per update.
    pub gradient_steps: usize,
    /// Mini-batch size n.
    pub batch_size: usize,
    pub dr_enabled: bool,
    /// Maximum bump height for domain randomization, m.
    pub bump_height_max: f64,
    pub bump_tile_size: f64,
    pub goal_ranges: GoalRanges,
    pub pitch_jitter_std: f64,
    pub seed: u64,
    /// Evaluation grid (alpha in degrees, converted at use).
    pub eval_v: Vec<f64>,
    pub eval_omega: Vec<f64>,
    pub eval_alpha_deg: Vec<f64>,
    pub eval_seeds: Vec<u64>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            episodes: 150,
            episode_length: 10.0,
            control_cycle: 0.01,
            update_every: 400,
            gradient_steps: 50,
            batch_size: 256,
            dr_enabled: false,
            bump_height_max: 0.025,
            bump_tile_size: 0.2,
            goal_ranges: GoalRanges::default(),
            pitch_jitter_std: 0.02,
            seed: 0,
            eval_v: vec![0.2, 0.4, 0.6, 0.8],
            eval_omega: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            eval_alpha_deg: vec![-20.0, -10.0, 0.0, 10.0, 20.0],
            eval_seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceShape {
    Lemniscate,
    Circle,
    Line,
    Point,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    pub shape: ReferenceShape,
    /// Lemniscate size parameter, m.
    pub r: f64,
    /// Lemniscate / circle period, s.
    pub t: f64,
    /// Line length, m.
    pub length: f64,
    /// Line / circle speed, m/s.
    pub speed: f64,
    /// Circle radius, m.
    pub rho: f64,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            shape: ReferenceShape::Lemniscate,
            r: 1.5,
            t: 40.0,
            length: 8.0,
            speed: 0.5,
            rho: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainKind {
    Flat,
    Slope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainSection {
    pub kind: TerrainKind,
    /// Slope angle in degrees for slope terrains.
    pub slope_deg: f64,
}

impl Default for TerrainSection {
    fn default() -> Self {
        Self {
            kind: TerrainKind::Flat,
            slope_deg: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Flat,
    Slope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ProposedShdr,
    ProposedSh,
    MpcSh,
    MpcLh,
}

impl Method {
    pub fn all() -> [Method; 4] {
        [
            Method::ProposedShdr,
            Method::ProposedSh,
            Method::MpcSh,
            Method::MpcLh,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::ProposedShdr => "proposed_shdr",
            Method::ProposedSh => "proposed_sh",
            Method::MpcSh => "mpc_sh",
            Method::MpcLh => "mpc_lh",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "proposed_shdr" => Some(Method::ProposedShdr),
            "proposed_sh" => Some(Method::ProposedSh),
            "mpc_sh" => Some(Method::MpcSh),
            "mpc_lh" => Some(Method::MpcLh),
            _ => None,
        }
    }

    /// Per-method horizon (s) and rollout count. The long horizon is set by
    /// this plant's pitch time constant: 0.8 s is the shortest horizon at
    /// which value-free MPC keeps the robot upright.
    pub fn mppi_params(&self) -> (f64, usize) {
        match self {
            Method::MpcLh => (0.8, 35),
            _ => (0.4, 30),
        }
    }

    pub fn uses_value(&self) -> bool {
        matches!(self, Method::ProposedShdr | Method::ProposedSh)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PushSection {
    /// Applied force in N; 0 triggers calibration.
    pub force: f64,
    pub duration: f64,
    pub horizons_s: Vec<f64>,
    pub trials: usize,
}

impl Default for PushSection {
    fn default() -> Self {
        Self {
            force: 0.0,
            duration: 2.0,
            horizons_s: vec![0.4, 0.24],
            trials: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub task: Task,
    pub trials: usize,
    pub control_cycle: f64,
    /// Internal-model timestep for the comparison task, s.
    pub dt_int: f64,
    pub seed: u64,
    pub push: PushSection,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            task: Task::Slope,
            trials: 10,
            control_cycle: 0.01,
            dt_int: 0.0025,
            seed: 0,
            push: PushSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub plant: PlantParams,
    pub internal_model: InternalModelConfig,
    pub cost: CostParams,
    pub mppi: MppiSection,
    pub value: ValueSection,
    pub training: TrainingSection,
    pub reference: ReferenceSection,
    pub kanayama: KanayamaGains,
    pub terrain: TerrainSection,
    pub experiment: ExperimentSection,
}

fn check_interval(
    field: &'static str,
    value: f64,
    interval: &'static str,
    ok: bool,
) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            field,
            value: format!("{value}"),
            interval,
        })
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.cost;
        check_interval("cost.gamma", c.gamma, "(0, 1)", c.gamma > 0.0 && c.gamma < 1.0)?;
        check_interval("cost.beta_v", c.beta_v, "(0, inf)", c.beta_v > 0.0)?;
        check_interval("cost.beta_omega", c.beta_omega, "(0, inf)", c.beta_omega > 0.0)?;
        for (i, &s) in c.sigma.iter().enumerate() {
            if s <= 0.0 {
                return Err(ConfigError::Invalid {
                    field: "cost.sigma",
                    message: format!("entry {i} = {s} must be positive"),
                });
            }
        }
        let m = &self.mppi;
        check_interval("mppi.horizon_s", m.horizon_s, "(0, inf)", m.horizon_s > 0.0)?;
        check_interval("mppi.lambda", m.lambda, "(0, inf)", m.lambda > 0.0)?;
        check_interval("mppi.gamma", m.gamma, "(0, 1]", m.gamma > 0.0 && m.gamma <= 1.0)?;
        check_interval(
            "mppi.rollouts",
            m.rollouts as f64,
            "[1, inf)",
            m.rollouts >= 1,
        )?;
        for (i, &s) in m.sigma.iter().enumerate() {
            if s <= 0.0 {
                return Err(ConfigError::Invalid {
                    field: "mppi.sigma",
                    message: format!("entry {i} = {s} must be positive"),
                });
            }
        }
        let im = &self.internal_model;
        check_interval("internal_model.dt", im.dt, "(0, 0.1]", im.dt > 0.0 && im.dt <= 0.1)?;
        check_interval("internal_model.tau_v", im.tau_v, "(0, inf)", im.tau_v > 0.0)?;
        let p = &self.plant;
        check_interval("plant.dt", p.dt, "(0, 0.01]", p.dt > 0.0 && p.dt <= 0.01)?;
        check_interval("plant.wheel_radius", p.wheel_radius, "(0, inf)", p.wheel_radius > 0.0)?;
        if p.leg_min >= p.leg_max {
            return Err(ConfigError::Invalid {
                field: "plant.leg_min",
                message: format!("leg_min {} must be < leg_max {}", p.leg_min, p.leg_max),
            });
        }
        let t = &self.training;
        check_interval("training.episode_length", t.episode_length, "(0, inf)", t.episode_length > 0.0)?;
        check_interval(
            "training.control_cycle",
            t.control_cycle,
            "[plant.dt, 1]",
            t.control_cycle >= p.dt && t.control_cycle <= 1.0,
        )?;
        check_interval(
            "training.update_every",
            t.update_every as f64,
            "[1, inf)",
            t.update_every >= 1,
        )?;
        if t.batch_size == 0 || t.batch_size > self.value.replay_capacity {
            return Err(ConfigError::Invalid {
                field: "training.batch_size",
                message: format!(
                    "{} must be in [1, value.replay_capacity = {}]",
                    t.batch_size, self.value.replay_capacity
                ),
            });
        }
        let gr = &t.goal_ranges;
        if gr.v.0 >= gr.v.1 || gr.omega.0 >= gr.omega.1 {
            return Err(ConfigError::Invalid {
                field: "training.goal_ranges",
                message: "min must be < max componentwise".to_string(),
            });
        }
        if let Some((lo, hi)) = gr.alpha {
            if lo >= hi {
                return Err(ConfigError::Invalid {
                    field: "training.goal_ranges.alpha",
                    message: format!("min {lo} must be < max {hi}"),
                });
            }
        }
        let k = &self.kanayama;
        check_interval("kanayama.kx", k.kx, "(0, inf)", k.kx > 0.0)?;
        check_interval("kanayama.ky", k.ky, "(0, inf)", k.ky > 0.0)?;
        check_interval("kanayama.kpsi", k.kpsi, "(0, inf)", k.kpsi > 0.0)?;
        let r = &self.reference;
        check_interval("reference.r", r.r, "(0, inf)", r.r > 0.0)?;
        check_interval("reference.t", r.t, "(0, inf)", r.t > 0.0)?;
        check_interval("reference.speed", r.speed, "(0, inf)", r.speed > 0.0)?;
        let e = &self.experiment;
        check_interval("experiment.trials", e.trials as f64, "[1, inf)", e.trials >= 1)?;
        check_interval("experiment.dt_int", e.dt_int, "(0, 0.1]", e.dt_int > 0.0 && e.dt_int <= 0.1)?;
        check_interval(
            "experiment.control_cycle",
            e.control_cycle,
            "[plant.dt, 1]",
            e.control_cycle >= p.dt && e.control_cycle <= 1.0,
        )?;
        check_interval(
            "terrain.slope_deg",
            self.terrain.slope_deg,
            "(-60, 60)",
            self.terrain.slope_deg.abs() < 60.0,
        )?;
        Ok(())
    }

    /// Goal dimension implied by the task: 2 on flat, 3 with slope goals.
    pub fn goal_dim(&self) -> usize {
        if self.training.goal_ranges.alpha.is_some() {
            3
        } else {
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn empty_document_uses_defaults() {
        let cfg = Config::from_json("{}").unwrap();
        assert_eq!(cfg.mppi.rollouts, 30);
        assert_eq!(cfg.training.episodes, 150);
    }

    #[test]
    fn bad_gamma_names_field_and_interval() {
        let err = Config::from_json(r#"{"cost": {"gamma": 1.2}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cost.gamma"), "{msg}");
        assert!(msg.contains("(0, 1)"), "{msg}");
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(Config::from_json(r#"{"mppi": {"horizon": 40}}"#).is_err());
    }

    #[test]
    fn horizon_seconds_resolve_to_steps() {
        let cfg = Config::default();
        assert_eq!(cfg.mppi.resolve(0.005).horizon, 80);
        assert_eq!(cfg.mppi.resolve(0.0025).horizon, 160);
    }

    #[test]
    fn method_table_matches_parameters() {
        assert_eq!(Method::ProposedShdr.mppi_params(), (0.4, 30));
        assert_eq!(Method::ProposedSh.mppi_params(), (0.4, 30));
        assert_eq!(Method::MpcSh.mppi_params(), (0.4, 30));
        assert_eq!(Method::MpcLh.mppi_params(), (0.8, 35));
        assert!(Method::ProposedShdr.uses_value());
        assert!(!Method::MpcLh.uses_value());
    }

    #[test]
    fn round_trip_preserves_document() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let mut cfg = Config::default();
        cfg.mppi.lambda = 2.5;
        cfg.training.dr_enabled = true;
        cfg.save(&path).unwrap();
        let back = Config::load(&path).unwrap();
        assert_eq!(back.mppi.lambda, 2.5);
        assert!(back.training.dr_enabled);
    }

    #[test]
    fn goal_dim_follows_alpha_presence() {
        let mut cfg = Config::default();
        assert_eq!(cfg.goal_dim(), 2);
        cfg.training.goal_ranges = crate::goal_planner::GoalRanges::with_alpha();
        assert_eq!(cfg.goal_dim(), 3);
    }
}
