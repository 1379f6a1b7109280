//! Four-method comparison on the up-down slope course, per-cycle solve-time
//! benchmarking, and push-robustness trials on the descent scenario.

use crate::config::{Config, Method};
use crate::internal_model::InternalModel;
use crate::mppi::Backend;
use crate::plant::{Disturbance, PlantState};
use crate::training::{self, GoalSource, SimResult, SimSpec, TrainError};
use crate::value_fn::ValueNet;
use crate::TerrainProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Trained checkpoints for the proposed methods; `None` entries make the
/// corresponding method run value-free.
#[derive(Default, Clone, Copy)]
pub struct MethodNets<'a> {
    pub shdr: Option<&'a ValueNet>,
    pub sh: Option<&'a ValueNet>,
}

impl<'a> MethodNets<'a> {
    pub fn net_for(&self, m: Method) -> Option<&'a ValueNet> {
        match m {
            Method::ProposedShdr => self.shdr,
            Method::ProposedSh => self.sh,
            Method::MpcSh | Method::MpcLh => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: String,
    pub trials: usize,
    pub falls: usize,
    pub mean_cost: f64,
    pub sd_cost: f64,
    /// Mean cost divided by the worst method mean (worst maps to 1.0).
    pub normalized_cost: f64,
    pub max_solve_s: f64,
    /// Cycles whose solve exceeded the control cycle.
    pub budget_violations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub task: String,
    pub trials: usize,
    pub control_cycle: f64,
    pub methods: Vec<MethodStats>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub const COURSE_SEGMENT_LEN: f64 = 2.0;
pub const COURSE_V_GOAL: f64 = 1.0;

/// 2 m flat, 2 m up, 2 m flat, 2 m down, then flat.
pub fn course_terrain(slope_deg: f64) -> TerrainProfile {
    let s = slope_deg.to_radians().tan();
    let l = COURSE_SEGMENT_LEN;
    TerrainProfile::slope_sequence(&[
        (0.0, 0.0),
        (l, s),
        (2.0 * l, 0.0),
        (3.0 * l, -s),
        (4.0 * l, 0.0),
    ])
    .expect("ordered segments")
}

fn mix(seed: u64, salt: u64) -> u64 {
    crate::value_fn::iteration_seed(seed ^ 0x5a5a_5a5a_5a5a_5a5a, salt as usize)
}

fn course_duration() -> f64 {
    // Course length plus slack for the slowdown at transitions.
    4.0 * COURSE_SEGMENT_LEN / COURSE_V_GOAL + 2.0
}

/// Worst-case per-cycle running cost used to charge the remainder of a
/// trial after a fall, so falling early cannot look cheaper than finishing.
fn fall_cycle_cost(cfg: &Config) -> f64 {
    cfg.cost.w_v + cfg.cost.w_omega + cfg.cost.w_fall
}

fn run_course_trial(
    cfg: &Config,
    method: Method,
    nets: &MethodNets,
    trial: u64,
    backend: Backend,
) -> Result<SimResult, TrainError> {
    let exp = &cfg.experiment;
    let (horizon_s, rollouts) = method.mppi_params();
    let mut mppi = cfg.mppi.resolve(exp.dt_int);
    mppi.horizon = (horizon_s / exp.dt_int).round() as usize;
    mppi.rollouts = rollouts;
    let model_cfg = crate::InternalModelConfig {
        dt: exp.dt_int,
        ..cfg.internal_model.clone()
    };
    let model = InternalModel::new(cfg.plant.clone(), &model_cfg);

    let base = course_terrain(cfg.terrain.slope_deg);
    // Same per-trial bumpy terrain for every method.
    let terrain = base.randomize(
        mix(exp.seed, 0x1000 + trial),
        cfg.training.bump_height_max,
        cfg.training.bump_tile_size,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(mix(exp.seed, 0x2000 + trial));
    // Start already cruising at the course speed; the course scores steady
    // tracking over terrain, not the launch transient.
    let mut initial = PlantState::cruising(&cfg.plant, cfg.plant.leg_nominal, COURSE_V_GOAL, 0.0);
    initial.theta_p = rng.gen_range(-0.02..0.02);

    let spec = SimSpec {
        plant: &cfg.plant,
        model: &model,
        cost: &cfg.cost,
        mppi: &mppi,
        net: nets.net_for(method),
        terrain: &terrain,
        goals: GoalSource::Velocity {
            v: COURSE_V_GOAL,
            omega: 0.0,
            with_alpha: true,
        },
        control_cycle: exp.control_cycle,
        duration: course_duration(),
        disturbance: None,
        seed: mix(exp.seed, 0x3000 + trial),
        backend,
        initial,
    };
    training::simulate(&spec)
}

/// Runs `trials` course traversals for each requested method and normalizes
/// mean cumulative costs by the worst method mean.
pub fn run_comparison(
    cfg: &Config,
    methods: &[Method],
    nets: &MethodNets,
    backend: Backend,
) -> Result<ComparisonReport, TrainError> {
    let exp = &cfg.experiment;
    let total_cycles = (course_duration() / exp.control_cycle).round() as usize;
    let mut stats = Vec::new();

    for &method in methods {
        let mut costs = Vec::with_capacity(exp.trials);
        let mut falls = 0;
        let mut max_solve = 0.0f64;
        let mut violations = 0;
        for trial in 0..exp.trials {
            let r = run_course_trial(cfg, method, nets, trial as u64, backend)?;
            let mut cost = r.cum_cost;
            if r.fell {
                falls += 1;
                cost += (total_cycles - r.steps) as f64 * fall_cycle_cost(cfg);
            }
            costs.push(cost);
            max_solve = max_solve.max(r.max_solve_s);
            violations += r
                .log
                .iter()
                .filter(|s| s.solve_s > exp.control_cycle)
                .count();
        }
        let n = costs.len() as f64;
        let mean = costs.iter().sum::<f64>() / n;
        let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
        stats.push(MethodStats {
            method: method.name().to_string(),
            trials: exp.trials,
            falls,
            mean_cost: mean,
            sd_cost: var.sqrt(),
            normalized_cost: 0.0,
            max_solve_s: max_solve,
            budget_violations: violations,
        });
    }

    let worst = stats
        .iter()
        .map(|s| s.mean_cost)
        .fold(f64::NEG_INFINITY, f64::max);
    for s in &mut stats {
        s.normalized_cost = if worst > 0.0 { s.mean_cost / worst } else { 0.0 };
    }
    Ok(ComparisonReport {
        task: format!("{:?}", exp.task).to_lowercase(),
        trials: exp.trials,
        control_cycle: exp.control_cycle,
        methods: stats,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub cycles: usize,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    /// Fraction of cycles whose solve exceeded the control cycle.
    pub over_budget: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    /// Control-cycle budget the rows are judged against, ms.
    pub budget_ms: f64,
    pub rows: Vec<TimingRow>,
    #[serde(skip)]
    pub samples: Vec<(String, Vec<f64>)>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Measures the per-cycle solve wall time over at least `min_cycles`
/// closed-loop cycles per method, running trials sequentially so the
/// numbers stay honest.
pub fn bench_timing(
    cfg: &Config,
    methods: &[Method],
    nets: &MethodNets,
    min_cycles: usize,
    backend: Backend,
) -> Result<TimingReport, TrainError> {
    let budget_ms = cfg.experiment.control_cycle * 1e3;
    let mut report = TimingReport {
        budget_ms,
        rows: Vec::new(),
        samples: Vec::new(),
    };
    for &method in methods {
        let mut samples_ms: Vec<f64> = Vec::with_capacity(min_cycles);
        let mut trial = 0u64;
        while samples_ms.len() < min_cycles {
            let r = run_course_trial(cfg, method, nets, trial, backend)?;
            samples_ms.extend(r.log.iter().map(|s| s.solve_s * 1e3));
            trial += 1;
        }
        let mut sorted = samples_ms.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        report.rows.push(TimingRow {
            method: method.name().to_string(),
            cycles: samples_ms.len(),
            median_ms: percentile(&sorted, 0.5),
            p99_ms: percentile(&sorted, 0.99),
            max_ms: *sorted.last().unwrap(),
            over_budget: sorted.iter().filter(|&&t| t > budget_ms).count() as f64
                / sorted.len() as f64,
        });
        report.samples.push((method.name().to_string(), samples_ms));
    }
    Ok(report)
}

pub fn timing_csv(samples: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("method,cycle,solve_ms\n");
    for (method, times) in samples {
        for (i, t) in times.iter().enumerate() {
            out.push_str(&format!("{method},{i},{t:.4}\n"));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushTrial {
    pub horizon_s: f64,
    pub trial: usize,
    pub force: f64,
    pub max_pitch: f64,
    pub fell: bool,
    pub recovered: bool,
    /// Seconds from push end to |v - v_goal| < 0.1, if reached.
    pub recovery_time_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushReport {
    pub force: f64,
    pub calibrated: bool,
    pub trials: Vec<PushTrial>,
}

const PUSH_V_GOAL: f64 = 1.0;
const PUSH_START_S: f64 = 2.5;
const RECOVERY_WINDOW_S: f64 = 3.0;
const RECOVERY_V_TOL: f64 = 0.1;

/// Descent terrain: 1 m flat run-up, then down at the configured slope.
pub fn descent_terrain(slope_deg: f64) -> TerrainProfile {
    TerrainProfile::slope_sequence(&[(0.0, 0.0), (1.0, -slope_deg.to_radians().tan())])
        .expect("ordered segments")
}

fn run_push_trial(
    cfg: &Config,
    net: Option<&ValueNet>,
    horizon_s: f64,
    force: f64,
    trial: u64,
    backend: Backend,
) -> Result<PushTrial, TrainError> {
    let exp = &cfg.experiment;
    let mut mppi = cfg.mppi.resolve(exp.dt_int);
    mppi.horizon = (horizon_s / exp.dt_int).round() as usize;
    let model_cfg = crate::InternalModelConfig {
        dt: exp.dt_int,
        ..cfg.internal_model.clone()
    };
    let model = InternalModel::new(cfg.plant.clone(), &model_cfg);
    let terrain = descent_terrain(cfg.terrain.slope_deg);

    let mut rng = ChaCha8Rng::seed_from_u64(mix(exp.seed, 0x4000 + trial));
    // The robot is cruising at the goal speed when the push lands; the trial
    // scores the recovery, not the launch.
    let mut initial = PlantState::cruising(&cfg.plant, cfg.plant.leg_nominal, PUSH_V_GOAL, 0.0);
    initial.theta_p = rng.gen_range(-0.02..0.02);

    let push_end = PUSH_START_S + exp.push.duration;
    let duration = push_end + RECOVERY_WINDOW_S + 1.0;
    let spec = SimSpec {
        plant: &cfg.plant,
        model: &model,
        cost: &cfg.cost,
        mppi: &mppi,
        net,
        terrain: &terrain,
        goals: GoalSource::Velocity {
            v: PUSH_V_GOAL,
            omega: 0.0,
            with_alpha: true,
        },
        control_cycle: exp.control_cycle,
        duration,
        disturbance: Some(Disturbance {
            force,
            start: PUSH_START_S,
            duration: exp.push.duration,
        }),
        seed: mix(exp.seed, 0x5000 + trial),
        backend,
        initial,
    };
    let r = training::simulate(&spec)?;

    let max_pitch = r
        .log
        .iter()
        .map(|s| s.theta_p.abs())
        .fold(0.0f64, f64::max);
    let recovery_time_s = r
        .log
        .iter()
        .filter(|s| s.t >= push_end && (s.v - PUSH_V_GOAL).abs() < RECOVERY_V_TOL)
        .map(|s| s.t - push_end)
        .next();
    let recovered = !r.fell
        && recovery_time_s.is_some_and(|t| t <= RECOVERY_WINDOW_S);
    Ok(PushTrial {
        horizon_s,
        trial: trial as usize,
        force,
        max_pitch,
        fell: r.fell,
        recovered,
        recovery_time_s,
    })
}

/// Smallest force in 5 N steps that rotates the nominal controller (the
/// first configured horizon with the trained value) past 0.3 rad pitch.
pub fn calibrate_push_force(
    cfg: &Config,
    net: Option<&ValueNet>,
    backend: Backend,
) -> Result<f64, TrainError> {
    let horizon = cfg.experiment.push.horizons_s[0];
    let mut force = 5.0;
    while force <= 200.0 {
        let t = run_push_trial(cfg, net, horizon, force, 0, backend)?;
        if t.max_pitch > 0.3 {
            return Ok(force);
        }
        force += 5.0;
    }
    Ok(force)
}

/// Push-robustness sweep: `trials` pushes at the configured (or calibrated)
/// force for every configured horizon, all with the same checkpoint.
pub fn run_push_test(
    cfg: &Config,
    net: Option<&ValueNet>,
    backend: Backend,
) -> Result<PushReport, TrainError> {
    let push = &cfg.experiment.push;
    let calibrated = push.force == 0.0;
    let force = if calibrated {
        calibrate_push_force(cfg, net, backend)?
    } else {
        push.force
    };
    let mut trials = Vec::new();
    for &h in &push.horizons_s {
        for trial in 0..push.trials {
            trials.push(run_push_trial(cfg, net, h, force, trial as u64, backend)?);
        }
    }
    Ok(PushReport {
        force,
        calibrated,
        trials,
    })
}

pub fn outcome_csv(report: &PushReport) -> String {
    let mut out = String::from("horizon_s,trial,force,max_pitch,fell,recovered,recovery_s\n");
    for t in &report.trials {
        out.push_str(&format!(
            "{},{},{},{:.4},{},{},{}\n",
            t.horizon_s,
            t.trial,
            t.force,
            t.max_pitch,
            t.fell as u8,
            t.recovered as u8,
            t.recovery_time_s
                .map(|s| format!("{s:.3}"))
                .unwrap_or_default(),
        ));
    }
    out
}
