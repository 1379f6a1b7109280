//! Orchestration: training episodes with periodic value updates, reference
//! tracking with the upper-layer planner, and evaluation sweeps over the
//! goal grid. All loops run at a fixed control cycle and are deterministic
//! for fixed seeds (solve wall times excepted).

use crate::config::{Config, ReferenceSection, ReferenceShape, TerrainSection};
use crate::cost::{running_cost, CostParams};
use crate::goal_planner::{
    self, GoalRanges, KanayamaGains, PlannerError, ReferencePoint,
};
use crate::internal_model::InternalModel;
use crate::mppi::{self, Backend, MppiConfig, MppiError, Plan};
use crate::plant::{self, Control, Disturbance, PlantParams, PlantState, OBS_DIM};
use crate::robot_mpc::{GoalSequence, RobotProblem};
use crate::terrain::{TerrainError, TerrainProfile};
use crate::value_fn::{
    self, Adam, GoalVariables, Normalizer, ReplayBuffer, Transition, ValueFnError, ValueNet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("solver failed in episode {episode} at step {step}: {source}")]
    Solver {
        episode: usize,
        step: usize,
        source: MppiError,
    },
    #[error(transparent)]
    Value(#[from] ValueFnError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error("control cycle {cycle} is not a multiple of plant dt {dt}")]
    CycleGranularity { cycle: f64, dt: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub goal: GoalVariables,
    pub terrain_seed: u64,
    /// Negative cumulative running cost.
    pub cum_reward: f64,
    pub fell: bool,
    pub steps: usize,
    pub max_solve_s: f64,
}

/// One control-cycle row of the trajectory log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub omega: f64,
    pub theta_p: f64,
    pub r_leg: f64,
    pub v_goal: f64,
    pub omega_goal: f64,
    pub alpha_goal: f64,
    pub cost: f64,
    pub solve_s: f64,
}

#[derive(Debug)]
pub struct SimResult {
    pub log: Vec<StepLog>,
    pub transitions: Vec<Transition>,
    pub fell: bool,
    pub steps: usize,
    pub cum_cost: f64,
    pub max_solve_s: f64,
    pub final_state: PlantState,
}

/// Where the per-cycle goal sequence comes from.
pub enum GoalSource<'a> {
    /// Single constant goal over the whole episode (training convention).
    Constant(GoalVariables),
    /// Upper-layer planner: Kanayama feedback against a reference.
    Tracking {
        traj: &'a [ReferencePoint],
        gains: &'a KanayamaGains,
        ranges: &'a GoalRanges,
        with_alpha: bool,
    },
    /// Constant velocity command with the slope angle looked up along the
    /// predicted path (comparison course and push test).
    Velocity {
        v: f64,
        omega: f64,
        with_alpha: bool,
    },
}

pub struct SimSpec<'a> {
    pub plant: &'a PlantParams,
    pub model: &'a InternalModel,
    pub cost: &'a CostParams,
    pub mppi: &'a MppiConfig,
    pub net: Option<&'a ValueNet>,
    pub terrain: &'a TerrainProfile,
    pub goals: GoalSource<'a>,
    pub control_cycle: f64,
    pub duration: f64,
    pub disturbance: Option<Disturbance>,
    pub seed: u64,
    pub backend: Backend,
    pub initial: PlantState,
}

fn substeps_per_cycle(cycle: f64, dt: f64) -> Result<usize, TrainError> {
    let n = cycle / dt;
    if (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
        return Err(TrainError::CycleGranularity { cycle, dt });
    }
    Ok(n.round() as usize)
}

/// Internal-model steps elapsed per control cycle (at least one), used to
/// keep the shifted warm start aligned with real time.
fn internal_steps_per_cycle(cycle: f64, dt_int: f64) -> usize {
    (cycle / dt_int).round().max(1.0) as usize
}

/// Maximum per-cycle blend of the warm-start tail toward the hold command.
const TAIL_BLEND: f64 = 0.2;

/// Decays the far end of the shifted warm start toward "hold the current
/// velocity". Noise absorbed into the plan far from the present is barely
/// constrained by the rollout costs, so without this it accumulates cycle
/// over cycle and the plan tail drifts toward predicted falls.
fn blend_tail_toward_hold(warm: &mut Plan, state: &PlantState, p: &PlantParams) {
    let blend = TAIL_BLEND;
    let half = state.omega * p.track_width / 2.0;
    let hold = [
        (state.v - half) / p.wheel_radius,
        (state.v + half) / p.wheel_radius,
        p.leg_nominal,
    ];
    let h = warm.len().max(2) as f64;
    for (t, u) in warm.0.iter_mut().enumerate() {
        let beta = blend * (t as f64 / (h - 1.0)).powi(2);
        for (ud, hd) in u.iter_mut().zip(&hold) {
            *ud += beta * (hd - *ud);
        }
    }
}

fn mix(seed: u64, salt: u64) -> u64 {
    value_fn::iteration_seed(seed ^ 0x9e37_79b9_7f4a_7c15, salt as usize)
}

/// Closed-loop simulation at the control cycle: observe, solve, apply the
/// first control for one cycle of plant substeps. Used by evaluation,
/// tracking, the comparison experiment, and the push test.
pub fn simulate(spec: &SimSpec) -> Result<SimResult, TrainError> {
    let substeps = substeps_per_cycle(spec.control_cycle, spec.plant.dt)?;
    let cycles = (spec.duration / spec.control_cycle).round() as usize;
    let horizon = spec.mppi.horizon;

    let mut state = spec.initial;
    let mut warm = Plan::constant(
        &[
            state.v / spec.plant.wheel_radius,
            state.v / spec.plant.wheel_radius,
            spec.plant.leg_nominal,
        ],
        horizon,
    );
    let mut result = SimResult {
        log: Vec::with_capacity(cycles),
        transitions: Vec::with_capacity(cycles),
        fell: false,
        steps: 0,
        cum_cost: 0.0,
        max_solve_s: 0.0,
        final_state: state,
    };
    // Reused per cycle by the planner-driven goal sources.
    let mut goal_buf: Vec<GoalVariables> = Vec::new();

    for cycle in 0..cycles {
        let t_now = cycle as f64 * spec.control_cycle;
        let o = plant::observe(&state, spec.terrain);
        let x_int = InternalModel::project(&state);

        let goals = match &spec.goals {
            GoalSource::Constant(g) => GoalSequence::Constant(g),
            GoalSource::Tracking {
                traj,
                gains,
                ranges,
                with_alpha,
            } => {
                goal_buf = goal_planner::plan_goal_sequence(
                    (state.x, state.y, state.psi),
                    t_now,
                    traj,
                    spec.terrain,
                    horizon,
                    spec.model.dt,
                    gains,
                    ranges,
                    *with_alpha,
                );
                GoalSequence::Varying(&goal_buf)
            }
            GoalSource::Velocity {
                v,
                omega,
                with_alpha,
            } => {
                goal_buf.clear();
                for k in 0..=horizon {
                    let alpha = with_alpha.then(|| {
                        spec.terrain.slope_ahead(
                            state.x,
                            state.y,
                            state.psi,
                            v * k as f64 * spec.model.dt,
                        )
                    });
                    goal_buf.push(GoalVariables::new(*v, *omega, alpha));
                }
                GoalSequence::Varying(&goal_buf)
            }
        };
        let goal_now = *goals.at(0);
        let problem = RobotProblem::new(spec.model, spec.cost, goals, spec.net)?;
        let (plan, u0, stats) = mppi::solve(
            &problem,
            &x_int,
            &warm,
            spec.mppi,
            mix(spec.seed, cycle as u64),
            spec.backend,
        )
        .map_err(|source| TrainError::Solver {
            episode: 0,
            step: cycle,
            source,
        })?;
        // One control cycle spans several internal-model steps; shift the
        // warm start by the same amount so it stays aligned with real time.
        warm = plan;
        for _ in 0..internal_steps_per_cycle(spec.control_cycle, spec.model.dt) {
            warm = mppi::shift_warm_start(&warm);
        }
        blend_tail_toward_hold(&mut warm, &state, spec.plant);

        let step_cost = running_cost(&o, &[u0[0], u0[1], u0[2]], &goal_now, spec.cost);
        result.cum_cost += step_cost;
        result.max_solve_s = result.max_solve_s.max(stats.wall_time);
        result.log.push(StepLog {
            t: t_now,
            x: state.x,
            y: state.y,
            psi: state.psi,
            v: state.v,
            omega: state.omega,
            theta_p: state.theta_p,
            r_leg: state.r_leg,
            v_goal: goal_now.v,
            omega_goal: goal_now.omega,
            alpha_goal: goal_now.alpha_or_zero(),
            cost: step_cost,
            solve_s: stats.wall_time,
        });
        result.transitions.push(Transition {
            state: x_int,
            goal: goal_now,
        });

        let u = Control::from_slice(&u0);
        for _ in 0..substeps {
            state = plant::step(spec.plant, &state, u, spec.terrain, spec.disturbance.as_ref());
        }
        result.steps = cycle + 1;
        if plant::is_fallen(spec.plant, &state) {
            result.fell = true;
            break;
        }
    }
    result.final_state = state;
    Ok(result)
}

/// Observation + goal feature ranges used for the fixed input normalizer.
pub fn make_normalizer(cfg: &Config) -> Normalizer {
    let p = &cfg.plant;
    let gr = &cfg.training.goal_ranges;
    let mut ranges: Vec<(f64, f64)> = vec![
        (0.0, p.leg_max),            // p_z
        (-1.5, 1.5),                 // v
        (-p.fall_pitch, p.fall_pitch),
        (-5.0, 5.0),                 // theta_dot
        (-2.0, 2.0),                 // omega
        (p.leg_min, p.leg_max),      // r_leg
        (-0.5, 0.5),                 // alpha_here
    ];
    ranges.push(gr.v);
    ranges.push(gr.omega);
    if let Some(a) = gr.alpha {
        ranges.push(a);
    }
    Normalizer::from_ranges(&ranges)
}

pub fn fresh_net(cfg: &Config, seed: u64) -> ValueNet {
    // Fitted-VI targets approach c / (1 - gamma) near fall states; bake
    // that scale into the net so the learnable output stays O(1), and
    // start from V = 0 so early episodes behave like value-free MPC.
    let c = &cfg.cost;
    let scale = (c.w_v + c.w_omega + c.w_fall) / (1.0 - c.gamma);
    let mut net = ValueNet::new(
        OBS_DIM,
        cfg.goal_dim(),
        &cfg.value.hidden,
        make_normalizer(cfg),
        seed,
    )
    .with_output_scale(scale);
    net.zero_final_layer();
    net
}

/// Terrain for a fixed-goal episode: flat unless the goal carries a slope
/// angle, in which case a ramp of that angle starts 1 m ahead so every
/// episode exercises a transition. Bumps are layered on when `dr` is set.
pub fn episode_terrain(
    goal: &GoalVariables,
    dr: bool,
    bump_height_max: f64,
    tile_size: f64,
    terrain_seed: u64,
) -> Result<TerrainProfile, TerrainError> {
    let base = match goal.alpha {
        Some(a) if a != 0.0 => TerrainProfile::slope_sequence(&[(0.0, 0.0), (1.0, a.tan())])?,
        _ => TerrainProfile::flat(),
    };
    if dr {
        base.randomize(terrain_seed, bump_height_max, tile_size)
    } else {
        Ok(base)
    }
}

fn initial_state(plant: &PlantParams, jitter_std: f64, rng: &mut ChaCha8Rng) -> PlantState {
    let mut s = PlantState::upright(plant.leg_nominal);
    if jitter_std > 0.0 {
        let normal = Normal::new(0.0, jitter_std).expect("positive std");
        s.theta_p = normal.sample(rng);
    }
    s
}

/// Fitted value iteration over training episodes: sample a goal, run the
/// episode storing experience, update the value function every
/// `update_every` environment steps.
pub fn run_training(
    cfg: &Config,
    backend: Backend,
    mut progress: Option<&mut dyn FnMut(&EpisodeRecord)>,
) -> Result<(ValueNet, Vec<EpisodeRecord>), TrainError> {
    let tr = &cfg.training;
    let model = InternalModel::new(cfg.plant.clone(), &cfg.internal_model);
    let mppi_cfg = cfg.mppi.resolve(cfg.internal_model.dt);
    let mut net = fresh_net(cfg, mix(tr.seed, 0xface));
    let mut opt = Adam::new(cfg.value.learning_rate);
    let mut buffer = ReplayBuffer::new(cfg.value.replay_capacity);
    let mut records = Vec::with_capacity(tr.episodes);

    let substeps = substeps_per_cycle(tr.control_cycle, cfg.plant.dt)?;
    let cycles_per_episode = (tr.episode_length / tr.control_cycle).round() as usize;
    let mut global_step: usize = 0;
    let mut update_round: u64 = 0;

    for episode in 0..tr.episodes {
        let episode_seed = mix(tr.seed, 1 + episode as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let goal = goal_planner::sample_goal(&mut rng, &tr.goal_ranges);
        let terrain_seed = rng.gen::<u64>();
        let terrain = episode_terrain(
            &goal,
            tr.dr_enabled,
            tr.bump_height_max,
            tr.bump_tile_size,
            terrain_seed,
        )?;
        let mut state = initial_state(&cfg.plant, tr.pitch_jitter_std, &mut rng);
        let mut warm = Plan::constant(
            &[0.0, 0.0, cfg.plant.leg_nominal],
            mppi_cfg.horizon,
        );
        let mut record = EpisodeRecord {
            episode,
            goal,
            terrain_seed,
            cum_reward: 0.0,
            fell: false,
            steps: 0,
            max_solve_s: 0.0,
        };

        for cycle in 0..cycles_per_episode {
            let o = plant::observe(&state, &terrain);
            let x_int = InternalModel::project(&state);
            let problem =
                RobotProblem::new(&model, &cfg.cost, GoalSequence::Constant(&goal), Some(&net))?;
            let (plan, u0, stats) = mppi::solve(
                &problem,
                &x_int,
                &warm,
                &mppi_cfg,
                mix(episode_seed, cycle as u64),
                backend,
            )
            .map_err(|source| TrainError::Solver {
                episode,
                step: cycle,
                source,
            })?;
            warm = plan;
            for _ in 0..internal_steps_per_cycle(tr.control_cycle, model.dt) {
                warm = mppi::shift_warm_start(&warm);
            }
            blend_tail_toward_hold(&mut warm, &state, &cfg.plant);

            record.cum_reward -= running_cost(&o, &[u0[0], u0[1], u0[2]], &goal, &cfg.cost);
            record.max_solve_s = record.max_solve_s.max(stats.wall_time);
            buffer.push(Transition {
                state: x_int,
                goal,
            });

            let u = Control::from_slice(&u0);
            for _ in 0..substeps {
                state = plant::step(&cfg.plant, &state, u, &terrain, None);
            }
            record.steps = cycle + 1;
            global_step += 1;
            if global_step % tr.update_every == 0 {
                value_fn::update(
                    &mut net,
                    &mut opt,
                    &buffer,
                    &model,
                    &cfg.cost,
                    &mppi_cfg,
                    tr.gradient_steps,
                    tr.batch_size,
                    mix(tr.seed, 0x5eed_0000 + update_round),
                    backend,
                )?;
                update_round += 1;
            }
            if plant::is_fallen(&cfg.plant, &state) {
                record.fell = true;
                break;
            }
        }
        if let Some(cb) = progress.as_deref_mut() {
            cb(&record);
        }
        records.push(record);
    }
    Ok((net, records))
}

/// Builds the configured reference trajectory sampled at the internal
/// timestep.
pub fn build_reference(
    r: &ReferenceSection,
    dt: f64,
) -> Result<Vec<ReferencePoint>, PlannerError> {
    match r.shape {
        ReferenceShape::Lemniscate => goal_planner::lemniscate(r.r, r.t, dt),
        ReferenceShape::Circle => goal_planner::circle(r.rho, r.speed, r.t, dt),
        ReferenceShape::Line => goal_planner::line(r.length, r.speed, dt),
        ReferenceShape::Point => Ok(vec![ReferencePoint {
            x: 0.0,
            y: 0.0,
            psi: 0.0,
            v: 0.0,
            omega: 0.0,
            t: 0.0,
        }]),
    }
}

pub fn build_terrain(t: &TerrainSection) -> Result<TerrainProfile, TerrainError> {
    match t.kind {
        crate::config::TerrainKind::Flat => Ok(TerrainProfile::flat()),
        crate::config::TerrainKind::Slope => TerrainProfile::slope_sequence(&[
            (0.0, 0.0),
            (1.0, t.slope_deg.to_radians().tan()),
        ]),
    }
}

/// Tracks the configured reference with the upper-layer planner.
pub fn run_tracking(
    net: Option<&ValueNet>,
    cfg: &Config,
    backend: Backend,
) -> Result<(Vec<StepLog>, EpisodeRecord), TrainError> {
    let model = InternalModel::new(cfg.plant.clone(), &cfg.internal_model);
    let mppi_cfg = cfg.mppi.resolve(cfg.internal_model.dt);
    let traj = build_reference(&cfg.reference, cfg.internal_model.dt)?;
    let terrain = build_terrain(&cfg.terrain)?;
    let duration = traj
        .last()
        .map(|p| p.t)
        .unwrap_or(0.0)
        .max(cfg.training.episode_length);
    let with_alpha = cfg.training.goal_ranges.alpha.is_some();

    let spec = SimSpec {
        plant: &cfg.plant,
        model: &model,
        cost: &cfg.cost,
        mppi: &mppi_cfg,
        net,
        terrain: &terrain,
        goals: GoalSource::Tracking {
            traj: &traj,
            gains: &cfg.kanayama,
            ranges: &cfg.training.goal_ranges,
            with_alpha,
        },
        control_cycle: cfg.training.control_cycle,
        duration,
        disturbance: None,
        seed: mix(cfg.training.seed, 0x7aac),
        backend,
        initial: PlantState::upright(cfg.plant.leg_nominal),
    };
    let sim = simulate(&spec)?;
    let record = EpisodeRecord {
        episode: 0,
        goal: GoalVariables::new(0.0, 0.0, None),
        terrain_seed: 0,
        cum_reward: -sim.cum_cost,
        fell: sim.fell,
        steps: sim.steps,
        max_solve_s: sim.max_solve_s,
    };
    Ok((sim.log, record))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCell {
    pub v: f64,
    pub omega: f64,
    pub alpha_deg: Option<f64>,
    pub mean_reward: f64,
    pub falls: usize,
    pub episodes: usize,
}

/// One fixed-goal episode per grid cell per seed; returns mean cumulative
/// reward and fall counts.
pub fn evaluate_grid(
    net: Option<&ValueNet>,
    cfg: &Config,
    backend: Backend,
) -> Result<Vec<GridCell>, TrainError> {
    let tr = &cfg.training;
    let model = InternalModel::new(cfg.plant.clone(), &cfg.internal_model);
    let mppi_cfg = cfg.mppi.resolve(cfg.internal_model.dt);
    let alphas: Vec<Option<f64>> = if tr.goal_ranges.alpha.is_some() {
        tr.eval_alpha_deg.iter().map(|&a| Some(a)).collect()
    } else {
        vec![None]
    };
    let mut cells = Vec::new();
    for &v in &tr.eval_v {
        for &omega in &tr.eval_omega {
            for &alpha_deg in &alphas {
                let goal = GoalVariables::new(v, omega, alpha_deg.map(f64::to_radians));
                let mut rewards = Vec::with_capacity(tr.eval_seeds.len());
                let mut falls = 0;
                for &seed in &tr.eval_seeds {
                    let terrain =
                        episode_terrain(&goal, tr.dr_enabled, tr.bump_height_max, tr.bump_tile_size, mix(seed, 0xe7a1))?;
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x1217));
                    let spec = SimSpec {
                        plant: &cfg.plant,
                        model: &model,
                        cost: &cfg.cost,
                        mppi: &mppi_cfg,
                        net,
                        terrain: &terrain,
                        goals: GoalSource::Constant(goal),
                        control_cycle: tr.control_cycle,
                        duration: tr.episode_length,
                        disturbance: None,
                        seed: mix(seed, 0xeb41),
                        backend,
                        initial: initial_state(&cfg.plant, tr.pitch_jitter_std, &mut rng),
                    };
                    let sim = simulate(&spec)?;
                    rewards.push(-sim.cum_cost);
                    if sim.fell {
                        falls += 1;
                    }
                }
                cells.push(GridCell {
                    v,
                    omega,
                    alpha_deg,
                    mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
                    falls,
                    episodes: rewards.len(),
                });
            }
        }
    }
    Ok(cells)
}

pub fn metrics_csv(records: &[EpisodeRecord]) -> String {
    let mut out = String::from("episode,cum_reward,fell,steps,max_solve_ms\n");
    for r in records {
        out.push_str(&format!(
            "{},{:.6},{},{},{:.3}\n",
            r.episode,
            r.cum_reward,
            r.fell as u8,
            r.steps,
            r.max_solve_s * 1e3
        ));
    }
    out
}

pub fn eval_grid_csv(cells: &[GridCell]) -> String {
    let mut out = String::from("v_goal,omega_goal,alpha_goal_deg,mean_reward,falls,episodes\n");
    for c in cells {
        let alpha = c
            .alpha_deg
            .map(|a| format!("{a}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{:.6},{},{}\n",
            c.v, c.omega, alpha, c.mean_reward, c.falls, c.episodes
        ));
    }
    out
}

pub fn track_csv(log: &[StepLog]) -> String {
    let mut out = String::from(
        "t,x,y,psi,v,omega,theta_p,r_leg,v_goal,omega_goal,alpha_goal,cost,solve_ms\n",
    );
    for s in log {
        out.push_str(&format!(
            "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}\n",
            s.t,
            s.x,
            s.y,
            s.psi,
            s.v,
            s.omega,
            s.theta_p,
            s.r_leg,
            s.v_goal,
            s.omega_goal,
            s.alpha_goal,
            s.cost,
            s.solve_s * 1e3
        ));
    }
    out
}

pub fn reference_csv(traj: &[ReferencePoint]) -> String {
    let mut out = String::from("t,x_ref,y_ref,psi_ref,v_ref,omega_ref\n");
    for p in traj {
        out.push_str(&format!(
            "{:.4},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            p.t, p.x, p.y, p.psi, p.v, p.omega
        ));
    }
    out
}
