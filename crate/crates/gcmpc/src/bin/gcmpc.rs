//! Command-line harness: training, tracking, goal-grid evaluation, the
//! four-method comparison, solve-time benchmarking, push tests, and the
//! verification oracles. Exit codes: 0 success, 2 config error, 3 runtime
//! failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use gcmpc::config::{Config, Method};
use gcmpc::experiments::{self, MethodNets};
use gcmpc::mppi::Backend;
use gcmpc::oracles;
use gcmpc::training::{self, EpisodeRecord};
use gcmpc::value_fn::{self, ValueNet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gcmpc", about = "Goal-conditioned MPC on a wheeled inverted pendulum")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Sequential,
    Parallel,
}

#[derive(Args)]
struct Common {
    /// Path to the JSON configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Rollout evaluation backend.
    #[arg(long, value_enum, default_value = "parallel")]
    backend: BackendArg,
    /// Override the training/experiment seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run training episodes and write metrics.csv + checkpoint.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Override domain randomization (terrain bumps during training).
        #[arg(long)]
        dr: Option<bool>,
    },
    /// Track the configured reference with the upper-layer planner.
    Track {
        #[command(flatten)]
        common: Common,
        /// Trained value checkpoint; omit to run value-free.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate the goal grid and write eval_grid.csv.
    EvalGrid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Four-method comparison on the up-down slope course.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of proposed_shdr,proposed_sh,mpc_sh,mpc_lh.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Checkpoint trained with domain randomization (proposed_shdr).
        #[arg(long)]
        checkpoint_shdr: Option<PathBuf>,
        /// Checkpoint trained without domain randomization (proposed_sh).
        #[arg(long)]
        checkpoint_sh: Option<PathBuf>,
    },
    /// Per-cycle solve-time benchmark; writes timing.csv.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long)]
        checkpoint_shdr: Option<PathBuf>,
        #[arg(long)]
        checkpoint_sh: Option<PathBuf>,
        /// Minimum number of control cycles to sample per method.
        #[arg(long, default_value_t = 1000)]
        cycles: usize,
    },
    /// Push-robustness trials on the descent scenario; writes outcome.csv.
    PushTest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Push force in N; 0 calibrates the smallest tipping force.
        #[arg(long)]
        force: Option<f64>,
    },
    /// Run a verification oracle: lqr_mppi, fitted_vi_chain, fitted_vi_lqr, or all.
    Oracle {
        #[arg(long, default_value = "all")]
        kind: String,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn load_config(common: &Common) -> Result<Config, gcmpc::config::ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.training.seed = seed;
        cfg.experiment.seed = seed;
    }
    Ok(cfg)
}

fn backend_of(common: &Common) -> Backend {
    match common.backend {
        BackendArg::Sequential => Backend::Sequential,
        #[cfg(feature = "parallel")]
        BackendArg::Parallel => Backend::Parallel,
        #[cfg(not(feature = "parallel"))]
        BackendArg::Parallel => Backend::Sequential,
    }
}

fn write(path: &Path, contents: &str) -> std::io::Result<()> {
    std::fs::write(path, contents)
}

fn prepare_out(common: &Common, cfg: &Config) -> std::io::Result<()> {
    std::fs::create_dir_all(&common.out)?;
    // The resolved config travels with every output so reruns reproduce it.
    cfg.save(&common.out.join("config_resolved.json"))
        .map_err(|e| std::io::Error::other(e.to_string()))
}

fn load_net(path: &Option<PathBuf>) -> Result<Option<ValueNet>, value_fn::ValueFnError> {
    path.as_ref()
        .map(|p| value_fn::load_checkpoint(p))
        .transpose()
}

fn parse_methods(raw: &[String]) -> Result<Vec<Method>, String> {
    if raw.is_empty() {
        return Ok(Method::all().to_vec());
    }
    raw.iter()
        .map(|s| Method::parse(s).ok_or_else(|| format!("unknown method `{s}`")))
        .collect()
}

fn run() -> Result<(), ExitCode> {
    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    if let Ok(threads) = std::env::var("GCMPC_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| fail(2, "GCMPC_THREADS must be a positive integer"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| fail(3, e))?;
    }

    match cli.command {
        Command::Train {
            common,
            episodes,
            dr,
        } => {
            let mut cfg = load_config(&common).map_err(|e| fail(2, e))?;
            if let Some(e) = episodes {
                cfg.training.episodes = e;
            }
            if let Some(d) = dr {
                cfg.training.dr_enabled = d;
            }
            prepare_out(&common, &cfg).map_err(|e| fail(3, e))?;
            let mut progress = |r: &EpisodeRecord| {
                println!(
                    "episode {:3}  reward {:10.1}  fell {}  steps {}",
                    r.episode, r.cum_reward, r.fell as u8, r.steps
                );
            };
            let (net, records) =
                training::run_training(&cfg, backend_of(&common), Some(&mut progress))
                    .map_err(|e| fail(3, e))?;
            write(&common.out.join("metrics.csv"), &training::metrics_csv(&records))
                .map_err(|e| fail(3, e))?;
            value_fn::save_checkpoint(&net, &common.out.join("checkpoint.json"))
                .map_err(|e| fail(3, e))?;
            println!("wrote {}", common.out.display());
        }
        Command::Track { common, checkpoint } => {
            let cfg = load_config(&common).map_err(|e| fail(2, e))?;
            prepare_out(&common, &cfg).map_err(|e| fail(3, e))?;
            let net = load_net(&checkpoint).map_err(|e| fail(2, e))?;
            let (log, record) =
                training::run_tracking(net.as_ref(), &cfg, backend_of(&common))
                    .map_err(|e| fail(3, e))?;
            let traj = training::build_reference(&cfg.reference, cfg.internal_model.dt)
                .map_err(|e| fail(3, e))?;
            write(&common.out.join("traj_track.csv"), &training::track_csv(&log))
                .map_err(|e| fail(3, e))?;
            write(&common.out.join("reference.csv"), &training::reference_csv(&traj))
                .map_err(|e| fail(3, e))?;
            println!(
                "tracked {} cycles, fell: {}, cumulative reward {:.1}",
                record.steps, record.fell, record.cum_reward
            );
        }
        Command::EvalGrid { common, checkpoint } => {
            let cfg = load_config(&common).map_err(|e| fail(2, e))?;
            prepare_out(&common, &cfg).map_err(|e| fail(3, e))?;
            let net = load_net(&checkpoint).map_err(|e| fail(2, e))?;
            let cells = training::evaluate_grid(net.as_ref(), &cfg, backend_of(&common))
                .map_err(|e| fail(3, e))?;
            write(&common.out.join("eval_grid.csv"), &training::eval_grid_csv(&cells))
                .map_err(|e| fail(3, e))?;
            println!("evaluated {} cells", cells.len());
        }
        Command::Compare {
            common,
            methods,
            checkpoint_shdr,
            checkpoint_sh,
        } => {
            let cfg = load_config(&common).map_err(|e| fail(2, e))?;
            prepare_out(&common, &cfg).map_err(|e| fail(3, e))?;
            let methods = parse_methods(&methods).map_err(|e| fail(2, e))?;
            let shdr = load_net(&checkpoint_shdr).map_err(|e| fail(2, e))?;
            let sh = load_net(&checkpoint_sh).map_err(|e| fail(2, e))?;
            let nets = MethodNets {
                shdr: shdr.as_ref(),
                sh: sh.as_ref(),
            };
            let report = experiments::run_comparison(&cfg, &methods, &nets, backend_of(&common))
                .map_err(|e| fail(3, e))?;
            write(&common.out.join("report.json"), &report.to_json())
                .map_err(|e| fail(3, e))?;
            for m in &report.methods {
                println!(
                    "{:14} norm cost {:.3}  falls {}/{}  max solve {:.1} ms",
                    m.method,
                    m.normalized_cost,
                    m.falls,
                    m.trials,
                    m.max_solve_s * 1e3
                );
            }
        }
        Command::Bench {
            common,
            methods,
            checkpoint_shdr,
            checkpoint_sh,
            cycles,
        } => {
            let cfg = load_config(&common).map_err(|e| fail(2, e))?;
            prepare_out(&common, &cfg).map_err(|e| fail(3, e))?;
            let methods = parse_methods(&methods).map_err(|e| fail(2, e))?;
            let shdr = load_net(&checkpoint_shdr).map_err(|e| fail(2, e))?;
            let sh = load_net(&checkpoint_sh).map_err(|e| fail(2, e))?;
            let nets = MethodNets {
                shdr: shdr.as_ref(),
                sh: sh.as_ref(),
            };
            let report =
                experiments::bench_timing(&cfg, &methods, &nets, cycles, backend_of(&common))
                    .map_err(|e| fail(3, e))?;
            write(&common.out.join("timing.csv"), &experiments::timing_csv(&report.samples))
                .map_err(|e| fail(3, e))?;
            write(
                &common.out.join("report.json"),
                &serde_json::to_string_pretty(&report).expect("report serializes"),
            )
            .map_err(|e| fail(3, e))?;
            println!("budget {} ms", report.budget_ms);
            for r in &report.rows {
                println!(
                    "{:14} median {:.2} ms  p99 {:.2} ms  max {:.2} ms  over budget {:.1}%",
                    r.method,
                    r.median_ms,
                    r.p99_ms,
                    r.max_ms,
                    100.0 * r.over_budget
                );
            }
        }
        Command::PushTest {
            common,
            checkpoint,
            force,
        } => {
            let mut cfg = load_config(&common).map_err(|e| fail(2, e))?;
            if let Some(f) = force {
                cfg.experiment.push.force = f;
            }
            prepare_out(&common, &cfg).map_err(|e| fail(3, e))?;
            let net = load_net(&checkpoint).map_err(|e| fail(2, e))?;
            let report = experiments::run_push_test(&cfg, net.as_ref(), backend_of(&common))
                .map_err(|e| fail(3, e))?;
            write(&common.out.join("outcome.csv"), &experiments::outcome_csv(&report))
                .map_err(|e| fail(3, e))?;
            println!(
                "force {} N{}",
                report.force,
                if report.calibrated { " (calibrated)" } else { "" }
            );
            for h in &cfg.experiment.push.horizons_s {
                let (rec, fell): (usize, usize) = report
                    .trials
                    .iter()
                    .filter(|t| t.horizon_s == *h)
                    .fold((0, 0), |(r, f), t| {
                        (r + t.recovered as usize, f + t.fell as usize)
                    });
                println!("H = {h} s: recovered {rec}, fell {fell}");
            }
        }
        Command::Oracle { kind } => {
            let reports: Vec<oracles::OracleReport> = match kind.as_str() {
                "lqr_mppi" => vec![oracles::lqr_mppi(Backend::default())],
                "fitted_vi_chain" => vec![oracles::fitted_vi_chain(200, 0)],
                "fitted_vi_lqr" => vec![oracles::fitted_vi_lqr(0)],
                "all" => vec![
                    oracles::lqr_mppi(Backend::default()),
                    oracles::fitted_vi_chain(200, 0),
                    oracles::fitted_vi_lqr(0),
                ],
                other => return Err(fail(2, format!("unknown oracle `{other}`"))),
            };
            let mut ok = true;
            for r in &reports {
                println!(
                    "{:16} {}  measured {:.4} (threshold {:.2})  {}",
                    r.name,
                    if r.pass { "PASS" } else { "FAIL" },
                    r.measured,
                    r.threshold,
                    r.detail
                );
                ok &= r.pass;
            }
            if !ok {
                return Err(ExitCode::from(3));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
