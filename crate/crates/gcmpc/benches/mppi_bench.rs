//! Parallel vs sequential MPPI solve throughput on the robot problem.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gcmpc::{
    Backend, CostParams, GoalSequence, GoalVariables, InternalModel, InternalModelConfig,
    MppiConfig, PlantParams, PlantState, RobotProblem,
};

fn solve_once(backend: Backend, rollouts: usize) {
    let plant = PlantParams::default();
    let model = InternalModel::new(plant, &InternalModelConfig::default());
    let cost = CostParams::default();
    let goal = GoalVariables::new(0.5, 0.0, None);
    let problem = RobotProblem::new(&model, &cost, GoalSequence::Constant(&goal), None).unwrap();
    let cfg = MppiConfig {
        horizon: 80,
        rollouts,
        lambda: 1.0,
        sigma: vec![100.0, 100.0, 0.01],
        gamma: 0.99,
        seed: 7,
    };
    let x0 = InternalModel::project(&PlantState::upright(0.3));
    let warm = problem.hold_plan(0.0, cfg.horizon);
    let out = gcmpc::mppi::solve(&problem, &x0, &warm, &cfg, 7, backend).unwrap();
    criterion::black_box(out);
}

fn bench_backends(c: &mut Criterion) {
    let mut group = c.benchmark_group("mppi_solve");
    group.sample_size(20);
    for rollouts in [64usize, 256, 1024] {
        group.bench_with_input(
            BenchmarkId::new("sequential", rollouts),
            &rollouts,
            |b, &k| b.iter(|| solve_once(Backend::Sequential, k)),
        );
        #[cfg(feature = "parallel")]
        group.bench_with_input(
            BenchmarkId::new("parallel", rollouts),
            &rollouts,
            |b, &k| b.iter(|| solve_once(Backend::Parallel, k)),
        );
    }
    group.finish();
}

criterion_group!(benches, bench_backends);
criterion_main!(benches);
