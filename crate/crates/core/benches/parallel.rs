use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use icrl_core::estimator::{estimate_success, EstimatorConfig};
use icrl_core::exec::tag;
use icrl_core::icrl::evaluate_meta_policy;
use icrl_core::labyrinth;
use icrl_core::synthetic::random_hlm;
use icrl_core::trainer::{QLearning, SubsystemTrainer, TrainContext};
use icrl_core::{
    build_hlm, oracle_grid_solve, plan, DecompositionProblem, Execution, ParamVector, StreamKey,
};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn bench_estimation(c: &mut Criterion) {
    let map = labyrinth::map();
    let specs = labyrinth::specs();
    let learner = QLearning {
        decay_steps: 50_000,
        ..QLearning::default()
    };
    let ctx = TrainContext {
        map: &map,
        spec: &specs[4],
        slip: 0.1,
    };
    let mut state = learner.init_state(&ctx);
    learner
        .train(&mut state, &ctx, 50_000, StreamKey::new(0, tag::TRAIN, 4, 1))
        .unwrap();
    let policy = learner.policy(&state);
    let config = EstimatorConfig {
        rollouts: 3_000,
        ..EstimatorConfig::default()
    };
    let mut group = c.benchmark_group("estimate_success");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                estimate_success(&map, &specs[4], 0.1, &policy, &config, StreamKey::new(0, tag::ESTIMATE, 4, 1), exec)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_evaluation(c: &mut Criterion) {
    let map = labyrinth::map();
    let specs = labyrinth::specs();
    let hlm = build_hlm(&specs, &labyrinth::init_state(), &labyrinth::target()).unwrap();
    let learner = QLearning {
        decay_steps: 50_000,
        ..QLearning::default()
    };
    let policies: Vec<_> = specs
        .iter()
        .map(|spec| {
            let ctx = TrainContext {
                map: &map,
                spec,
                slip: 0.1,
            };
            let mut state = learner.init_state(&ctx);
            learner
                .train(&mut state, &ctx, 50_000, StreamKey::new(0, tag::TRAIN, spec.id as u64, 1))
                .unwrap();
            learner.policy(&state)
        })
        .collect();
    let (meta, _) = plan(&hlm, &ParamVector::constant(12, 0.9).unwrap()).unwrap();
    let mut group = c.benchmark_group("evaluate_meta_policy");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                evaluate_meta_policy(
                    &map,
                    0.1,
                    &specs,
                    &policies,
                    &meta,
                    &hlm,
                    labyrinth::init_state(),
                    1_000,
                    StreamKey::new(0, tag::EVALUATE, 0, 1),
                    exec,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_oracle(c: &mut Criterion) {
    let mut rng = StreamKey::new(5, tag::TEST, 0, 0).rng();
    let hlm = random_hlm(&mut rng, 4, 3);
    let problem = DecompositionProblem::new(&hlm, 0.1).with_lower(vec![0.2, 0.1, 0.3, 0.0]);
    let mut group = c.benchmark_group("oracle_grid_solve");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| oracle_grid_solve(&problem, 1e-3, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_estimation, bench_evaluation, bench_oracle);
criterion_main!(benches);
