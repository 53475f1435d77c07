mod common;

use std::collections::HashMap;

use icrl_core::estimator::{exact_subtask_success, EstimatorConfig};
use icrl_core::exec::tag;
use icrl_core::icrl::{evaluate_meta_policy, run_icrl, IcrlConfig, IcrlProblem, Termination};
use icrl_core::trainer::{GreedyPolicy, Policy, QLearning, SubsystemTrainer, TrainContext};
use icrl_core::{build_hlm, plan, Action, EnvState, Execution, ParamVector, StreamKey};
use rand::Rng;

fn train_all(problem: &IcrlProblem, steps: &[u64], seed: u64) -> Vec<GreedyPolicy> {
    problem
        .specs
        .iter()
        .zip(steps)
        .map(|(spec, &n)| {
            let learner = QLearning {
                decay_steps: n,
                ..QLearning::default()
            };
            let ctx = TrainContext {
                map: &problem.map,
                spec,
                slip: problem.slip,
            };
            let mut state = learner.init_state(&ctx);
            learner
                .train(&mut state, &ctx, n, StreamKey::new(seed, tag::TEST, spec.id as u64, 0))
                .unwrap();
            learner.policy(&state)
        })
        .collect()
}

/// Exact task success of running the subsystems in order from the initial
/// state: the state distribution is pushed through each subsystem's horizon
/// with its exit states absorbing, and the absorbed mass starts the next one.
fn chain_success<P: Policy>(problem: &IcrlProblem, policies: &[P]) -> f64 {
    let map = &problem.map;
    let mut start: HashMap<EnvState, f64> = HashMap::from([(problem.init, 1.0)]);
    for (spec, policy) in problem.specs.iter().zip(policies) {
        let mut live = start;
        let mut exited: HashMap<EnvState, f64> = HashMap::new();
        for _ in 0..spec.horizon {
            let mut next: HashMap<EnvState, f64> = HashMap::new();
            for (s, m) in live {
                if spec.exit.contains(&s) {
                    *exited.entry(s).or_default() += m;
                    continue;
                }
                for (t, p) in map.transition_distribution(&s, policy.action(&s), problem.slip).unwrap() {
                    if t.is_alive() {
                        *next.entry(t).or_default() += m * p;
                    }
                }
            }
            live = next;
        }
        for (s, m) in live {
            if spec.exit.contains(&s) {
                *exited.entry(s).or_default() += m;
            }
        }
        start = exited;
    }
    start.values().sum()
}

fn evaluate<P: Policy + Sync>(problem: &IcrlProblem, policies: &[P], p: &[f64], n: u64, seed: u64) -> (f64, f64) {
    let hlm = build_hlm(&problem.specs, &problem.init, &problem.target).unwrap();
    let (meta, predicted) = plan(&hlm, &ParamVector::new(p.to_vec()).unwrap()).unwrap();
    let empirical = evaluate_meta_policy(
        &problem.map,
        problem.slip,
        &problem.specs,
        policies,
        &meta,
        &hlm,
        problem.init,
        n,
        StreamKey::new(seed, tag::EVALUATE, 0, 0),
        Execution::Parallel,
    )
    .unwrap();
    (predicted, empirical)
}

fn exact_minima<P: Policy>(problem: &IcrlProblem, policies: &[P]) -> Vec<f64> {
    problem
        .specs
        .iter()
        .zip(policies)
        .map(|(spec, pol)| exact_subtask_success(&problem.map, spec, problem.slip, pol).unwrap().min)
        .collect()
}

#[test]
fn evaluation_matches_the_exact_chain() {
    let problem = common::three_rooms();
    let policies = train_all(&problem, &[4_000, 4_000, 4_000], 11);
    let exact = chain_success(&problem, &policies);
    let n = 10_000;
    let (_, empirical) = evaluate(&problem, &policies, &[0.5; 3], n, 5);
    let sd = (exact * (1.0 - exact) / n as f64).sqrt().max(1e-3);
    assert!((empirical - exact).abs() <= 4.0 * sd, "{empirical} vs {exact}");
}

/// `policy` with a random action at a `fraction` of the states.
fn perturbed(problem: &IcrlProblem, policy: &GreedyPolicy, fraction: f64, key: StreamKey) -> Vec<Action> {
    let mut rng = key.rng();
    (0..problem.map.state_slots())
        .map(|i| {
            let s = problem.map.state_at(i);
            if rng.gen_bool(fraction) {
                Action::from_index(rng.gen_range(0..3)).unwrap()
            } else {
                policy.action(&s)
            }
        })
        .collect()
}

#[test]
fn composition_respects_the_lower_bound() {
    let mut interior = 0;
    for seed in 0..10u64 {
        let problem = common::three_rooms();
        let trained = train_all(&problem, &[20_000; 3], seed);
        let fraction = 0.05 + 0.02 * seed as f64;
        let tables: Vec<Vec<Action>> = trained
            .iter()
            .enumerate()
            .map(|(c, pol)| perturbed(&problem, pol, fraction, StreamKey::new(seed, tag::TEST, c as u64, 1)))
            .collect();
        let map = &problem.map;
        let policies: Vec<_> = tables
            .iter()
            .map(|t| move |s: &EnvState| t[map.state_index(s)])
            .collect();
        let minima = exact_minima(&problem, &policies);
        let (predicted, empirical) = evaluate(&problem, &policies, &minima, 10_000, seed);
        if predicted > 0.05 && predicted < 0.95 {
            interior += 1;
        }
        // exact composition is never below the product of worst-entry values
        let exact = chain_success(&problem, &policies);
        assert!(exact >= predicted - 1e-12, "seed {seed}: {exact} < {predicted}");
        assert!(empirical >= predicted - 0.015, "seed {seed}: {empirical} < {predicted}");
    }
    assert!(interior >= 4, "only {interior} informative instances");
}

fn small_config(seed: u64, exec: Execution) -> IcrlConfig {
    IcrlConfig {
        delta: 0.1,
        n_train: 5_000,
        n_max: 60_000,
        estimator: EstimatorConfig {
            rollouts: 200,
            ..EstimatorConfig::default()
        },
        eval_episodes: 200,
        seed,
        exec,
        ..IcrlConfig::default()
    }
}

#[test]
fn reruns_are_bit_identical() {
    let problem = common::three_rooms();
    let learner = QLearning {
        decay_steps: 60_000,
        ..QLearning::default()
    };
    let a = run_icrl(&problem, &learner, &small_config(3, Execution::Parallel)).unwrap();
    let b = run_icrl(&problem, &learner, &small_config(3, Execution::Parallel)).unwrap();
    let c = run_icrl(&problem, &learner, &small_config(3, Execution::Sequential)).unwrap();
    assert!(!a.log.is_empty());
    assert_eq!(a.log, b.log);
    assert_eq!(a.log, c.log);
    for ((x, y), z) in a.states.iter().zip(&b.states).zip(&c.states) {
        assert_eq!(x.to_text(), y.to_text());
        assert_eq!(x.to_text(), z.to_text());
    }
    assert_eq!(a.empirical_success.to_bits(), c.empirical_success.to_bits());
    let other = run_icrl(&problem, &learner, &small_config(4, Execution::Parallel)).unwrap();
    assert_ne!(a.log, other.log);
}

#[test]
fn loop_log_invariants() {
    let problem = common::three_rooms();
    let learner = QLearning {
        decay_steps: 60_000,
        ..QLearning::default()
    };
    let config = small_config(8, Execution::Parallel);
    let out = run_icrl(&problem, &learner, &config).unwrap();
    assert_eq!(out.termination, Termination::Success);
    assert!(out.predicted_success > 0.9);
    for (i, row) in out.log.iter().enumerate() {
        assert_eq!(row.iteration, i + 1);
        assert_eq!(row.total_steps, config.n_train * (i as u64 + 1));
        assert!(row.feasible);
        // capped ids are exactly the exhausted ones, capped at their estimate
        for c in 0..3 {
            if let Some(u) = row.upper[c] {
                assert_eq!(u, row.lower[c]);
            }
        }
    }
    assert!(out.steps.iter().all(|&s| s <= config.n_max));
    assert_eq!(out.steps.iter().sum::<u64>(), out.total_steps);
}
