//! The iterative compositional training loop and whole-task evaluation.
//!
//! Each iteration decomposes the task requirement into per-subsystem targets
//! given the current estimates, trains the subsystem furthest below its
//! target, re-estimates it, and replans the meta-policy. The loop stops once
//! the HLM predicts task success above `1 - delta`, or when the remaining
//! budgets cannot reach that level.

use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::decompose::{solve_decomposition, DecomposeError, DecompositionProblem};
use crate::env::{EnvState, LabyrinthMap};
use crate::estimator::{estimate_success, run_subsystem, EstimateError, EstimatorConfig};
use crate::exec::{tag, Execution, StreamKey};
use crate::plan::{lift, plan, MetaPolicy, PlanError};
use crate::subsystems::{build_hlm, Hlm, HlmError, ParamVector, SubsystemId, SubsystemSpec};
use crate::trainer::{Policy, SubsystemTrainer, TrainContext, TrainError};

/// Subsystem executions per evaluation episode before it is counted as a
/// failure; only reachable when the meta-policy cycles.
pub const MAX_EXECUTIONS: usize = 1_000;

#[derive(Debug, Error)]
pub enum IcrlError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("every subsystem has exhausted its training budget")]
    AllExhausted,
    #[error(transparent)]
    Hlm(#[from] HlmError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// The compositional task: dynamics, subsystem interfaces, initial state and
/// target set.
#[derive(Debug, Clone)]
pub struct IcrlProblem {
    pub map: LabyrinthMap,
    pub slip: f64,
    pub specs: Vec<SubsystemSpec>,
    pub init: EnvState,
    pub target: BTreeSet<EnvState>,
}

#[derive(Debug, Clone)]
pub struct IcrlConfig {
    pub delta: f64,
    /// Training steps per iteration.
    pub n_train: u64,
    /// Per-subsystem training budget.
    pub n_max: u64,
    pub estimator: EstimatorConfig,
    /// Episodes per whole-task evaluation.
    pub eval_episodes: u64,
    /// Evaluate every this many iterations; 0 disables periodic evaluation.
    pub eval_every: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for IcrlConfig {
    fn default() -> Self {
        IcrlConfig {
            delta: 0.05,
            n_train: 50_000,
            n_max: 500_000,
            estimator: EstimatorConfig::default(),
            eval_episodes: 300,
            eval_every: 1,
            seed: 0,
            exec: Execution::default(),
        }
    }
}

impl IcrlConfig {
    fn validate(&self) -> Result<(), IcrlError> {
        let bad = |m: &str| Err(IcrlError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.delta) {
            return bad("delta must lie in [0, 1]");
        }
        if self.n_train == 0 {
            return bad("n_train must be positive");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive");
        }
        Ok(())
    }
}

/// One iteration of the loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    /// 1-based.
    pub iteration: usize,
    /// Training steps over all subsystems after this iteration.
    pub total_steps: u64,
    pub trained_id: SubsystemId,
    /// Estimates after this iteration's training.
    pub sigma_hat: Vec<f64>,
    /// Targets from this iteration's decomposition.
    pub p: Vec<f64>,
    /// Bounds the decomposition was solved with.
    pub lower: Vec<f64>,
    pub upper: Vec<Option<f64>>,
    pub support_path: Vec<SubsystemId>,
    pub predicted_success: f64,
    pub empirical_success: Option<f64>,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Predicted task success exceeded `1 - delta`.
    Success,
    /// No parameter assignment within the bounds meets the requirement.
    Infeasible,
    /// The decomposition was feasible but every subsystem was out of budget.
    AllExhausted,
}

/// Result of a run. Infeasible runs are reported here too, together with
/// the log up to that point.
#[derive(Debug, Clone)]
pub struct IcrlOutcome<S, P> {
    pub termination: Termination,
    pub hlm: Hlm,
    pub log: Vec<RunRow>,
    /// Learner state per subsystem.
    pub states: Vec<S>,
    pub policies: Vec<P>,
    pub meta: MetaPolicy,
    pub sigma_hat: Vec<f64>,
    /// Training steps per subsystem.
    pub steps: Vec<u64>,
    pub total_steps: u64,
    pub predicted_success: f64,
    pub empirical_success: f64,
}

/// Subsystem with the largest gap `p_c - sigma_hat_c` among those not
/// exhausted, ties to the lowest id. When no gap is positive, the lowest
/// non-exhausted subsystem on `support` is returned, else the lowest
/// non-exhausted one.
pub fn select_subsystem(
    p: &ParamVector,
    sigma_hat: &ParamVector,
    exhausted: &BTreeSet<SubsystemId>,
    support: &[SubsystemId],
) -> Result<SubsystemId, IcrlError> {
    let open: Vec<SubsystemId> = (0..p.len()).filter(|c| !exhausted.contains(c)).collect();
    let mut best: Option<(SubsystemId, f64)> = None;
    for &c in &open {
        let gap = p.get(c) - sigma_hat.get(c);
        if best.is_none_or(|(_, g)| gap > g) {
            best = Some((c, gap));
        }
    }
    match best {
        None => Err(IcrlError::AllExhausted),
        Some((c, gap)) if gap > 0.0 => Ok(c),
        Some(_) => Ok(support
            .iter()
            .copied()
            .filter(|s| !exhausted.contains(s))
            .min()
            .unwrap_or(open[0])),
    }
}

/// Fraction of `episodes` whole-task runs that reach the target.
///
/// Each episode starts at `init`, repeatedly executes the subsystem the
/// lifted meta-policy picks, and succeeds when a subsystem leading to the
/// goal class exits. Lava, a timeout, or landing outside every entry set is a
/// failure. Episode `i` uses substream `i` of `key`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_meta_policy<P: Policy>(
    map: &LabyrinthMap,
    slip: f64,
    specs: &[SubsystemSpec],
    policies: &[P],
    meta: &MetaPolicy,
    hlm: &Hlm,
    init: EnvState,
    episodes: u64,
    key: StreamKey,
    exec: Execution,
) -> Result<f64, PlanError> {
    lift(meta, hlm, &init)?;
    let outcomes = exec.map_indexed(episodes as usize, |i| {
        let mut rng = key.substream(i as u64);
        episode(map, slip, specs, policies, meta, hlm, init, &mut rng)
    });
    let mut successes = 0u64;
    for o in outcomes {
        successes += o? as u64;
    }
    Ok(successes as f64 / episodes as f64)
}

#[allow(clippy::too_many_arguments)]
fn episode<P: Policy, R: Rng>(
    map: &LabyrinthMap,
    slip: f64,
    specs: &[SubsystemSpec],
    policies: &[P],
    meta: &MetaPolicy,
    hlm: &Hlm,
    init: EnvState,
    rng: &mut R,
) -> Result<bool, PlanError> {
    let mut s = init;
    for _ in 0..MAX_EXECUTIONS {
        let class = hlm.abstract_of(&s);
        if class == hlm.fail_state() {
            return Ok(false);
        }
        let c = lift(meta, hlm, &s)?;
        match run_subsystem(map, &specs[c], slip, &policies[c], s, rng) {
            None => return Ok(false),
            Some(_) if hlm.succ(c) == hlm.goal_state() => return Ok(true),
            Some(next) => s = next,
        }
    }
    Ok(false)
}

/// Runs the loop to completion.
pub fn run_icrl<T: SubsystemTrainer>(
    problem: &IcrlProblem,
    trainer: &T,
    config: &IcrlConfig,
) -> Result<IcrlOutcome<T::State, T::Policy>, IcrlError> {
    run_icrl_with(problem, trainer, config, |_| {})
}

/// [`run_icrl`], calling `on_row` as each iteration is logged.
pub fn run_icrl_with<T, F>(
    problem: &IcrlProblem,
    trainer: &T,
    config: &IcrlConfig,
    mut on_row: F,
) -> Result<IcrlOutcome<T::State, T::Policy>, IcrlError>
where
    T: SubsystemTrainer,
    F: FnMut(&RunRow),
{
    config.validate()?;
    let hlm = build_hlm(&problem.specs, &problem.init, &problem.target)?;
    let mut specs = problem.specs.clone();
    specs.sort_by_key(|s| s.id);
    let k = specs.len();
    let ctx = |c: usize| TrainContext {
        map: &problem.map,
        spec: &specs[c],
        slip: problem.slip,
    };

    let mut states: Vec<T::State> = (0..k).map(|c| trainer.init_state(&ctx(c))).collect();
    let mut sigma_hat = vec![0.0; k];
    let mut steps = vec![0u64; k];
    let mut lower = vec![0.0; k];
    let mut upper: Vec<Option<f64>> = vec![None; k];
    let mut exhausted = BTreeSet::new();
    // with a zero budget nothing can ever be trained
    for c in 0..k {
        if steps[c] >= config.n_max {
            exhausted.insert(c);
            upper[c] = Some(sigma_hat[c]);
        }
    }

    let zero = ParamVector::zeros(k);
    let (mut meta, mut predicted) = plan(&hlm, &zero)?;
    let mut empirical = None;
    let mut log: Vec<RunRow> = Vec::new();
    let threshold = 1.0 - config.delta;
    let mut total_steps = 0u64;

    let termination = loop {
        if predicted > threshold {
            break Termination::Success;
        }
        let problem_d = DecompositionProblem::new(&hlm, config.delta)
            .with_lower(lower.clone())
            .with_upper(upper.clone());
        let solution = solve_decomposition(&problem_d, config.exec)?;
        if !solution.feasible {
            break Termination::Infeasible;
        }
        let sig = ParamVector::new(sigma_hat.clone()).expect("estimates are probabilities");
        let j = match select_subsystem(&solution.p, &sig, &exhausted, &solution.support_path) {
            Ok(j) => j,
            Err(IcrlError::AllExhausted) => break Termination::AllExhausted,
            Err(e) => return Err(e),
        };
        let iteration = log.len() + 1;
        let it = iteration as u64;

        let used = trainer.train(
            &mut states[j],
            &ctx(j),
            config.n_train,
            StreamKey::new(config.seed, tag::TRAIN, j as u64, it),
        )?;
        steps[j] += used;
        total_steps += used;

        let policy = trainer.policy(&states[j]);
        let est = estimate_success(
            &problem.map,
            &specs[j],
            problem.slip,
            &policy,
            &config.estimator,
            StreamKey::new(config.seed, tag::ESTIMATE, j as u64, it),
            config.exec,
        )?;
        sigma_hat[j] = est.sigma_hat;
        lower[j] = est.sigma_hat;
        if steps[j] >= config.n_max {
            exhausted.insert(j);
            upper[j] = Some(est.sigma_hat);
        }

        let sig = ParamVector::new(sigma_hat.clone()).expect("estimates are probabilities");
        (meta, predicted) = plan(&hlm, &sig)?;
        empirical = None;
        if config.eval_every > 0 && iteration.is_multiple_of(config.eval_every) {
            let policies: Vec<T::Policy> = states.iter().map(|s| trainer.policy(s)).collect();
            empirical = Some(evaluate(problem, &specs, &policies, &meta, &hlm, config, it)?);
        }

        let row = RunRow {
            iteration,
            total_steps,
            trained_id: j,
            sigma_hat: sigma_hat.clone(),
            p: solution.p.into_inner(),
            lower: problem_d.lower,
            upper: problem_d.upper,
            support_path: solution.support_path,
            predicted_success: predicted,
            empirical_success: empirical,
            feasible: true,
        };
        on_row(&row);
        log.push(row);
    };

    let policies: Vec<T::Policy> = states.iter().map(|s| trainer.policy(s)).collect();
    let empirical_success = match empirical {
        Some(e) => e,
        None => evaluate(problem, &specs, &policies, &meta, &hlm, config, log.len() as u64 + 1)?,
    };
    Ok(IcrlOutcome {
        termination,
        hlm,
        log,
        states,
        policies,
        meta,
        sigma_hat,
        steps,
        total_steps,
        predicted_success: predicted,
        empirical_success,
    })
}

fn evaluate<P: Policy>(
    problem: &IcrlProblem,
    specs: &[SubsystemSpec],
    policies: &[P],
    meta: &MetaPolicy,
    hlm: &Hlm,
    config: &IcrlConfig,
    counter: u64,
) -> Result<f64, IcrlError> {
    Ok(evaluate_meta_policy(
        &problem.map,
        problem.slip,
        specs,
        policies,
        meta,
        hlm,
        problem.init,
        config.eval_episodes,
        StreamKey::new(config.seed, tag::EVALUATE, 0, counter),
        config.exec,
    )?)
}
