//! Success estimation for trained subsystem policies.
//!
//! A rollout of subsystem `c` starts in an entry state and succeeds when it
//! reaches the exit set within the horizon. Lava ends it as a failure. An
//! entry state that already lies in the exit set counts as an immediate
//! success.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::env::{EnvState, LabyrinthMap};
use crate::exec::{Execution, StreamKey};
use crate::subsystems::SubsystemSpec;
use crate::trainer::Policy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("number of rollouts must be positive")]
    NoRollouts,
    #[error("confidence parameter {0} outside (0, 1)")]
    InvalidBeta(f64),
    #[error("slip probability {0} outside [0, 1]")]
    InvalidSlip(f64),
    #[error("subsystem {0} has an empty entry set")]
    EmptyEntry(usize),
    #[error("entry state {0} is not a free cell of the map")]
    BadEntry(EnvState),
}

/// How rollout start states are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    /// Start states drawn uniformly from the entry set.
    #[default]
    Uniform,
    /// `n` rollouts from every entry state, reporting the worst entry.
    MinOverEntries,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub rollouts: u64,
    pub beta: f64,
    pub mode: EstimateMode,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            rollouts: 300,
            beta: 0.05,
            mode: EstimateMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessEstimate {
    pub sigma_hat: f64,
    pub successes: u64,
    pub rollouts: u64,
    /// Half-width of the two-sided Hoeffding interval at level `1 - beta`.
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Half-width `sqrt(ln(2 / beta) / (2 n))` of the Hoeffding interval.
pub fn hoeffding_width(n: u64, beta: f64) -> f64 {
    ((2.0 / beta).ln() / (2.0 * n as f64)).sqrt()
}

fn validate(
    map: &LabyrinthMap,
    spec: &SubsystemSpec,
    slip: f64,
) -> Result<Vec<EnvState>, EstimateError> {
    if !(0.0..=1.0).contains(&slip) {
        return Err(EstimateError::InvalidSlip(slip));
    }
    let entries = spec.entry_states();
    if entries.is_empty() {
        return Err(EstimateError::EmptyEntry(spec.id));
    }
    if let Some(bad) = entries.iter().find(|s| !s.is_alive() || !map.is_free(s.x, s.y)) {
        return Err(EstimateError::BadEntry(*bad));
    }
    Ok(entries)
}

/// Runs `policy` from `start` for at most the horizon. Returns the exit
/// state reached, or `None` on lava or timeout.
pub fn run_subsystem<P: Policy + ?Sized, R: Rng + ?Sized>(
    map: &LabyrinthMap,
    spec: &SubsystemSpec,
    slip: f64,
    policy: &P,
    start: EnvState,
    rng: &mut R,
) -> Option<EnvState> {
    let mut s = start;
    for _ in 0..spec.horizon {
        if spec.exit.contains(&s) {
            return Some(s);
        }
        s = map.step_unchecked(&s, policy.action(&s), slip, rng);
        if !s.is_alive() {
            return None;
        }
    }
    spec.exit.contains(&s).then_some(s)
}

/// One rollout of `policy` from `start`. Returns whether the exit set was
/// reached within the horizon.
pub fn rollout<P: Policy + ?Sized, R: Rng + ?Sized>(
    map: &LabyrinthMap,
    spec: &SubsystemSpec,
    slip: f64,
    policy: &P,
    start: EnvState,
    rng: &mut R,
) -> bool {
    run_subsystem(map, spec, slip, policy, start, rng).is_some()
}

/// Monte Carlo estimate of the subsystem's success probability. Rollout `i`
/// draws from substream `i` of `key`, so the result does not depend on
/// `exec`.
pub fn estimate_success<P: Policy + ?Sized>(
    map: &LabyrinthMap,
    spec: &SubsystemSpec,
    slip: f64,
    policy: &P,
    config: &EstimatorConfig,
    key: StreamKey,
    exec: Execution,
) -> Result<SuccessEstimate, EstimateError> {
    if config.rollouts == 0 {
        return Err(EstimateError::NoRollouts);
    }
    if !(config.beta > 0.0 && config.beta < 1.0) {
        return Err(EstimateError::InvalidBeta(config.beta));
    }
    let entries = validate(map, spec, slip)?;
    let n = config.rollouts;
    match config.mode {
        EstimateMode::Uniform => {
            let successes = exec.count_indexed(n as usize, |i| {
                let mut rng = key.substream(i as u64);
                let start = entries[rng.gen_range(0..entries.len())];
                rollout(map, spec, slip, policy, start, &mut rng)
            }) as u64;
            Ok(summarise(successes, n, config.beta))
        }
        EstimateMode::MinOverEntries => {
            let beta = config.beta / entries.len() as f64;
            let per_entry = exec.map_indexed(entries.len(), |e| {
                let successes = (0..n)
                    .filter(|&i| {
                        let mut rng = key.substream(e as u64 * n + i);
                        rollout(map, spec, slip, policy, entries[e], &mut rng)
                    })
                    .count() as u64;
                summarise(successes, n, beta)
            });
            Ok(per_entry
                .into_iter()
                .reduce(|a, b| if b.sigma_hat < a.sigma_hat { b } else { a })
                .expect("entry set nonempty"))
        }
    }
}

fn summarise(successes: u64, n: u64, beta: f64) -> SuccessEstimate {
    let sigma_hat = successes as f64 / n as f64;
    let half_width = hoeffding_width(n, beta);
    SuccessEstimate {
        sigma_hat,
        successes,
        rollouts: n,
        half_width,
        lower: (sigma_hat - half_width).max(0.0),
        upper: (sigma_hat + half_width).min(1.0),
    }
}

/// Exact success probabilities of a policy, by finite-horizon dynamic
/// programming.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactSuccess {
    /// Success probability from each entry state, sorted by state.
    pub per_entry: Vec<(EnvState, f64)>,
    /// Worst entry state.
    pub min: f64,
    /// Average over a uniformly drawn entry state.
    pub mean: f64,
}

/// `u_0(s) = [s in exit]`, `u_{t+1}(s) = 1` on the exit set and the expected
/// `u_t` of the successor otherwise; dead states are worth 0. Returns
/// `u_horizon` on the entry states.
pub fn exact_subtask_success<P: Policy + ?Sized>(
    map: &LabyrinthMap,
    spec: &SubsystemSpec,
    slip: f64,
    policy: &P,
) -> Result<ExactSuccess, EstimateError> {
    let entries = validate(map, spec, slip)?;
    let u = success_table(map, spec, slip, policy, spec.horizon);
    let per_entry: Vec<(EnvState, f64)> = entries
        .iter()
        .map(|s| (*s, u[map.state_index(s)]))
        .collect();
    let min = per_entry.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
    let mean = per_entry.iter().map(|(_, v)| *v).sum::<f64>() / per_entry.len() as f64;
    Ok(ExactSuccess { per_entry, min, mean })
}

/// `u_t` over the dense state index for `t = steps`.
pub fn success_table<P: Policy + ?Sized>(
    map: &LabyrinthMap,
    spec: &SubsystemSpec,
    slip: f64,
    policy: &P,
    steps: usize,
) -> Vec<f64> {
    let slots = map.state_slots();
    let mut exit = vec![false; slots];
    for s in &spec.exit {
        if s.x < map.width() && s.y < map.height() {
            exit[map.state_index(s)] = true;
        }
    }
    // successor lists under the policy, dead successors dropped
    let alive: Vec<EnvState> = map.alive_states().collect();
    let moves: Vec<(usize, Vec<(usize, f64)>)> = alive
        .iter()
        .filter(|s| !exit[map.state_index(s)])
        .map(|s| {
            let dist = map
                .transition_distribution(s, policy.action(s), slip)
                .expect("alive state on a free cell");
            let succ = dist
                .into_iter()
                .filter(|(t, _)| t.is_alive())
                .map(|(t, p)| (map.state_index(&t), p))
                .collect();
            (map.state_index(s), succ)
        })
        .collect();
    let mut u: Vec<f64> = exit.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect();
    let mut next = u.clone();
    for _ in 0..steps {
        for (i, succ) in &moves {
            next[*i] = succ.iter().map(|&(j, p)| p * u[j]).sum();
        }
        std::mem::swap(&mut u, &mut next);
    }
    u
}
