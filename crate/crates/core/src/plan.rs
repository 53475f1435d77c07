//! Planning in the HLM for fixed parameters: maximal reachability of the goal
//! state, the optimal deterministic meta-policy, and its lifting to
//! environment states.

use serde::Serialize;
use thiserror::Error;

use crate::env::EnvState;
use crate::subsystems::{Hlm, ParamVector, SubsystemId};

pub const VI_TOLERANCE: f64 = 1e-10;
pub const VI_MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("value iteration did not converge: residual {residual} after {sweeps} sweeps")]
    NonConvergence { residual: f64, sweeps: usize },
    #[error("no subsystem is available in the class of {0}")]
    NoSubsystemAvailable(EnvState),
    #[error("expected {expected} parameters, got {found}")]
    WrongLength { expected: usize, found: usize },
}

/// Reachability probability of the goal state from every abstract state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueVector {
    pub v: Vec<f64>,
    /// Sweeps performed before the residual dropped below tolerance.
    pub sweeps: usize,
}

impl ValueVector {
    pub fn get(&self, s: usize) -> f64 {
        self.v[s]
    }
}

/// Deterministic HLM policy: a subsystem for each abstract state that has
/// one available, `None` on goal, fail and dead-end classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetaPolicy {
    pub choice: Vec<Option<SubsystemId>>,
}

impl MetaPolicy {
    pub fn get(&self, s: usize) -> Option<SubsystemId> {
        self.choice[s]
    }
}

fn check_len(hlm: &Hlm, p: &ParamVector) -> Result<(), PlanError> {
    if p.len() != hlm.num_subsystems() {
        return Err(PlanError::WrongLength {
            expected: hlm.num_subsystems(),
            found: p.len(),
        });
    }
    Ok(())
}

/// Maximal probability of eventually reaching the goal state.
///
/// Synchronous value iteration from `v = 0`, which converges to the
/// least fixed point of `v(s) = max_c p_c * v(succ(c))` even when the model
/// has cycles of certain success.
pub fn max_reachability(hlm: &Hlm, p: &ParamVector) -> Result<ValueVector, PlanError> {
    check_len(hlm, p)?;
    iterate(hlm, |s, v| {
        hlm.available(s)
            .iter()
            .map(|&c| p.get(c) * v[hlm.succ(c)])
            .fold(0.0, f64::max)
    })
}

/// Goal reachability under a fixed meta-policy (no maximisation).
pub fn policy_values(
    hlm: &Hlm,
    p: &ParamVector,
    meta: &MetaPolicy,
) -> Result<ValueVector, PlanError> {
    check_len(hlm, p)?;
    iterate(hlm, |s, v| match meta.get(s) {
        Some(c) => p.get(c) * v[hlm.succ(c)],
        None => 0.0,
    })
}

fn iterate<F>(hlm: &Hlm, backup: F) -> Result<ValueVector, PlanError>
where
    F: Fn(usize, &[f64]) -> f64,
{
    let n = hlm.num_states();
    let mut v = vec![0.0; n];
    v[hlm.goal_state()] = 1.0;
    let mut next = v.clone();
    let mut residual = f64::INFINITY;
    for sweep in 1..=VI_MAX_SWEEPS {
        residual = 0.0;
        for s in 0..n {
            if hlm.is_terminal(s) {
                continue;
            }
            let val = backup(s, &v);
            residual = f64::max(residual, (val - v[s]).abs());
            next[s] = val;
        }
        std::mem::swap(&mut v, &mut next);
        if residual <= VI_TOLERANCE {
            return Ok(ValueVector { v, sweeps: sweep });
        }
    }
    Err(PlanError::NonConvergence {
        residual,
        sweeps: VI_MAX_SWEEPS,
    })
}

/// Greedy policy with respect to the maximal reachability values. Ties go to
/// the smallest subsystem id.
pub fn extract_meta_policy(hlm: &Hlm, p: &ParamVector) -> Result<MetaPolicy, PlanError> {
    let values = max_reachability(hlm, p)?;
    Ok(greedy(hlm, p, &values))
}

fn greedy(hlm: &Hlm, p: &ParamVector, values: &ValueVector) -> MetaPolicy {
    let choice = (0..hlm.num_states())
        .map(|s| {
            if hlm.is_terminal(s) {
                return None;
            }
            let mut best: Option<(SubsystemId, f64)> = None;
            for &c in hlm.available(s) {
                let q = p.get(c) * values.get(hlm.succ(c));
                // available lists are ascending, so strict > keeps the lowest id on ties
                if best.is_none_or(|(_, b)| q > b) {
                    best = Some((c, q));
                }
            }
            best.map(|(c, _)| c)
        })
        .collect();
    MetaPolicy { choice }
}

/// Optimal meta-policy and its predicted task success for the given
/// per-subsystem success estimates.
pub fn plan(hlm: &Hlm, p: &ParamVector) -> Result<(MetaPolicy, f64), PlanError> {
    let values = max_reachability(hlm, p)?;
    let meta = greedy(hlm, p, &values);
    Ok((meta, values.get(hlm.init_state())))
}

/// HLM-predicted probability of task success from the initial state.
pub fn predict_task_success(hlm: &Hlm, sigma_hat: &ParamVector) -> Result<f64, PlanError> {
    Ok(max_reachability(hlm, sigma_hat)?.get(hlm.init_state()))
}

/// Subsystem the lifted meta-policy executes from environment state `s`.
pub fn lift(meta: &MetaPolicy, hlm: &Hlm, s: &EnvState) -> Result<SubsystemId, PlanError> {
    meta.get(hlm.abstract_of(s))
        .ok_or(PlanError::NoSubsystemAvailable(*s))
}
