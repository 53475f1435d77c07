//! Decomposition of the task requirement into per-subsystem success
//! thresholds.
//!
//! We look for parameters `p` minimising `sum_c (p_c - lower_c)` subject to
//! `lower_c <= p_c <= upper_c` and the existence of an HLM policy reaching the
//! goal with probability at least `1 - delta`.
//!
//! For fixed `p` an optimal deterministic memoryless HLM policy exists, and
//! under such a policy the run either follows one simple path to the goal or
//! never gets there. The achieved probability is therefore the product of
//! `p_c` along a single simple path, and the optimum puts every off-path
//! parameter at its lower bound. [`solve_decomposition`] enumerates the simple
//! init-to-goal paths and solves each one by waterfilling: the minimum of a
//! sum under a product constraint with box bounds sets every unclamped entry
//! to one common level.
//!
//! [`oracle_grid_solve`] is an independent brute-force search over a grid of
//! parameter values that only uses [`max_reachability`] as its feasibility
//! test.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;
use thiserror::Error;

use crate::exec::Execution;
use crate::plan::{extract_meta_policy, max_reachability, PlanError};
use crate::subsystems::{Hlm, ParamVector, SubsystemId};

pub const MAX_PATHS: usize = 100_000;
pub const LEVEL_TOLERANCE: f64 = 1e-12;
pub const CERTIFY_TOLERANCE: f64 = 1e-9;
pub const ORACLE_MAX_PARAMETERS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecomposeError {
    #[error("more than {limit} simple paths from the initial to the goal state")]
    PathExplosion { limit: usize },
    #[error("grid oracle supports at most {limit} subsystems, got {found}")]
    TooManyParameters { limit: usize, found: usize },
    #[error("invalid decomposition problem: {0}")]
    InvalidProblem(String),
    #[error("solution reaches the goal with {achieved}, below the required {required}")]
    CertificationFailed { achieved: f64, required: f64 },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Decomposition instance: the model, the allowed failure probability and
/// per-subsystem bounds. A missing upper bound means 1.
#[derive(Debug, Clone)]
pub struct DecompositionProblem<'a> {
    pub hlm: &'a Hlm,
    pub delta: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<Option<f64>>,
}

impl<'a> DecompositionProblem<'a> {
    pub fn new(hlm: &'a Hlm, delta: f64) -> Self {
        let k = hlm.num_subsystems();
        DecompositionProblem {
            hlm,
            delta,
            lower: vec![0.0; k],
            upper: vec![None; k],
        }
    }

    pub fn with_lower(mut self, lower: Vec<f64>) -> Self {
        self.lower = lower;
        self
    }

    pub fn with_upper(mut self, upper: Vec<Option<f64>>) -> Self {
        self.upper = upper;
        self
    }

    pub fn threshold(&self) -> f64 {
        1.0 - self.delta
    }

    fn upper_of(&self, c: SubsystemId) -> f64 {
        self.upper[c].map_or(1.0, |u| u.min(1.0))
    }

    fn validate(&self) -> Result<(), DecomposeError> {
        let k = self.hlm.num_subsystems();
        let bad = |m: String| Err(DecomposeError::InvalidProblem(m));
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta {} outside [0, 1]", self.delta));
        }
        if self.lower.len() != k || self.upper.len() != k {
            return bad(format!("bounds must have one entry per subsystem ({k})"));
        }
        for c in 0..k {
            if !(0.0..=1.0).contains(&self.lower[c]) {
                return bad(format!("lower bound of {c} is {}", self.lower[c]));
            }
            if let Some(u) = self.upper[c] {
                if !(0.0..=1.0).contains(&u) {
                    return bad(format!("upper bound of {c} is {u}"));
                }
            }
        }
        Ok(())
    }

    fn bounds_consistent(&self) -> bool {
        (0..self.lower.len()).all(|c| self.lower[c] <= self.upper_of(c))
    }
}

/// A simple path of the HLM from the initial state to the goal state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HlmPath {
    /// Visited abstract states, initial state first, goal state last.
    pub states: Vec<usize>,
    /// Subsystem executed on each hop; one shorter than `states`.
    pub subsystems: Vec<SubsystemId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionResult {
    pub p: ParamVector,
    /// Subsystems of the supporting path, empty when infeasible.
    pub support_path: Vec<SubsystemId>,
    /// `sum_c (p_c - lower_c)`; infinite when infeasible.
    pub objective: f64,
    pub feasible: bool,
}

/// Outcome of waterfilling one path.
#[derive(Debug, Clone, PartialEq)]
pub enum Waterfill {
    Feasible {
        /// Value per hop of the path.
        values: Vec<f64>,
        /// Common level of the unclamped entries.
        level: f64,
    },
    Infeasible,
}

/// All simple init-to-goal paths in lexicographic order of their subsystem
/// sequences.
pub fn enumerate_paths(hlm: &Hlm) -> Result<Vec<HlmPath>, DecomposeError> {
    let mut paths = Vec::new();
    let mut on_path = vec![false; hlm.num_states()];
    let mut states = vec![hlm.init_state()];
    let mut subsystems = Vec::new();
    on_path[hlm.init_state()] = true;
    dfs(hlm, &mut on_path, &mut states, &mut subsystems, &mut paths)?;
    Ok(paths)
}

fn dfs(
    hlm: &Hlm,
    on_path: &mut [bool],
    states: &mut Vec<usize>,
    subsystems: &mut Vec<SubsystemId>,
    out: &mut Vec<HlmPath>,
) -> Result<(), DecomposeError> {
    let here = *states.last().expect("path is nonempty");
    // available lists are ascending, so depth-first order is lexicographic
    for &c in hlm.available(here) {
        let next = hlm.succ(c);
        if next == hlm.fail_state() || on_path[next] {
            continue;
        }
        states.push(next);
        subsystems.push(c);
        if next == hlm.goal_state() {
            if out.len() == MAX_PATHS {
                return Err(DecomposeError::PathExplosion { limit: MAX_PATHS });
            }
            out.push(HlmPath {
                states: states.clone(),
                subsystems: subsystems.clone(),
            });
        } else {
            on_path[next] = true;
            dfs(hlm, on_path, states, subsystems, out)?;
            on_path[next] = false;
        }
        states.pop();
        subsystems.pop();
    }
    Ok(())
}

/// Minimises `sum p_c` over the path subject to `prod p_c >= threshold` and
/// `lower_c <= p_c <= min(1, upper_c)`.
///
/// The optimum is `p_c = clamp(level, lower_c, upper_c)` for the smallest
/// level meeting the product constraint. Bisection locates which entries
/// are clamped; the level of the rest is then solved in closed form.
pub fn waterfill_path(
    path: &HlmPath,
    threshold: f64,
    lower: &[f64],
    upper: &[Option<f64>],
) -> Waterfill {
    let bounds: Vec<(f64, f64)> = path
        .subsystems
        .iter()
        .map(|&c| (lower[c], upper[c].map_or(1.0, |u| u.min(1.0))))
        .collect();
    if bounds.iter().any(|&(lo, hi)| lo > hi) {
        return Waterfill::Infeasible;
    }
    let product = |level: f64| -> f64 {
        bounds
            .iter()
            .map(|&(lo, hi)| level.clamp(lo, hi))
            .product()
    };
    let values_at = |level: f64| -> Vec<f64> {
        bounds.iter().map(|&(lo, hi)| level.clamp(lo, hi)).collect()
    };
    if product(1.0) < threshold {
        return Waterfill::Infeasible;
    }
    if product(0.0) >= threshold {
        return Waterfill::Feasible {
            values: values_at(0.0),
            level: 0.0,
        };
    }
    // invariant: product(below) < threshold <= product(above)
    let (mut below, mut above) = (0.0_f64, 1.0_f64);
    while above - below > LEVEL_TOLERANCE {
        let mid = 0.5 * (below + above);
        if product(mid) >= threshold {
            above = mid;
        } else {
            below = mid;
        }
    }
    // finish in closed form on the entries left strictly inside their bounds
    let (mut fixed, mut free) = (1.0, 0);
    for &(lo, hi) in &bounds {
        if lo < above && above < hi {
            free += 1;
        } else {
            fixed *= above.clamp(lo, hi);
        }
    }
    let mut level = above;
    if free > 0 && fixed > 0.0 {
        let mut exact = (threshold / fixed).powf(1.0 / free as f64);
        for _ in 0..64 {
            if product(exact) >= threshold {
                break;
            }
            exact = exact.next_up();
        }
        if exact <= above && product(exact) >= threshold {
            level = exact;
        }
    }
    Waterfill::Feasible {
        values: values_at(level),
        level,
    }
}

/// Exact path-based solution of the decomposition problem.
pub fn solve_decomposition(
    problem: &DecompositionProblem<'_>,
    exec: Execution,
) -> Result<DecompositionResult, DecomposeError> {
    problem.validate()?;
    let hlm = problem.hlm;
    let paths = enumerate_paths(hlm)?;
    if !problem.bounds_consistent() {
        return Ok(infeasible(problem));
    }
    let threshold = problem.threshold();
    let fills = exec.map_slice(&paths, |path| {
        waterfill_path(path, threshold, &problem.lower, &problem.upper)
    });

    // paths are in lexicographic order; strict < keeps the first on ties
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for (i, fill) in fills.into_iter().enumerate() {
        if let Waterfill::Feasible { values, .. } = fill {
            let objective: f64 = paths[i]
                .subsystems
                .iter()
                .zip(&values)
                .map(|(&c, v)| v - problem.lower[c])
                .sum();
            if best.as_ref().is_none_or(|(b, _, _)| objective < *b) {
                best = Some((objective, i, values));
            }
        }
    }
    let Some((objective, i, values)) = best else {
        return Ok(infeasible(problem));
    };
    let mut p = problem.lower.clone();
    for (&c, v) in paths[i].subsystems.iter().zip(values) {
        p[c] = v;
    }
    let p = ParamVector::new(p).expect("values stay within bounds");
    certify(problem, &p)?;
    Ok(DecompositionResult {
        p,
        support_path: paths[i].subsystems.clone(),
        objective,
        feasible: true,
    })
}

fn infeasible(problem: &DecompositionProblem<'_>) -> DecompositionResult {
    DecompositionResult {
        p: ParamVector::new(problem.lower.clone()).expect("validated bounds"),
        support_path: Vec::new(),
        objective: f64::INFINITY,
        feasible: false,
    }
}

fn certify(problem: &DecompositionProblem<'_>, p: &ParamVector) -> Result<(), DecomposeError> {
    let achieved = max_reachability(problem.hlm, p)?.get(problem.hlm.init_state());
    let required = problem.threshold() - CERTIFY_TOLERANCE;
    if achieved < required {
        return Err(DecomposeError::CertificationFailed { achieved, required });
    }
    Ok(())
}

/// Brute-force grid search for the decomposition problem.
///
/// Each parameter ranges over `{lower_c} ∪ {k * resolution} ∪ {upper_c}`
/// inside its bounds. Feasibility of a grid point is checked with value
/// iteration on the HLM.
///
/// Two exact reductions keep the search small. A feasible point stays
/// feasible when every parameter outside the chain of subsystems executed by
/// some goal-reaching meta-policy drops to its lower bound, so only those
/// chains' coordinates are searched, one subspace per chain. Within a
/// subspace, feasibility is monotone and the objective increasing, so
/// branches whose cost plus a per-coordinate lower bound exceeds the best
/// point found are cut, and the last coordinate is bisected. Ties go to the
/// first chain in meta-policy enumeration order.
pub fn oracle_grid_solve(
    problem: &DecompositionProblem<'_>,
    resolution: f64,
    exec: Execution,
) -> Result<DecompositionResult, DecomposeError> {
    problem.validate()?;
    let hlm = problem.hlm;
    let k = hlm.num_subsystems();
    if k > ORACLE_MAX_PARAMETERS {
        return Err(DecomposeError::TooManyParameters {
            limit: ORACLE_MAX_PARAMETERS,
            found: k,
        });
    }
    let steps = (1.0 / resolution).round();
    if resolution.is_nan() || resolution <= 0.0 || steps < 1.0 || (steps * resolution - 1.0).abs() > 1e-9 {
        return Err(DecomposeError::InvalidProblem(format!(
            "resolution {resolution} must divide 1"
        )));
    }
    if !problem.bounds_consistent() || k == 0 {
        return Ok(infeasible(problem));
    }
    let chains = policy_chains(hlm);
    let Some((objective, point)) = grid_search(problem, &chains, steps as u64, 1, exec) else {
        return Ok(infeasible(problem));
    };
    let p = ParamVector::new(point).expect("grid values within [0, 1]");
    let support_path = follow_policy(hlm, &p)?;
    Ok(DecompositionResult {
        p,
        support_path,
        objective,
        feasible: true,
    })
}

/// Distinct sorted subsystem sets executed by the deterministic meta-policies
/// that reach the goal, in enumeration order.
fn policy_chains(hlm: &Hlm) -> Vec<Vec<SubsystemId>> {
    let deciding: Vec<usize> = (0..hlm.num_states())
        .filter(|&s| !hlm.is_terminal(s) && !hlm.available(s).is_empty())
        .collect();
    let mut choice = vec![None; hlm.num_states()];
    let mut chains = Vec::new();
    enumerate_policies(hlm, &deciding, &mut choice, &mut chains);
    chains
}

fn enumerate_policies(
    hlm: &Hlm,
    deciding: &[usize],
    choice: &mut [Option<SubsystemId>],
    chains: &mut Vec<Vec<SubsystemId>>,
) {
    let Some((&s, rest)) = deciding.split_first() else {
        let mut at = hlm.init_state();
        let mut used = Vec::new();
        let mut seen = vec![false; hlm.num_states()];
        while at != hlm.goal_state() {
            let Some(c) = choice[at].filter(|_| !seen[at]) else {
                return;
            };
            seen[at] = true;
            used.push(c);
            at = hlm.succ(c);
        }
        used.sort_unstable();
        used.dedup();
        if !chains.contains(&used) {
            chains.push(used);
        }
        return;
    };
    for &c in hlm.available(s) {
        choice[s] = Some(c);
        enumerate_policies(hlm, rest, choice, chains);
    }
    choice[s] = None;
}

/// Optimum over the grid with spacing `stride / n`. A coarser pass seeds the
/// incumbent; its grid is a subset of this one, so the seed is attainable.
fn grid_search(
    problem: &DecompositionProblem<'_>,
    chains: &[Vec<SubsystemId>],
    n: u64,
    stride: u64,
    exec: Execution,
) -> Option<(f64, Vec<f64>)> {
    let k = problem.hlm.num_subsystems();
    let seed = if n / stride >= 100 && (n / stride).is_multiple_of(10) {
        grid_search(problem, chains, n, stride * 10, exec).map_or(f64::INFINITY, |(o, _)| o)
    } else {
        f64::INFINITY
    };
    let grids: Vec<Vec<f64>> = (0..k)
        .map(|c| grid(problem.lower[c], problem.upper_of(c), n, stride))
        .collect();
    let search = GridSearch {
        problem,
        grids: &grids,
        threshold: problem.threshold(),
        incumbent: AtomicU64::new(seed.to_bits()),
    };
    // one task per (chain, value of the chain's first coordinate)
    let mut tasks = Vec::new();
    for (i, free) in chains.iter().enumerate() {
        let top = search.top(free);
        if search.feasible(&top) {
            let first = search.min_index(free[0], &top);
            tasks.extend((first..grids[free[0]].len()).map(|j| (i, j)));
        }
    }
    let results = exec.map_slice(&tasks, |&(i, j)| search.search_from(&chains[i], j));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (objective, point) in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|(b, _)| objective < *b) {
            best = Some((objective, point));
        }
    }
    best
}

/// `lo`, the multiples of `stride / n` strictly between the bounds, and `hi`.
fn grid(lo: f64, hi: f64, n: u64, stride: u64) -> Vec<f64> {
    let mut values = vec![lo];
    values.extend(
        (0..=n)
            .step_by(stride as usize)
            .map(|i| i as f64 / n as f64)
            .filter(|&v| v > lo && v < hi),
    );
    if hi > lo {
        values.push(hi);
    }
    values
}

/// Subsystems along the optimal meta-policy's route to the goal.
fn follow_policy(hlm: &Hlm, p: &ParamVector) -> Result<Vec<SubsystemId>, DecomposeError> {
    let meta = extract_meta_policy(hlm, p)?;
    let mut path = Vec::new();
    let mut s = hlm.init_state();
    let mut seen = vec![false; hlm.num_states()];
    while s != hlm.goal_state() && !seen[s] {
        seen[s] = true;
        let Some(c) = meta.get(s) else { break };
        path.push(c);
        s = hlm.succ(c);
    }
    Ok(path)
}

struct GridSearch<'p, 'a> {
    problem: &'p DecompositionProblem<'a>,
    grids: &'p [Vec<f64>],
    threshold: f64,
    /// Best objective found by any branch; only strictly worse branches are
    /// cut with it so that ties resolve the same way in every schedule.
    incumbent: AtomicU64,
}

type Best = Option<(f64, Vec<f64>)>;

impl GridSearch<'_, '_> {
    fn feasible(&self, point: &[f64]) -> bool {
        let p = ParamVector::new(point.to_vec()).expect("grid values within [0, 1]");
        let v = max_reachability(self.problem.hlm, &p)
            .map(|v| v.get(self.problem.hlm.init_state()))
            .unwrap_or(0.0);
        v >= self.threshold - LEVEL_TOLERANCE
    }

    fn cost(&self, c: usize, v: f64) -> f64 {
        v - self.problem.lower[c]
    }

    fn incumbent(&self) -> f64 {
        f64::from_bits(self.incumbent.load(Ordering::Relaxed))
    }

    fn offer(&self, objective: f64) {
        // objectives are non-negative, so bit order matches numeric order
        self.incumbent
            .fetch_min(objective.to_bits(), Ordering::Relaxed);
    }

    /// Lower bounds everywhere except `free`, which sit at their caps.
    fn top(&self, free: &[usize]) -> Vec<f64> {
        let mut point: Vec<f64> = self.grids.iter().map(|g| g[0]).collect();
        for &c in free {
            point[c] = *self.grids[c].last().expect("grid nonempty");
        }
        point
    }

    /// Smallest grid index of coordinate `c` that is feasible with the other
    /// coordinates as in `point`. `point` must be feasible. By monotonicity no
    /// feasible point below `point` elsewhere has a smaller value at `c`.
    fn min_index(&self, c: usize, point: &[f64]) -> usize {
        let g = &self.grids[c];
        let mut probe = point.to_vec();
        probe[c] = g[0];
        if self.feasible(&probe) {
            return 0;
        }
        // invariant: g[lo] infeasible, g[hi] feasible
        let (mut lo, mut hi) = (0usize, g.len() - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            probe[c] = g[mid];
            if self.feasible(&probe) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn search_from(&self, free: &[usize], j: usize) -> Best {
        let mut point: Vec<f64> = self.grids.iter().map(|g| g[0]).collect();
        let v = self.grids[free[0]][j];
        point[free[0]] = v;
        let mut best = None;
        self.descend(free, 1, &mut point, self.cost(free[0], v), &mut best);
        best
    }

    fn pruned(&self, objective: f64, best: &Best) -> bool {
        objective > self.incumbent() || best.as_ref().is_some_and(|(b, _)| objective >= *b)
    }

    /// Coordinates `free[..depth]` of `point` are fixed; explores the rest.
    fn descend(&self, free: &[usize], depth: usize, point: &mut [f64], partial: f64, best: &mut Best) {
        if self.pruned(partial, best) {
            return;
        }
        if depth == free.len() {
            if self.feasible(point) {
                self.record(partial, point, best);
            }
            return;
        }
        let mut top = point.to_vec();
        for &c in &free[depth..] {
            top[c] = *self.grids[c].last().expect("grid nonempty");
        }
        if !self.feasible(&top) {
            return;
        }
        // admissible bound: each free coordinate needs at least its minimum
        // with every other free coordinate at its cap
        let mins: Vec<usize> = free[depth..].iter().map(|&c| self.min_index(c, &top)).collect();
        let rest: f64 = free[depth + 1..]
            .iter()
            .zip(&mins[1..])
            .map(|(&c, &m)| self.cost(c, self.grids[c][m]))
            .sum();
        let c = free[depth];
        let g = &self.grids[c];
        if depth + 1 == free.len() {
            // the bound is attained on the last coordinate
            point[c] = g[mins[0]];
            self.record(partial + self.cost(c, g[mins[0]]), point, best);
            point[c] = g[0];
            return;
        }
        for &v in &g[mins[0]..] {
            let objective = partial + self.cost(c, v);
            if self.pruned(objective + rest, best) {
                break;
            }
            point[c] = v;
            self.descend(free, depth + 1, point, objective, best);
        }
        point[c] = g[0];
    }

    fn record(&self, objective: f64, point: &[f64], best: &mut Best) {
        if !self.pruned(objective, best) {
            *best = Some((objective, point.to_vec()));
            self.offer(objective);
        }
    }
}
