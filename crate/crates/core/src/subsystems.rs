//! Subsystem interfaces, composability, and the high-level model.
//!
//! Two environment states are equivalent when they are entry states of exactly
//! the same subsystems and agree on membership in the target set. The
//! high-level model (HLM) has one abstract state per equivalence class that
//! matters: classes containing some entry state, the goal class (the target
//! set) and a failure class absorbing everything else.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::env::EnvState;

pub type SubsystemId = usize;

/// Entry set, exit set and horizon of one subsystem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsystemSpec {
    pub id: SubsystemId,
    pub entry: BTreeSet<EnvState>,
    pub exit: BTreeSet<EnvState>,
    pub horizon: usize,
}

impl SubsystemSpec {
    /// Builds an interface whose entry and exit conditions are whole cells, every
    /// orientation included.
    pub fn from_cells(
        id: SubsystemId,
        entry_cells: &[(usize, usize)],
        exit_cells: &[(usize, usize)],
        horizon: usize,
    ) -> Self {
        SubsystemSpec {
            id,
            entry: expand_cells(entry_cells),
            exit: expand_cells(exit_cells),
            horizon,
        }
    }

    /// Entry states in sorted order; uniform sampling indexes into this.
    pub fn entry_states(&self) -> Vec<EnvState> {
        self.entry.iter().copied().collect()
    }
}

/// All four orientations of every listed cell.
pub fn expand_cells(cells: &[(usize, usize)]) -> BTreeSet<EnvState> {
    cells
        .iter()
        .flat_map(|&(x, y)| EnvState::all_orientations(x, y))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Subsystem ids must be exactly `0..k`.
    IdsNotDense { ids: Vec<SubsystemId> },
    EmptyEntry { id: SubsystemId },
    EmptyExit { id: SubsystemId },
    /// `F_exit_of` meets `I_entry_of` without being contained in it.
    ExitEntryOverlap {
        exit_of: SubsystemId,
        entry_of: SubsystemId,
    },
    /// The exit set is neither the target set nor disjoint from it.
    TargetOverlap { id: SubsystemId },
    /// No subsystem has the target set as its exit set.
    NoTargetSubsystem,
    /// The initial state is not an entry state of any subsystem.
    InitNotCovered,
    /// An entry state lies inside the target set.
    EntryInTarget { id: SubsystemId },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ComposabilityReport {
    pub violations: Vec<Violation>,
}

impl ComposabilityReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Offending `(exit_of, entry_of)` pairs.
    pub fn overlapping_pairs(&self) -> Vec<(SubsystemId, SubsystemId)> {
        self.violations
            .iter()
            .filter_map(|v| match v {
                Violation::ExitEntryOverlap { exit_of, entry_of } => Some((*exit_of, *entry_of)),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HlmError {
    #[error("subsystems are not composable: {0:?}")]
    NotComposable(ComposabilityReport),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter for subsystem {id} is {value}, outside [0, 1]")]
    OutOfRange { id: SubsystemId, value: f64 },
    #[error("expected {expected} parameters, got {found}")]
    WrongLength { expected: usize, found: usize },
}

fn is_sorted_dense(specs: &[SubsystemSpec]) -> bool {
    let mut ids: Vec<_> = specs.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    ids.iter().enumerate().all(|(i, &id)| i == id)
}

/// Checks the composability conditions; violations are returned as data.
pub fn check_composable(
    specs: &[SubsystemSpec],
    target: &BTreeSet<EnvState>,
    init: &EnvState,
) -> ComposabilityReport {
    let mut violations = Vec::new();
    if !is_sorted_dense(specs) {
        violations.push(Violation::IdsNotDense {
            ids: specs.iter().map(|s| s.id).collect(),
        });
    }
    let mut sorted: Vec<&SubsystemSpec> = specs.iter().collect();
    sorted.sort_by_key(|s| s.id);

    for s in &sorted {
        if s.entry.is_empty() {
            violations.push(Violation::EmptyEntry { id: s.id });
        }
        if s.exit.is_empty() {
            violations.push(Violation::EmptyExit { id: s.id });
        }
    }
    for a in &sorted {
        for b in &sorted {
            let meets = a.exit.iter().any(|s| b.entry.contains(s));
            if meets && !a.exit.is_subset(&b.entry) {
                violations.push(Violation::ExitEntryOverlap {
                    exit_of: a.id,
                    entry_of: b.id,
                });
            }
        }
    }
    if !sorted.iter().any(|s| &s.exit == target) {
        violations.push(Violation::NoTargetSubsystem);
    }
    for s in &sorted {
        if &s.exit != target && !s.exit.is_disjoint(target) {
            violations.push(Violation::TargetOverlap { id: s.id });
        }
        if !s.entry.is_disjoint(target) {
            violations.push(Violation::EntryInTarget { id: s.id });
        }
    }
    if !sorted.iter().any(|s| s.entry.contains(init)) {
        violations.push(Violation::InitNotCovered);
    }
    ComposabilityReport { violations }
}

/// One abstract state of the HLM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractState {
    /// Member environment states. Empty for the failure class, whose members
    /// are implicitly every state not in another class.
    pub members: BTreeSet<EnvState>,
    /// Subsystems whose entry set contains the members, ascending.
    pub available: Vec<SubsystemId>,
}

/// The parametric high-level model.
#[derive(Debug, Clone, PartialEq)]
pub struct Hlm {
    states: Vec<AbstractState>,
    init: usize,
    goal: usize,
    fail: usize,
    succ: Vec<usize>,
    lookup: HashMap<EnvState, usize>,
}

impl Hlm {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_subsystems(&self) -> usize {
        self.succ.len()
    }

    pub fn states(&self) -> &[AbstractState] {
        &self.states
    }

    pub fn init_state(&self) -> usize {
        self.init
    }

    pub fn goal_state(&self) -> usize {
        self.goal
    }

    pub fn fail_state(&self) -> usize {
        self.fail
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        s == self.goal || s == self.fail
    }

    /// Subsystems executable from abstract state `s`, ascending by id.
    pub fn available(&self, s: usize) -> &[SubsystemId] {
        &self.states[s].available
    }

    /// Abstract state reached when subsystem `c` succeeds.
    pub fn succ(&self, c: SubsystemId) -> usize {
        self.succ[c]
    }

    /// Class of an environment state. Dead states and states outside every
    /// entry set and the target land in the failure class.
    pub fn abstract_of(&self, s: &EnvState) -> usize {
        if !s.is_alive() {
            return self.fail;
        }
        self.lookup.get(s).copied().unwrap_or(self.fail)
    }

    /// Abstract states from which `c` is available.
    pub fn sources_of(&self, c: SubsystemId) -> impl Iterator<Item = usize> + '_ {
        (0..self.states.len()).filter(move |&s| self.states[s].available.contains(&c))
    }
}

/// Builds the HLM for a composable collection.
///
/// Abstract state indices are deterministic: the initial class first, then
/// the other entry classes ordered by their available-subsystem lists, then
/// the goal class, then the failure class.
pub fn build_hlm(
    specs: &[SubsystemSpec],
    init: &EnvState,
    target: &BTreeSet<EnvState>,
) -> Result<Hlm, HlmError> {
    let report = check_composable(specs, target, init);
    if !report.is_ok() {
        return Err(HlmError::NotComposable(report));
    }
    let mut sorted: Vec<&SubsystemSpec> = specs.iter().collect();
    sorted.sort_by_key(|s| s.id);

    // signature of every entry state: the ids whose entry set holds it
    let mut signature: BTreeMap<EnvState, Vec<SubsystemId>> = BTreeMap::new();
    for s in &sorted {
        for e in &s.entry {
            signature.entry(*e).or_default().push(s.id);
        }
    }
    let mut classes: BTreeMap<Vec<SubsystemId>, BTreeSet<EnvState>> = BTreeMap::new();
    for (state, sig) in signature {
        classes.entry(sig).or_default().insert(state);
    }
    let init_sig = sorted
        .iter()
        .filter(|s| s.entry.contains(init))
        .map(|s| s.id)
        .collect::<Vec<_>>();

    let mut states = Vec::with_capacity(classes.len() + 2);
    let init_members = classes.remove(&init_sig).unwrap_or_default();
    states.push(AbstractState {
        members: init_members,
        available: init_sig,
    });
    for (sig, members) in classes {
        states.push(AbstractState {
            members,
            available: sig,
        });
    }
    let goal = states.len();
    states.push(AbstractState {
        members: target.clone(),
        available: Vec::new(),
    });
    let fail = states.len();
    states.push(AbstractState {
        members: BTreeSet::new(),
        available: Vec::new(),
    });

    let mut lookup = HashMap::new();
    for (i, st) in states.iter().enumerate() {
        for m in &st.members {
            lookup.insert(*m, i);
        }
    }
    let class_of = |s: &EnvState| lookup.get(s).copied().unwrap_or(fail);
    let succ = sorted
        .iter()
        .map(|s| class_of(s.exit.iter().next().expect("exit nonempty")))
        .collect();

    Ok(Hlm {
        states,
        init: 0,
        goal,
        fail,
        succ,
        lookup,
    })
}

/// One success parameter per subsystem, indexed by id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ParamError> {
        for (id, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ParamError::OutOfRange { id, value });
            }
        }
        Ok(ParamVector(values))
    }

    /// Checks the length against a model's subsystem count.
    pub fn for_hlm(values: Vec<f64>, hlm: &Hlm) -> Result<Self, ParamError> {
        if values.len() != hlm.num_subsystems() {
            return Err(ParamError::WrongLength {
                expected: hlm.num_subsystems(),
                found: values.len(),
            });
        }
        Self::new(values)
    }

    pub fn zeros(k: usize) -> Self {
        ParamVector(vec![0.0; k])
    }

    pub fn constant(k: usize, value: f64) -> Result<Self, ParamError> {
        Self::new(vec![value; k])
    }

    pub fn get(&self, c: SubsystemId) -> f64 {
        self.0[c]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}
