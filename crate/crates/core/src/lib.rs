//! Iterative compositional reinforcement learning on slippery gridworld
//! labyrinths.
//!
//! The task is split into subsystems with entry and exit conditions. A
//! high-level model (HLM) over those interfaces is used to decompose the
//! overall success requirement into per-subsystem targets, to decide which
//! subsystem to train next, and to plan the meta-policy that composes the
//! learned subsystem policies.

pub mod decompose;
pub mod env;
pub mod estimator;
pub mod exec;
pub mod icrl;
pub mod labyrinth;
pub mod plan;
pub mod subsystems;
pub mod synthetic;
pub mod trainer;

pub use decompose::{
    enumerate_paths, oracle_grid_solve, solve_decomposition, waterfill_path, DecomposeError,
    DecompositionProblem, DecompositionResult, HlmPath, Waterfill,
};
pub use env::{Action, Cell, EnvState, LabyrinthMap, MapError, Orientation, Status, StepError};
pub use exec::{Execution, StreamKey};
pub use plan::{
    extract_meta_policy, lift, max_reachability, plan, policy_values, predict_task_success,
    MetaPolicy, PlanError, ValueVector,
};
pub use subsystems::{
    build_hlm, check_composable, expand_cells, ComposabilityReport, Hlm, HlmError, ParamError,
    ParamVector, SubsystemId, SubsystemSpec, Violation,
};
