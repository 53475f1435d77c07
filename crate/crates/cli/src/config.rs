//! Experiment configuration: a JSON document read into optional raw fields,
//! then validated into a [`Config`].
//!
//! Cells are `[column, row]` pairs with row 0 at the top of the map.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use icrl_core::estimator::{EstimateMode, EstimatorConfig};
use icrl_core::icrl::{IcrlConfig, IcrlProblem};
use icrl_core::trainer::QLearning;
use icrl_core::{
    check_composable, expand_cells, ComposabilityReport, EnvState, Execution, LabyrinthMap,
    Orientation, SubsystemSpec, Violation,
};
use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_HORIZON: usize = 100;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("subsystems are not composable: {}", Violations(&.0.violations))]
    NotComposable(ComposabilityReport),
}

impl ConfigError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Field path of a validation error.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}

struct Violations<'a>(&'a [Violation]);

impl fmt::Display for Violations<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            describe_violation(v, f)?;
        }
        Ok(())
    }
}

fn describe_violation(v: &Violation, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match v {
        Violation::IdsNotDense { ids } => write!(f, "ids {ids:?} are not 0..k"),
        Violation::EmptyEntry { id } => write!(f, "subsystem {id} has no entry cells"),
        Violation::EmptyExit { id } => write!(f, "subsystem {id} has no exit cells"),
        Violation::ExitEntryOverlap { exit_of, entry_of } => write!(
            f,
            "exit set of subsystem {exit_of} partially overlaps entry set of subsystem {entry_of}"
        ),
        Violation::TargetOverlap { id } => {
            write!(f, "exit set of subsystem {id} partially overlaps the target")
        }
        Violation::NoTargetSubsystem => f.write_str("no subsystem exits into the target"),
        Violation::InitNotCovered => f.write_str("the initial state is no subsystem's entry"),
        Violation::EntryInTarget { id } => {
            write!(f, "an entry cell of subsystem {id} lies in the target")
        }
    }
}

type Cell = [usize; 2];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    map: Option<String>,
    map_file: Option<PathBuf>,
    slip: Option<f64>,
    delta: Option<f64>,
    init: Option<RawInit>,
    target_exit: Option<Vec<Cell>>,
    subsystems: Option<Vec<RawSubsystem>>,
    #[serde(default)]
    training: RawTraining,
    #[serde(default)]
    estimation: RawEstimation,
    #[serde(default)]
    evaluation: RawEvaluation,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    parallel: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    cell: Option<Cell>,
    orientation: Option<Orientation>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubsystem {
    id: Option<usize>,
    entry_cells: Option<Vec<Cell>>,
    exit_cells: Option<Vec<Cell>>,
    horizon: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    n_train: Option<u64>,
    n_max: Option<u64>,
    alpha: Option<f64>,
    gamma: Option<f64>,
    epsilon_start: Option<f64>,
    epsilon_end: Option<f64>,
    decay_steps: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimation {
    n_rollouts: Option<u64>,
    beta: Option<f64>,
    strict_min_mode: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvaluation {
    episodes: Option<u64>,
    every: Option<usize>,
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct Config {
    pub map: LabyrinthMap,
    pub slip: f64,
    pub delta: f64,
    pub init: EnvState,
    pub target: BTreeSet<EnvState>,
    /// Sorted by id.
    pub specs: Vec<SubsystemSpec>,
    pub learner: QLearning,
    pub n_train: u64,
    pub n_max: u64,
    pub estimator: EstimatorConfig,
    pub eval_episodes: u64,
    pub eval_every: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub exec: Execution,
}

impl Config {
    pub fn problem(&self) -> IcrlProblem {
        IcrlProblem {
            map: self.map.clone(),
            slip: self.slip,
            specs: self.specs.clone(),
            init: self.init,
            target: self.target.clone(),
        }
    }

    pub fn icrl_config(&self) -> IcrlConfig {
        IcrlConfig {
            delta: self.delta,
            n_train: self.n_train,
            n_max: self.n_max,
            estimator: self.estimator,
            eval_episodes: self.eval_episodes,
            eval_every: self.eval_every,
            seed: self.seed,
            exec: self.exec,
        }
    }

    pub fn composability(&self) -> ComposabilityReport {
        check_composable(&self.specs, &self.target, &self.init)
    }
}

/// Reads and validates a config, rejecting non-composable subsystems.
pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let config = read_config(path)?;
    let report = config.composability();
    if !report.is_ok() {
        return Err(ConfigError::NotComposable(report));
    }
    Ok(config)
}

/// Reads and validates a config without the composability check.
pub fn read_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

/// Parses config text. `map_file` is resolved against `base`; `out_dir` is
/// left relative to the working directory.
pub fn parse_config(text: &str, base: &Path) -> Result<Config, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text)?;
    validate(raw, base)
}

fn probability(field: &str, value: Option<f64>) -> Result<f64, ConfigError> {
    let v = value.ok_or_else(|| ConfigError::invalid(field, "missing"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(ConfigError::invalid(field, format!("{v} is outside [0, 1]")));
    }
    Ok(v)
}

fn cells(
    map: &LabyrinthMap,
    field: &str,
    list: Option<Vec<Cell>>,
) -> Result<Vec<(usize, usize)>, ConfigError> {
    let list = list.ok_or_else(|| ConfigError::invalid(field, "missing"))?;
    if list.is_empty() {
        return Err(ConfigError::invalid(field, "empty"));
    }
    list.into_iter()
        .enumerate()
        .map(|(i, [x, y])| {
            let f = format!("{field}[{i}]");
            if x >= map.width() || y >= map.height() {
                return Err(ConfigError::invalid(f, format!("({x}, {y}) is outside the map")));
            }
            if !map.is_free(x, y) {
                return Err(ConfigError::invalid(f, format!("({x}, {y}) is not a free cell")));
            }
            Ok((x, y))
        })
        .collect()
}

fn validate(raw: RawConfig, base: &Path) -> Result<Config, ConfigError> {
    let map_text = match (raw.map, raw.map_file) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::invalid("map", "give either map or map_file, not both"))
        }
        (Some(text), None) => text,
        (None, Some(file)) => {
            let path = base.join(file);
            std::fs::read_to_string(&path).map_err(|e| {
                ConfigError::invalid("map_file", format!("{}: {e}", path.display()))
            })?
        }
        (None, None) => return Err(ConfigError::invalid("map", "missing")),
    };
    let map = LabyrinthMap::parse(&map_text).map_err(|e| ConfigError::invalid("map", e.to_string()))?;

    let slip = probability("slip", raw.slip)?;
    let delta = probability("delta", raw.delta)?;

    let init = {
        let (cell, orientation) = match raw.init {
            Some(RawInit { cell, orientation }) => (cell, orientation),
            None => (None, None),
        };
        let (x, y) = match cell {
            Some(c) => cells(&map, "init.cell", Some(vec![c]))?[0],
            None => map.start_cell(),
        };
        EnvState::alive(x, y, orientation.unwrap_or(Orientation::East))
    };

    let target_cells = match raw.target_exit {
        Some(list) => cells(&map, "target_exit", Some(list))?,
        None => {
            let goals: Vec<_> = map.goal_cells().iter().copied().collect();
            if goals.is_empty() {
                return Err(ConfigError::invalid("target_exit", "missing and the map has no goal"));
            }
            goals
        }
    };
    let target = expand_cells(&target_cells);

    let raw_subsystems = raw
        .subsystems
        .ok_or_else(|| ConfigError::invalid("subsystems", "missing"))?;
    if raw_subsystems.is_empty() {
        return Err(ConfigError::invalid("subsystems", "empty"));
    }
    let k = raw_subsystems.len();
    let mut specs = Vec::with_capacity(k);
    let mut seen = vec![false; k];
    for (i, s) in raw_subsystems.into_iter().enumerate() {
        let field = |name: &str| format!("subsystems[{i}].{name}");
        let id = s.id.ok_or_else(|| ConfigError::invalid(field("id"), "missing"))?;
        if id >= k || seen[id] {
            return Err(ConfigError::invalid(
                field("id"),
                format!("ids must be exactly 0..{k}, each once; got {id}"),
            ));
        }
        seen[id] = true;
        let entry = cells(&map, &field("entry_cells"), s.entry_cells)?;
        let exit = cells(&map, &field("exit_cells"), s.exit_cells)?;
        let horizon = s.horizon.unwrap_or(DEFAULT_HORIZON);
        if horizon == 0 {
            return Err(ConfigError::invalid(field("horizon"), "must be positive"));
        }
        specs.push(SubsystemSpec::from_cells(id, &entry, &exit, horizon));
    }
    specs.sort_by_key(|s| s.id);

    let t = raw.training;
    let n_train = t.n_train.unwrap_or(50_000);
    if n_train == 0 {
        return Err(ConfigError::invalid("training.n_train", "must be positive"));
    }
    let n_max = t.n_max.unwrap_or(500_000);
    let defaults = QLearning::default();
    let learner = QLearning {
        alpha: t.alpha.unwrap_or(defaults.alpha),
        gamma: t.gamma.unwrap_or(defaults.gamma),
        epsilon_start: t.epsilon_start.unwrap_or(defaults.epsilon_start),
        epsilon_end: t.epsilon_end.unwrap_or(defaults.epsilon_end),
        decay_steps: t.decay_steps.unwrap_or(n_max),
    };
    learner
        .validate()
        .map_err(|e| ConfigError::invalid("training", e.to_string()))?;

    let e = raw.estimation;
    let rollouts = e.n_rollouts.unwrap_or(300);
    if rollouts == 0 {
        return Err(ConfigError::invalid("estimation.n_rollouts", "must be positive"));
    }
    let beta = e.beta.unwrap_or(0.05);
    if !(beta > 0.0 && beta < 1.0) {
        return Err(ConfigError::invalid("estimation.beta", format!("{beta} is outside (0, 1)")));
    }
    let mode = if e.strict_min_mode.unwrap_or(false) {
        EstimateMode::MinOverEntries
    } else {
        EstimateMode::Uniform
    };

    let eval_episodes = raw.evaluation.episodes.unwrap_or(300);
    if eval_episodes == 0 {
        return Err(ConfigError::invalid("evaluation.episodes", "must be positive"));
    }

    Ok(Config {
        map,
        slip,
        delta,
        init,
        target,
        specs,
        learner,
        n_train,
        n_max,
        estimator: EstimatorConfig {
            rollouts,
            beta,
            mode,
        },
        eval_episodes,
        eval_every: raw.evaluation.every.unwrap_or(1),
        seed: raw.seed.unwrap_or(0),
        out_dir: raw.out_dir.unwrap_or_else(|| PathBuf::from("runs")),
        exec: if raw.parallel.unwrap_or(true) {
            Execution::Parallel
        } else {
            Execution::Sequential
        },
    })
}
