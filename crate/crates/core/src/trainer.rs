//! Subsystem training.
//!
//! The iterative loop only needs "train this subsystem for N more steps" and
//! "give me its current policy", so the learner sits behind
//! [`SubsystemTrainer`] with an opaque per-subsystem state. The shipped
//! learner is tabular Q-learning with linearly decaying epsilon-greedy
//! exploration.

use std::fmt::Write as _;

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::env::{Action, EnvState, LabyrinthMap, Orientation};
use crate::exec::StreamKey;
use crate::subsystems::SubsystemSpec;

/// A deterministic stationary policy over environment states.
pub trait Policy: Send + Sync {
    fn action(&self, s: &EnvState) -> Action;
}

impl<F> Policy for F
where
    F: Fn(&EnvState) -> Action + Send + Sync,
{
    fn action(&self, s: &EnvState) -> Action {
        self(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("subsystem {0} has an empty entry set")]
    EmptyEntry(usize),
    #[error("entry state {0} is not a free cell of the map")]
    BadEntry(EnvState),
    #[error("slip probability {0} outside [0, 1]")]
    InvalidSlip(f64),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("malformed q-table at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Environment and subsystem a training call works on.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    pub map: &'a LabyrinthMap,
    pub spec: &'a SubsystemSpec,
    pub slip: f64,
}

pub trait SubsystemTrainer: Sync {
    type State: Send;
    type Policy: Policy;

    fn init_state(&self, ctx: &TrainContext<'_>) -> Self::State;

    /// Runs exactly `steps` environment transitions of training and returns
    /// the number consumed.
    fn train(
        &self,
        state: &mut Self::State,
        ctx: &TrainContext<'_>,
        steps: u64,
        key: StreamKey,
    ) -> Result<u64, TrainError>;

    fn policy(&self, state: &Self::State) -> Self::Policy;
}

/// Q-learning hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QLearning {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Steps over which epsilon decays linearly; usually the per-subsystem
    /// training budget.
    pub decay_steps: u64,
}

impl Default for QLearning {
    fn default() -> Self {
        QLearning {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            decay_steps: 500_000,
        }
    }
}

impl QLearning {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidHyperparameter(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon must lie in [0, 1]");
        }
        Ok(())
    }

    /// Exploration rate after `t` cumulative training steps.
    pub fn epsilon(&self, t: u64) -> f64 {
        if self.decay_steps == 0 || t >= self.decay_steps {
            return self.epsilon_end;
        }
        let frac = t as f64 / self.decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Tabular action values over the dense state index of one map.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    width: usize,
    height: usize,
    q: Vec<[f64; 3]>,
    visits: Vec<[u64; 3]>,
    /// Cumulative training transitions, drives the epsilon schedule.
    steps: u64,
}

impl QTable {
    pub fn new(width: usize, height: usize) -> Self {
        let slots = width * height * 4;
        QTable {
            width,
            height,
            q: vec![[0.0; 3]; slots],
            visits: vec![[0; 3]; slots],
            steps: 0,
        }
    }

    pub fn for_map(map: &LabyrinthMap) -> Self {
        QTable::new(map.width(), map.height())
    }

    fn index(&self, s: &EnvState) -> Option<usize> {
        (s.x < self.width && s.y < self.height)
            .then(|| (s.y * self.width + s.x) * 4 + s.orientation.index())
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn value(&self, s: &EnvState, a: Action) -> f64 {
        self.index(s).map_or(0.0, |i| self.q[i][a.index()])
    }

    pub fn visits(&self, s: &EnvState, a: Action) -> u64 {
        self.index(s).map_or(0, |i| self.visits[i][a.index()])
    }

    /// Every stored value, for bounds checks.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.q.iter().flatten().copied()
    }

    /// Greedy action, ties to the lowest action index; `Forward` in states
    /// that were never visited during training.
    pub fn greedy(&self, s: &EnvState) -> Action {
        match self.index(s) {
            Some(i) if self.visits[i].iter().any(|&n| n > 0) => argmax(&self.q[i]),
            _ => Action::Forward,
        }
    }

    pub fn greedy_policy(&self) -> GreedyPolicy {
        let actions = (0..self.q.len())
            .map(|i| {
                if self.visits[i].iter().any(|&n| n > 0) {
                    argmax(&self.q[i])
                } else {
                    Action::Forward
                }
            })
            .collect();
        GreedyPolicy {
            width: self.width,
            height: self.height,
            actions,
        }
    }

    /// Versioned plain-text dump: a header line followed by one line per
    /// visited or nonzero state-action pair.
    pub fn to_text(&self) -> String {
        let mut out = format!("qtable v1 {} {} {}\n", self.width, self.height, self.steps);
        for (i, (q, n)) in self.q.iter().zip(&self.visits).enumerate() {
            let cell = i / 4;
            let (x, y) = (cell % self.width, cell / self.width);
            let o = Orientation::from_index(i % 4);
            for a in 0..3 {
                if n[a] > 0 || q[a] != 0.0 {
                    writeln!(out, "{x} {y} {o} {a} {} {}", q[a], n[a]).expect("string write");
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let err = |line: usize, reason: &str| TrainError::Parse {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let [magic, version, w, h, steps] = header[..] else {
            return Err(err(1, "expected header `qtable v1 <width> <height> <steps>`"));
        };
        if magic != "qtable" || version != "v1" {
            return Err(err(1, "unsupported format"));
        }
        let num = |s: &str, line| s.parse::<u64>().map_err(|_| err(line, "bad integer"));
        let mut table = QTable::new(num(w, 1)? as usize, num(h, 1)? as usize);
        table.steps = num(steps, 1)?;
        for (k, line) in lines.enumerate() {
            let ln = k + 2;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let [x, y, o, a, v, n] = f[..] else {
                return Err(err(ln, "expected `x y dir action value visits`"));
            };
            let o = match o {
                "N" => Orientation::North,
                "E" => Orientation::East,
                "S" => Orientation::South,
                "W" => Orientation::West,
                _ => return Err(err(ln, "bad orientation")),
            };
            let s = EnvState::alive(num(x, ln)? as usize, num(y, ln)? as usize, o);
            let a = Action::from_index(num(a, ln)? as usize).ok_or_else(|| err(ln, "bad action"))?;
            let v: f64 = v.parse().map_err(|_| err(ln, "bad value"))?;
            let i = table.index(&s).ok_or_else(|| err(ln, "state outside the grid"))?;
            table.q[i][a.index()] = v;
            table.visits[i][a.index()] = num(n, ln)?;
        }
        Ok(table)
    }
}

fn argmax(q: &[f64; 3]) -> Action {
    let mut best = 0;
    for a in 1..3 {
        if q[a] > q[best] {
            best = a;
        }
    }
    Action::ALL[best]
}

/// Frozen greedy policy of a [`QTable`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreedyPolicy {
    width: usize,
    height: usize,
    actions: Vec<Action>,
}

impl Policy for GreedyPolicy {
    fn action(&self, s: &EnvState) -> Action {
        if s.x >= self.width || s.y >= self.height {
            return Action::Forward;
        }
        self.actions[(s.y * self.width + s.x) * 4 + s.orientation.index()]
    }
}

fn check_context(ctx: &TrainContext<'_>) -> Result<Vec<EnvState>, TrainError> {
    if !(0.0..=1.0).contains(&ctx.slip) {
        return Err(TrainError::InvalidSlip(ctx.slip));
    }
    let entries = ctx.spec.entry_states();
    if entries.is_empty() {
        return Err(TrainError::EmptyEntry(ctx.spec.id));
    }
    if let Some(bad) = entries
        .iter()
        .find(|s| !s.is_alive() || !ctx.map.is_free(s.x, s.y))
    {
        return Err(TrainError::BadEntry(*bad));
    }
    Ok(entries)
}

impl SubsystemTrainer for QLearning {
    type State = QTable;
    type Policy = GreedyPolicy;

    fn init_state(&self, ctx: &TrainContext<'_>) -> QTable {
        QTable::for_map(ctx.map)
    }

    /// Episodes start uniformly in the entry set and end on reaching the
    /// exit set (reward 1), on lava (reward 0) or after the horizon. Horizon
    /// cut-offs bootstrap like ordinary transitions. An episode still running
    /// when the budget runs out is abandoned.
    fn train(
        &self,
        table: &mut QTable,
        ctx: &TrainContext<'_>,
        steps: u64,
        key: StreamKey,
    ) -> Result<u64, TrainError> {
        self.validate()?;
        let entries = check_context(ctx)?;
        let map = ctx.map;
        let mut exit = vec![false; map.state_slots()];
        for s in &ctx.spec.exit {
            if s.x < map.width() && s.y < map.height() {
                exit[map.state_index(s)] = true;
            }
        }
        let mut rng = key.rng();
        let mut done = 0u64;
        'episodes: while done < steps {
            let mut s = entries[rng.gen_range(0..entries.len())];
            for _ in 0..ctx.spec.horizon.max(1) {
                if done == steps {
                    break 'episodes;
                }
                let i = map.state_index(&s);
                let a = if rng.gen::<f64>() < self.epsilon(table.steps) {
                    Action::ALL[rng.gen_range(0..3)]
                } else {
                    argmax(&table.q[i])
                };
                let next = map.step_unchecked(&s, a, ctx.slip, &mut rng);
                done += 1;
                table.steps += 1;
                let j = map.state_index(&next);
                let (target, terminal) = if !next.is_alive() {
                    (0.0, true)
                } else if exit[j] {
                    (1.0, true)
                } else {
                    let best = table.q[j].iter().copied().fold(f64::MIN, f64::max);
                    (self.gamma * best, false)
                };
                let q = &mut table.q[i][a.index()];
                *q += self.alpha * (target - *q);
                table.visits[i][a.index()] += 1;
                if terminal {
                    continue 'episodes;
                }
                s = next;
            }
        }
        Ok(done)
    }

    fn policy(&self, table: &QTable) -> GreedyPolicy {
        table.greedy_policy()
    }
}
