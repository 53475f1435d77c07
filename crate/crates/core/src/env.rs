//! Discrete labyrinth gridworld with slip dynamics and lava.
//!
//! States are `(x, y, orientation)` triples plus a liveness flag. `x` is the
//! column and `y` the row of the ASCII map, with row 0 at the top, so facing
//! [`Orientation::North`] and moving forward decrements `y`.
//!
//! Every action has probability `1 - slip` of producing its own effect and
//! probability `slip / 2` of producing the effect of each of the other two
//! actions. Entering a lava cell kills the agent; walls block movement.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Contents of a single map cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Empty,
    Wall,
    Lava,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Orientation {
    #[serde(rename = "N")]
    North,
    #[serde(rename = "E")]
    East,
    #[serde(rename = "S")]
    South,
    #[serde(rename = "W")]
    West,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::North,
        Orientation::East,
        Orientation::South,
        Orientation::West,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Orientation {
        Self::ALL[i % 4]
    }

    /// Counter-clockwise quarter turn.
    pub fn left(self) -> Orientation {
        Self::from_index(self.index() + 3)
    }

    /// Clockwise quarter turn.
    pub fn right(self) -> Orientation {
        Self::from_index(self.index() + 1)
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Orientation::North => (0, -1),
            Orientation::East => (1, 0),
            Orientation::South => (0, 1),
            Orientation::West => (-1, 0),
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Orientation::North => 'N',
            Orientation::East => 'E',
            Orientation::South => 'S',
            Orientation::West => 'W',
        };
        write!(f, "{c}")
    }
}

/// The three agent actions. The discriminants are the fixed action indices
/// used by Q-tables and tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    TurnLeft = 0,
    TurnRight = 1,
    Forward = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::TurnLeft, Action::TurnRight, Action::Forward];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// The two actions other than `self`, in index order.
    fn others(self) -> [Action; 2] {
        match self {
            Action::TurnLeft => [Action::TurnRight, Action::Forward],
            Action::TurnRight => [Action::TurnLeft, Action::Forward],
            Action::Forward => [Action::TurnLeft, Action::TurnRight],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Alive,
    LavaDead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EnvState {
    pub x: usize,
    pub y: usize,
    pub orientation: Orientation,
    pub status: Status,
}

impl EnvState {
    pub fn alive(x: usize, y: usize, orientation: Orientation) -> Self {
        EnvState {
            x,
            y,
            orientation,
            status: Status::Alive,
        }
    }

    pub fn is_alive(&self) -> bool {
        self.status == Status::Alive
    }

    pub fn cell(&self) -> (usize, usize) {
        (self.x, self.y)
    }

    /// All four orientations at one cell.
    pub fn all_orientations(x: usize, y: usize) -> impl Iterator<Item = EnvState> {
        Orientation::ALL
            .into_iter()
            .map(move |o| EnvState::alive(x, y, o))
    }
}

impl fmt::Display for EnvState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.status {
            Status::Alive => write!(f, "({}, {}, {})", self.x, self.y, self.orientation),
            Status::LavaDead => write!(f, "({}, {}, lava)", self.x, self.y),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MapError {
    #[error("map text is empty")]
    Empty,
    #[error("row {row} has {found} columns, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("illegal character {ch:?} at row {row}, column {col}")]
    IllegalCharacter { row: usize, col: usize, ch: char },
    #[error("map has no start cell 'S'")]
    MissingStart,
    #[error("second start cell 'S' at row {row}, column {col}")]
    MultipleStart { row: usize, col: usize },
    #[error("border cell at row {row}, column {col} is not a wall")]
    NonWallBorder { row: usize, col: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("cannot step from dead state {0}")]
    DeadStateStep(EnvState),
    #[error("state {0} is not a free cell of the map")]
    InvalidState(EnvState),
    #[error("slip probability {0} is outside [0, 1]")]
    InvalidSlip(f64),
}

/// A rectangular labyrinth: walls, lava, one start cell and any number of
/// goal cells. Goal cells carry no special dynamics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabyrinthMap {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    start: (usize, usize),
    goals: BTreeSet<(usize, usize)>,
}

impl LabyrinthMap {
    /// Parses the `#`, `.`, `L`, `S`, `G` map format. Trailing whitespace on
    /// a line and trailing blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut rows: Vec<&str> = text.split('\n').map(|l| l.trim_end()).collect();
        while rows.last().is_some_and(|r| r.is_empty()) {
            rows.pop();
        }
        if rows.is_empty() {
            return Err(MapError::Empty);
        }
        let width = rows[0].chars().count();
        if width == 0 {
            return Err(MapError::Empty);
        }
        let height = rows.len();
        let mut cells = Vec::with_capacity(width * height);
        let mut start = None;
        let mut goals = BTreeSet::new();
        for (row, line) in rows.iter().enumerate() {
            let found = line.chars().count();
            if found != width {
                return Err(MapError::RaggedRows {
                    row,
                    expected: width,
                    found,
                });
            }
            for (col, ch) in line.chars().enumerate() {
                let cell = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Empty,
                    'L' => Cell::Lava,
                    'S' => {
                        if start.is_some() {
                            return Err(MapError::MultipleStart { row, col });
                        }
                        start = Some((col, row));
                        Cell::Empty
                    }
                    'G' => {
                        goals.insert((col, row));
                        Cell::Empty
                    }
                    _ => return Err(MapError::IllegalCharacter { row, col, ch }),
                };
                cells.push(cell);
            }
        }
        let start = start.ok_or(MapError::MissingStart)?;
        for row in 0..height {
            for col in 0..width {
                let border = row == 0 || col == 0 || row + 1 == height || col + 1 == width;
                if border && cells[row * width + col] != Cell::Wall {
                    return Err(MapError::NonWallBorder { row, col });
                }
            }
        }
        Ok(LabyrinthMap {
            width,
            height,
            cells,
            start,
            goals,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start_cell(&self) -> (usize, usize) {
        self.start
    }

    pub fn goal_cells(&self) -> &BTreeSet<(usize, usize)> {
        &self.goals
    }

    /// Cell contents; out-of-range coordinates read as walls.
    pub fn cell(&self, x: usize, y: usize) -> Cell {
        if x >= self.width || y >= self.height {
            return Cell::Wall;
        }
        self.cells[y * self.width + x]
    }

    pub fn is_free(&self, x: usize, y: usize) -> bool {
        self.cell(x, y) == Cell::Empty
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| (x, y)))
            .filter(move |&(x, y)| self.is_free(x, y))
    }

    /// Every alive state, row-major then by orientation.
    pub fn alive_states(&self) -> impl Iterator<Item = EnvState> + '_ {
        self.free_cells()
            .flat_map(|(x, y)| EnvState::all_orientations(x, y))
    }

    /// Number of slots in the dense state index (alive or not).
    pub fn state_slots(&self) -> usize {
        self.width * self.height * 4
    }

    /// Dense index of a state's `(x, y, orientation)`; liveness is ignored.
    pub fn state_index(&self, s: &EnvState) -> usize {
        (s.y * self.width + s.x) * 4 + s.orientation.index()
    }

    pub fn state_at(&self, index: usize) -> EnvState {
        let o = Orientation::from_index(index % 4);
        let cell = index / 4;
        EnvState::alive(cell % self.width, cell / self.width, o)
    }

    /// Deterministic effect of one action (no slip).
    pub fn effect(&self, s: &EnvState, a: Action) -> EnvState {
        match a {
            Action::TurnLeft => EnvState {
                orientation: s.orientation.left(),
                ..*s
            },
            Action::TurnRight => EnvState {
                orientation: s.orientation.right(),
                ..*s
            },
            Action::Forward => {
                let (dx, dy) = s.orientation.delta();
                let nx = s.x.wrapping_add_signed(dx);
                let ny = s.y.wrapping_add_signed(dy);
                match self.cell(nx, ny) {
                    Cell::Wall => *s,
                    Cell::Lava => EnvState {
                        x: nx,
                        y: ny,
                        orientation: s.orientation,
                        status: Status::LavaDead,
                    },
                    Cell::Empty => EnvState { x: nx, y: ny, ..*s },
                }
            }
        }
    }

    fn check_step(&self, s: &EnvState, slip: f64) -> Result<(), StepError> {
        if !(0.0..=1.0).contains(&slip) {
            return Err(StepError::InvalidSlip(slip));
        }
        if !s.is_alive() {
            return Err(StepError::DeadStateStep(*s));
        }
        if !self.is_free(s.x, s.y) {
            return Err(StepError::InvalidState(*s));
        }
        Ok(())
    }

    /// Exact successor distribution. Zero-probability outcomes are dropped
    /// and coinciding successors are merged, keeping first-occurrence order.
    pub fn transition_distribution(
        &self,
        s: &EnvState,
        a: Action,
        slip: f64,
    ) -> Result<Vec<(EnvState, f64)>, StepError> {
        self.check_step(s, slip)?;
        let [o1, o2] = a.others();
        let effects = [(a, 1.0 - slip), (o1, slip / 2.0), (o2, slip / 2.0)];
        let mut out: Vec<(EnvState, f64)> = Vec::with_capacity(3);
        for (e, p) in effects {
            if p <= 0.0 {
                continue;
            }
            let next = self.effect(s, e);
            match out.iter_mut().find(|(t, _)| *t == next) {
                Some((_, q)) => *q += p,
                None => out.push((next, p)),
            }
        }
        Ok(out)
    }

    /// Samples one successor with the law of
    /// [`transition_distribution`](Self::transition_distribution).
    pub fn step<R: Rng + ?Sized>(
        &self,
        s: &EnvState,
        a: Action,
        slip: f64,
        rng: &mut R,
    ) -> Result<EnvState, StepError> {
        self.check_step(s, slip)?;
        Ok(self.effect(s, sample_effect(a, slip, rng)))
    }

    /// Unchecked step used in hot loops where the caller guarantees an alive
    /// state and a valid slip.
    pub(crate) fn step_unchecked<R: Rng + ?Sized>(
        &self,
        s: &EnvState,
        a: Action,
        slip: f64,
        rng: &mut R,
    ) -> EnvState {
        self.effect(s, sample_effect(a, slip, rng))
    }
}

fn sample_effect<R: Rng + ?Sized>(a: Action, slip: f64, rng: &mut R) -> Action {
    let u: f64 = rng.gen();
    let [o1, o2] = a.others();
    if u < 1.0 - slip {
        a
    } else if u < 1.0 - slip / 2.0 {
        o1
    } else {
        o2
    }
}
