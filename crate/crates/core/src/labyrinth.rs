//! The 20x20 twelve-room-subsystem labyrinth used by the shipped experiment.
//!
//! Door and waypoint cells are given as `(column, row)` with row 0 at the top.

use std::collections::BTreeSet;

use crate::env::{EnvState, LabyrinthMap, Orientation};
use crate::subsystems::{expand_cells, SubsystemSpec};

pub const MAP: &str = "\
####################
#S...#.............#
#..................#
#....#.............#
#....#.............#
###.######.###.#####
#.......#....#.....#
#.LLL...#....#.....#
#.....LL#....#.....#
#.......#....#.....#
#####.###....#.....#
#.......#....#.....#
#..LL...#....#.....#
#.......#....#.....#
#.....LL#....#.....#
###.############.###
#..................#
#..G...............#
#..................#
####################
";

/// Horizon of the labyrinth subsystems. Long enough for each room, too
/// short for the lava-free detour around the whole labyrinth.
pub const HORIZON: usize = 100;

/// Tighter time limit for the top lava room (subsystem 4). With it the best
/// achievable success there is about 0.90, so the route through both lava
/// rooms stays clearly below 0.95 even under noisy 300-rollout estimates.
pub const LAVA_ROOM_HORIZON: usize = 18;

pub const START: (usize, usize) = (1, 1);
pub const GOAL: (usize, usize) = (3, 17);

/// Waypoint cells shared between subsystems; index `k` is the cell reached
/// by the subsystem whose success leads to high-level state `k`.
pub const WAYPOINTS: [(usize, usize); 9] = [
    (5, 2),   // top-left / top-right door
    (3, 5),   // top-left / upper lava room door
    (10, 5),  // top-right / middle room door
    (14, 5),  // top-right / right room door
    (5, 10),  // between the two lava rooms
    (3, 15),  // lower lava room / bottom corridor door
    (12, 14), // bottom of the middle room
    (16, 15), // right room / bottom corridor door
    (10, 17), // middle of the bottom corridor
];

/// `(entry cell, exit cell)` for subsystems 0..12.
pub fn subsystem_cells() -> [((usize, usize), (usize, usize)); 12] {
    let w = WAYPOINTS;
    [
        (START, w[1]),
        (START, w[0]),
        (w[0], w[2]),
        (w[0], w[3]),
        (w[1], w[4]),
        (w[4], w[5]),
        (w[2], w[6]),
        (w[6], w[2]),
        (w[3], w[7]),
        (w[5], GOAL),
        (w[7], w[8]),
        (w[8], GOAL),
    ]
}

pub fn map() -> LabyrinthMap {
    LabyrinthMap::parse(MAP).expect("built-in map is valid")
}

pub fn specs() -> Vec<SubsystemSpec> {
    subsystem_cells()
        .into_iter()
        .enumerate()
        .map(|(id, (entry, exit))| {
            let horizon = if id == 4 { LAVA_ROOM_HORIZON } else { HORIZON };
            SubsystemSpec::from_cells(id, &[entry], &[exit], horizon)
        })
        .collect()
}

pub fn init_state() -> EnvState {
    EnvState::alive(START.0, START.1, Orientation::East)
}

pub fn target() -> BTreeSet<EnvState> {
    expand_cells(&[GOAL])
}

/// Subsystems of the short route through both lava rooms.
pub const LAVA_ROUTE: [usize; 4] = [0, 4, 5, 9];
/// Subsystems of the long lava-free route.
pub const SAFE_ROUTE: [usize; 5] = [1, 3, 8, 10, 11];
