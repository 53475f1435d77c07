#![allow(dead_code)]

use std::collections::BTreeSet;

use icrl_core::icrl::IcrlProblem;

pub type Problem = IcrlProblem;
use icrl_core::{expand_cells, EnvState, Hlm, LabyrinthMap, Orientation, SubsystemSpec};

/// Three rooms in a row joined by two doors; lava in the last room.
pub const THREE_ROOMS: &str = "\
#########
#S..#...#
#...#...#
#.......#
#####.###
#...L...#
#.L....G#
#########
";

pub fn three_rooms() -> IcrlProblem {
    let map = LabyrinthMap::parse(THREE_ROOMS).unwrap();
    IcrlProblem {
        map,
        slip: 0.1,
        specs: vec![
            SubsystemSpec::from_cells(0, &[(1, 1)], &[(4, 3)], 20),
            SubsystemSpec::from_cells(1, &[(4, 3)], &[(5, 4)], 20),
            SubsystemSpec::from_cells(2, &[(5, 4)], &[(7, 6)], 20),
        ],
        init: EnvState::alive(1, 1, Orientation::East),
        target: expand_cells(&[(7, 6)]),
    }
}

pub fn target_of(cells: &[(usize, usize)]) -> BTreeSet<EnvState> {
    expand_cells(cells)
}

/// Best goal probability over every deterministic meta-policy, found by
/// enumeration. Under a fixed policy the HLM run is a single chain that
/// either reaches the goal with the product of its parameters or never does.
pub fn brute_force_reachability(hlm: &Hlm, p: &[f64]) -> f64 {
    let n = hlm.num_states();
    let mut choice = vec![None; n];
    let mut best = 0.0_f64;
    enumerate(hlm, p, 0, &mut choice, &mut best);
    best
}

fn enumerate(hlm: &Hlm, p: &[f64], s: usize, choice: &mut Vec<Option<usize>>, best: &mut f64) {
    if s == hlm.num_states() {
        *best = best.max(chain_value(hlm, p, choice));
        return;
    }
    let options = hlm.available(s).to_vec();
    if hlm.is_terminal(s) || options.is_empty() {
        choice[s] = None;
        enumerate(hlm, p, s + 1, choice, best);
        return;
    }
    for c in options {
        choice[s] = Some(c);
        enumerate(hlm, p, s + 1, choice, best);
    }
}

pub fn chain_value(hlm: &Hlm, p: &[f64], choice: &[Option<usize>]) -> f64 {
    let mut s = hlm.init_state();
    let mut value = 1.0;
    let mut seen = vec![false; hlm.num_states()];
    loop {
        if s == hlm.goal_state() {
            return value;
        }
        if seen[s] {
            return 0.0;
        }
        seen[s] = true;
        match choice[s] {
            Some(c) => {
                value *= p[c];
                s = hlm.succ(c);
            }
            None => return 0.0,
        }
    }
}
