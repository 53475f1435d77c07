//! Random high-level models for tests and benchmarks.
//!
//! Each abstract location is a single token cell `(t + 1, 1)` on an imaginary
//! strip; subsystems move between tokens. Token 0 holds the initial state and
//! the last token is the target.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::{EnvState, Orientation};
use crate::subsystems::{build_hlm, expand_cells, Hlm, SubsystemSpec};

fn token(t: usize) -> (usize, usize) {
    (t + 1, 1)
}

/// A random composable model with `subsystems` subsystems over `locations`
/// non-target locations (at least 1). At least one subsystem starts at the
/// initial location and at least one ends in the target; exits to locations
/// no subsystem starts from lead to the failure class.
pub fn random_hlm<R: Rng + ?Sized>(rng: &mut R, subsystems: usize, locations: usize) -> Hlm {
    assert!(subsystems >= 2 && locations >= 1);
    let target = locations;
    let mut pairs: Vec<(usize, usize)> = (0..subsystems)
        .map(|_| (rng.gen_range(0..locations), rng.gen_range(0..=locations)))
        .collect();
    pairs[0].0 = 0;
    pairs[1].1 = target;
    pairs.shuffle(rng);
    let specs: Vec<SubsystemSpec> = pairs
        .iter()
        .enumerate()
        .map(|(id, &(a, b))| SubsystemSpec::from_cells(id, &[token(a)], &[token(b)], 1))
        .collect();
    let (x, y) = token(0);
    build_hlm(
        &specs,
        &EnvState::alive(x, y, Orientation::North),
        &expand_cells(&[token(target)]),
    )
    .expect("token models are composable")
}
