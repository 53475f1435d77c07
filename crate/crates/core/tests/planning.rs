mod common;

use icrl_core::exec::tag;
use icrl_core::labyrinth;
use icrl_core::synthetic::random_hlm;
use icrl_core::{
    build_hlm, enumerate_paths, max_reachability, plan, policy_values, ParamVector, StreamKey,
};
use proptest::prelude::*;
use rand::Rng;

fn random_case(seed: u64, k: usize, locations: usize) -> (icrl_core::Hlm, Vec<f64>) {
    let mut rng = StreamKey::new(seed, tag::TEST, k as u64, locations as u64).rng();
    let hlm = random_hlm(&mut rng, k, locations);
    let p = (0..k).map(|_| rng.gen::<f64>()).collect();
    (hlm, p)
}

proptest! {
    #[test]
    fn reachability_matches_policy_enumeration(seed in any::<u64>(), k in 2usize..6, locs in 1usize..4) {
        let (hlm, p) = random_case(seed, k, locs);
        let v = max_reachability(&hlm, &ParamVector::new(p.clone()).unwrap()).unwrap();
        let oracle = common::brute_force_reachability(&hlm, &p);
        prop_assert!((v.get(hlm.init_state()) - oracle).abs() < 1e-9);
    }

    #[test]
    fn reachability_is_monotone_in_p(seed in any::<u64>(), k in 2usize..6, bump in 0.0f64..1.0) {
        let (hlm, p) = random_case(seed, k, 3);
        let q: Vec<f64> = p.iter().map(|x| x + bump * (1.0 - x)).collect();
        let vp = max_reachability(&hlm, &ParamVector::new(p).unwrap()).unwrap();
        let vq = max_reachability(&hlm, &ParamVector::new(q).unwrap()).unwrap();
        for s in 0..hlm.num_states() {
            prop_assert!(vp.get(s) <= vq.get(s) + 1e-12);
        }
    }

    #[test]
    fn extracted_policy_attains_the_optimum(seed in any::<u64>(), k in 2usize..6) {
        let (hlm, p) = random_case(seed, k, 3);
        let p = ParamVector::new(p).unwrap();
        let (meta, predicted) = plan(&hlm, &p).unwrap();
        let optimal = max_reachability(&hlm, &p).unwrap();
        let achieved = policy_values(&hlm, &p, &meta).unwrap();
        for s in 0..hlm.num_states() {
            prop_assert!((achieved.get(s) - optimal.get(s)).abs() < 1e-9);
        }
        prop_assert!((predicted - common::chain_value(&hlm, p.as_slice(), &meta.choice)).abs() < 1e-9);
    }

    #[test]
    fn values_are_probabilities(seed in any::<u64>(), k in 2usize..6) {
        let (hlm, p) = random_case(seed, k, 3);
        let v = max_reachability(&hlm, &ParamVector::new(p).unwrap()).unwrap();
        prop_assert!(v.v.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert_eq!(v.get(hlm.goal_state()), 1.0);
        prop_assert_eq!(v.get(hlm.fail_state()), 0.0);
    }
}

#[test]
fn labyrinth_model_structure() {
    let hlm = build_hlm(&labyrinth::specs(), &labyrinth::init_state(), &labyrinth::target()).unwrap();
    // start, nine waypoints, goal, fail
    assert_eq!(hlm.num_states(), 12);
    assert_eq!(hlm.available(hlm.init_state()), &[0, 1]);
    assert_eq!(hlm.succ(9), hlm.goal_state());
    assert_eq!(hlm.succ(11), hlm.goal_state());
    // the middle room pair forms a cycle
    assert_eq!(hlm.succ(7), hlm.abstract_of(&icrl_core::EnvState::alive(10, 5, icrl_core::Orientation::North)));
    let routes: Vec<Vec<usize>> = enumerate_paths(&hlm).unwrap().into_iter().map(|p| p.subsystems).collect();
    assert_eq!(routes, vec![labyrinth::LAVA_ROUTE.to_vec(), labyrinth::SAFE_ROUTE.to_vec()]);
}

#[test]
fn labyrinth_prediction_follows_the_better_route() {
    let hlm = build_hlm(&labyrinth::specs(), &labyrinth::init_state(), &labyrinth::target()).unwrap();
    let mut p = vec![0.0; 12];
    for c in labyrinth::LAVA_ROUTE {
        p[c] = 0.9;
    }
    for c in labyrinth::SAFE_ROUTE {
        p[c] = 0.99;
    }
    let (meta, predicted) = plan(&hlm, &ParamVector::new(p).unwrap()).unwrap();
    assert!((predicted - 0.99f64.powi(5)).abs() < 1e-9);
    assert_eq!(meta.get(hlm.init_state()), Some(1));
}
