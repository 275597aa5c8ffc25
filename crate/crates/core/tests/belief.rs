mod common;

use proptest::prelude::*;
use rand::Rng;
use tom_core::belief::{belief_entropy, init_belief, update_belief};
use tom_core::gridworld::{generate_map, Action, GridMap, MapGenParams, Position, CELLS};
use tom_core::{seed, BeliefState};

/// Random walk with a hidden target; returns the start and the observation
/// history the filter sees.
fn walk(map: &GridMap, rng: &mut seed::Rng, len: usize) -> (Position, Position, Vec<(Position, Option<Position>)>) {
    let free: Vec<_> = map.free_cells().collect();
    let start = free[rng.random_range(0..free.len())];
    let target = loop {
        let t = free[rng.random_range(0..free.len())];
        if t != start {
            break t;
        }
    };
    let mut pos = start;
    let mut history = Vec::new();
    for k in 0..=len {
        if k > 0 {
            pos = map.step(pos, Action::from_index(rng.random_range(0..8)));
        }
        let seen = (pos.chebyshev(target) <= 2).then_some(target);
        history.push((pos, seen));
    }
    (start, target, history)
}

fn filter(map: &GridMap, start: Position, history: &[(Position, Option<Position>)]) -> Vec<BeliefState> {
    let mut b = init_belief(map, start);
    let mut out = Vec::new();
    for &(pos, seen) in history {
        b = update_belief(&b, &map.fov(pos), seen).unwrap();
        out.push(b.clone());
    }
    out
}

#[test]
fn filter_matches_enumeration_on_small_maps() {
    let mut worst = 0.0f64;
    for m in 0..100u64 {
        let map = common::block_map(m, 6 + (m as usize % 2));
        let mut rng = seed::rng(seed::derive(77, m));
        let (start, _, history) = walk(&map, &mut rng, 25);
        for (k, b) in filter(&map, start, &history).iter().enumerate() {
            let oracle = common::brute_posterior(&map, start, &history[..=k]);
            for (x, y) in b.probs().iter().zip(&oracle) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    assert!(worst < 1e-9, "max abs difference {worst}");
}

#[test]
fn filter_matches_enumeration_on_generated_maps() {
    let params = MapGenParams::default();
    for m in 0..20u64 {
        let map = generate_map(format!("g{m}"), m, &params).unwrap();
        let mut rng = seed::rng(m);
        let (start, _, history) = walk(&map, &mut rng, 40);
        let last = filter(&map, start, &history).pop().unwrap();
        let oracle = common::brute_posterior(&map, start, &history);
        for (x, y) in last.probs().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn seeing_the_target_collapses_the_belief() {
    let map = GridMap::empty("e");
    let b = init_belief(&map, Position::new(0, 0));
    let t = Position::new(1, 2);
    let after = update_belief(&b, &map.fov(Position::new(0, 0)), Some(t)).unwrap();
    assert!(after.is_delta());
    assert_eq!(after.prob(t), 1.0);
    assert_eq!(belief_entropy(&after), 0.0);
}

fn arb_case() -> impl Strategy<Value = (u64, u64, usize)> {
    (0u64..1000, any::<u64>(), 1usize..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn true_target_keeps_mass_until_seen((m, s, len) in arb_case()) {
        let map = generate_map("p", m, &MapGenParams::default()).unwrap();
        let mut rng = seed::rng(s);
        let (start, target, history) = walk(&map, &mut rng, len);
        let mut seen = false;
        for (b, &(_, obs)) in filter(&map, start, &history).iter().zip(&history) {
            seen |= obs.is_some();
            if seen {
                prop_assert_eq!(b.prob(target), 1.0);
            } else {
                prop_assert!(b.prob(target) > 0.0);
            }
            let total: f64 = b.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(b.support().all(|p| map.is_free(p) && p != start));
        }
    }

    #[test]
    fn repeating_an_observation_changes_nothing((m, s, len) in arb_case()) {
        let map = generate_map("p", m, &MapGenParams::default()).unwrap();
        let mut rng = seed::rng(s);
        let (start, _, history) = walk(&map, &mut rng, len);
        let b = filter(&map, start, &history).pop().unwrap();
        let &(pos, seen) = history.last().unwrap();
        let again = update_belief(&b, &map.fov(pos), seen).unwrap();
        prop_assert_eq!(again.probs(), b.probs());
    }

    #[test]
    fn entropy_is_the_log_of_the_support((m, s, len) in arb_case()) {
        // every reachable belief is uniform on its support
        let map = generate_map("p", m, &MapGenParams::default()).unwrap();
        let mut rng = seed::rng(s);
        let (start, _, history) = walk(&map, &mut rng, len);
        for b in filter(&map, start, &history) {
            let mut sum = 0.0;
            for i in 0..CELLS {
                let p = b.probs()[i];
                if p > 0.0 {
                    sum -= p * p.ln();
                }
            }
            let n = b.support().count() as f64;
            prop_assert!((belief_entropy(&b) - sum).abs() < 1e-12);
            prop_assert!((belief_entropy(&b) - n.ln()).abs() < 1e-9);
        }
    }
}
