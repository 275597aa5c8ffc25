//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use tom_core::gridworld::{Action, GridMap, Position, CELLS};
use tom_core::planner::PomcpConfig;

/// Value iteration on the fully observed problem (target known). Returns
/// `Q[s][a]`; the target cell is absorbing with value 0.
pub fn value_iteration(map: &GridMap, target: Position, cfg: &PomcpConfig) -> Vec<[f64; 9]> {
    let mut v = vec![0.0f64; CELLS];
    let mut q = vec![[0.0f64; 9]; CELLS];
    for _ in 0..500 {
        let mut delta = 0.0f64;
        for s in map.free_cells() {
            if s == target {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for a in Action::ALL {
                let next = map.step(s, a);
                let value = if next == target {
                    cfg.step_cost + cfg.reward_target
                } else {
                    cfg.step_cost + cfg.discount * v[next.index()]
                };
                q[s.index()][a.index()] = value;
                best = best.max(value);
            }
            delta = delta.max((best - v[s.index()]).abs());
            v[s.index()] = best;
        }
        if delta < 1e-12 {
            break;
        }
    }
    q
}

pub fn optimal_actions(q: &[f64; 9]) -> Vec<Action> {
    let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Action::ALL
        .into_iter()
        .filter(|a| q[a.index()] >= best - 1e-9)
        .collect()
}

/// Plain BFS distance, independent of the crate's path code.
pub fn bfs_distance(map: &GridMap, a: Position, b: Position) -> Option<usize> {
    let mut dist = vec![usize::MAX; CELLS];
    dist[a.index()] = 0;
    let mut frontier = vec![a];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for p in frontier {
            for dr in -1i32..=1 {
                for dc in -1i32..=1 {
                    let (r, c) = (p.row as i32 + dr, p.col as i32 + dc);
                    if !(0..11).contains(&r) || !(0..11).contains(&c) {
                        continue;
                    }
                    let q = Position::new(r as usize, c as usize);
                    if map.is_free(q) && dist[q.index()] == usize::MAX {
                        dist[q.index()] = dist[p.index()] + 1;
                        next.push(q);
                    }
                }
            }
        }
        frontier = next;
    }
    (dist[b.index()] != usize::MAX).then_some(dist[b.index()])
}

pub mod grad;

/// A map whose free cells all lie in the top-left `size`×`size` block, with a
/// few random interior walls. Retries until the block stays connected.
pub fn block_map(seed: u64, size: usize) -> GridMap {
    use rand::Rng;
    use tom_core::gridworld::Cell;
    let mut rng = tom_core::seed::rng(seed);
    loop {
        let mut cells = [Cell::Wall; CELLS];
        for r in 0..size {
            for c in 0..size {
                if rng.random::<f64>() >= 0.08 {
                    cells[r * 11 + c] = Cell::Free;
                }
            }
        }
        if let Ok(map) = GridMap::from_cells(format!("block-{seed}"), seed, cells) {
            return map;
        }
    }
}

/// Posterior over the target by enumeration: uniform over every free cell
/// other than `start` that agrees with each `(actor position, seen at)`
/// observation, using the 5×5 window directly.
pub fn brute_posterior(map: &GridMap, start: Position, history: &[(Position, Option<Position>)]) -> Vec<f64> {
    let in_window = |a: Position, b: Position| {
        (a.row as i64 - b.row as i64).abs() <= 2 && (a.col as i64 - b.col as i64).abs() <= 2
    };
    let consistent: Vec<bool> = (0..CELLS)
        .map(|i| {
            let t = Position::from_index(i);
            map.is_free(t)
                && t != start
                && history.iter().all(|&(at, seen)| match seen {
                    Some(s) => s == t,
                    None => !in_window(at, t),
                })
        })
        .collect();
    let n = consistent.iter().filter(|&&c| c).count() as f64;
    consistent.iter().map(|&c| if c { 1.0 / n } else { 0.0 }).collect()
}

/// Checks one encoded sample against the plane layout and its trajectory.
/// Returns a description of the first violation.
pub fn check_sample(
    map: &GridMap,
    traj: &tom_core::planner::Trajectory,
    t: usize,
    input: &[f32],
    info: &tom_core::dataset::SampleInfo,
) -> Result<(), String> {
    let at = |r: usize, c: usize, plane: usize| input[(r * 11 + c) * 20 + plane];
    let plane = |k: usize| -> Vec<f32> { (0..CELLS).map(|i| input[i * 20 + k]).collect() };
    let ones = |k: usize| -> Vec<usize> {
        plane(k).iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect()
    };
    if input.len() != 11 * 11 * 20 {
        return Err(format!("input has {} values", input.len()));
    }
    let first = t.saturating_sub(5);
    for a in 0..9 {
        let expected = traj.steps[first..t].iter().filter(|s| s.action.index() == a).count() as f32 / 5.0;
        if plane(a).iter().any(|&v| v != expected) {
            return Err(format!("action plane {a} is not the constant {expected}"));
        }
    }
    let mut objects: Vec<usize> = Vec::new();
    for k in 9..13 {
        let on = ones(k);
        if on.len() != 1 || plane(k)[on[0]] != 1.0 {
            return Err(format!("object plane {k} is not one-hot"));
        }
        objects.push(on[0]);
    }
    objects.sort();
    let mut expected: Vec<usize> = info.objects.iter().map(|&o| usize::from(o)).collect();
    expected.sort();
    if objects != expected || info.objects[0] as usize != traj.target.index() {
        return Err("object planes disagree with the object set".into());
    }
    for (j, k) in (13..18).enumerate() {
        // plane 13 + j holds step t - 5 + j
        let on = ones(k);
        match (t + j).checked_sub(5) {
            Some(s) if s >= first => {
                if on != [traj.steps[s].pos.index()] || plane(k)[on[0]] != 1.0 {
                    return Err(format!("past plane {k} does not mark step {s}"));
                }
            }
            _ => {
                if !on.is_empty() {
                    return Err(format!("past plane {k} should be empty"));
                }
            }
        }
    }
    for r in 0..11 {
        for c in 0..11 {
            let wall = !map.is_free(Position::new(r, c));
            if at(r, c, 18) != if wall { 1.0 } else { 0.0 } {
                return Err(format!("wall plane wrong at ({r}, {c})"));
            }
        }
    }
    let pos = traj.steps[t].pos;
    if ones(19) != [pos.index()] || at(pos.row, pos.col, 19) != 1.0 {
        return Err("current-position plane is not one-hot at the actor".into());
    }
    let action = Action::from_index(usize::from(info.next_action));
    if usize::from(info.next_state) != map.step(pos, action).index() {
        return Err("next state is not the move's result".into());
    }
    if usize::from(info.next_state) != traj.steps[t + 1].pos.index() || action != traj.steps[t].action {
        return Err("labels disagree with the trajectory".into());
    }
    Ok(())
}
