//! Spatialisation-concatenation: scalar features tiled into constant planes,
//! stacked with one-hot spatial planes into one (11, 11, 20) tensor.
//!
//! | planes | content                                                    |
//! |--------|------------------------------------------------------------|
//! | 0–8    | count of each action among the ≤5 past moves, ÷5, tiled    |
//! | 9–12   | the four objects, one per plane, in shuffled order         |
//! | 13–17  | actor position at t−5 … t−1 (oldest first, zero if absent) |
//! | 18     | walls                                                      |
//! | 19     | actor position at t                                        |

use crate::gridworld::{Action, Cell, GridMap, Position, CELLS, GRID};
use crate::planner::Trajectory;

use super::WINDOW;

pub const PLANES: usize = 20;
pub const INPUT_LEN: usize = CELLS * PLANES;

pub const ACTION_PLANES: usize = 0;
pub const OBJECT_PLANES: usize = 9;
pub const PAST_PLANES: usize = 13;
pub const WALL_PLANE: usize = 18;
pub const CURRENT_PLANE: usize = 19;

const _: () = assert!(PLANES == Action::COUNT + 4 + WINDOW + 1 + 1);

/// HWC tensor, `value(row, col, plane) = data[(row * 11 + col) * 20 + plane]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputTensor {
    data: Vec<f32>,
}

impl InputTensor {
    pub const SHAPE: [usize; 3] = [GRID, GRID, PLANES];

    pub fn zeros() -> Self {
        InputTensor {
            data: vec![0.0; INPUT_LEN],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Option<Self> {
        (data.len() == INPUT_LEN).then_some(InputTensor { data })
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, p: Position, plane: usize) -> f32 {
        self.data[p.index() * PLANES + plane]
    }

    fn set(&mut self, p: Position, plane: usize, v: f32) {
        self.data[p.index() * PLANES + plane] = v;
    }

    fn fill(&mut self, plane: usize, v: f32) {
        for cell in 0..CELLS {
            self.data[cell * PLANES + plane] = v;
        }
    }

    /// Values of one plane in row-major cell order.
    pub fn plane(&self, plane: usize) -> Vec<f32> {
        (0..CELLS).map(|c| self.data[c * PLANES + plane]).collect()
    }
}

/// Encodes the behaviour chunk ending at step `t`. `objects` are written to
/// planes 9–12 in the given order.
pub fn encode(map: &GridMap, traj: &Trajectory, t: usize, objects: &[Position; 4]) -> InputTensor {
    let mut x = InputTensor::zeros();
    let first = t.saturating_sub(WINDOW);

    let mut counts = [0usize; Action::COUNT];
    for s in &traj.steps[first..t] {
        counts[s.action.index()] += 1;
    }
    for (a, &n) in counts.iter().enumerate() {
        if n > 0 {
            x.fill(ACTION_PLANES + a, n as f32 / WINDOW as f32);
        }
    }

    for (i, &p) in objects.iter().enumerate() {
        x.set(p, OBJECT_PLANES + i, 1.0);
    }

    // right-aligned: plane 17 is always t-1
    for s in first..t {
        let plane = PAST_PLANES + WINDOW - (t - s);
        x.set(traj.steps[s].pos, plane, 1.0);
    }

    for cell in 0..CELLS {
        let p = Position::from_index(cell);
        if map.cell(p) == Cell::Wall {
            x.set(p, WALL_PLANE, 1.0);
        }
    }
    x.set(traj.steps[t].pos, CURRENT_PLANE, 1.0);
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::BeliefState;
    use crate::gridworld::{generate_map, MapGenParams};
    use crate::planner::TrajectoryStep;

    fn eastward(n: usize) -> Trajectory {
        let target = Position::new(2, n);
        Trajectory {
            map_id: "m".into(),
            episode: 0,
            target,
            steps: (0..=n)
                .map(|c| TrajectoryStep {
                    pos: Position::new(2, c),
                    action: if c == n { Action::Stay } else { Action::E },
                    belief_before: BeliefState::delta(target),
                    target_visible: true,
                })
                .collect(),
        }
    }

    const OBJECTS: [Position; 4] = [
        Position { row: 9, col: 9 },
        Position { row: 8, col: 1 },
        Position { row: 0, col: 10 },
        Position { row: 7, col: 7 },
    ];

    #[test]
    fn empty_history() {
        let map = GridMap::empty("m");
        let x = encode(&map, &eastward(8), 0, &OBJECTS);
        for plane in (0..9).chain(13..18) {
            assert!(x.plane(plane).iter().all(|&v| v == 0.0), "plane {plane}");
        }
        assert_eq!(x.get(Position::new(2, 0), CURRENT_PLANE), 1.0);
        assert_eq!(x.plane(CURRENT_PLANE).iter().sum::<f32>(), 1.0);
    }

    #[test]
    fn five_identical_actions_tile_to_one() {
        let map = GridMap::empty("m");
        let x = encode(&map, &eastward(8), 5, &OBJECTS);
        assert!(x.plane(Action::E.index()).iter().all(|&v| v == 1.0));
        for a in Action::ALL.iter().filter(|&&a| a != Action::E) {
            assert!(x.plane(a.index()).iter().all(|&v| v == 0.0));
        }
        for (k, plane) in (PAST_PLANES..PAST_PLANES + 5).enumerate() {
            assert_eq!(x.get(Position::new(2, k), plane), 1.0);
        }
    }

    #[test]
    fn short_history_is_right_aligned() {
        let map = GridMap::empty("m");
        let x = encode(&map, &eastward(8), 2, &OBJECTS);
        assert!(x.plane(Action::E.index()).iter().all(|&v| v == 0.4));
        for plane in 13..16 {
            assert!(x.plane(plane).iter().all(|&v| v == 0.0));
        }
        assert_eq!(x.get(Position::new(2, 0), 16), 1.0);
        assert_eq!(x.get(Position::new(2, 1), 17), 1.0);
    }

    #[test]
    fn walls_and_objects() {
        let map = generate_map("m", 3, &MapGenParams::default()).unwrap();
        let traj = Trajectory {
            map_id: "m".into(),
            episode: 0,
            target: OBJECTS[0],
            steps: vec![TrajectoryStep {
                pos: map.free_cells().next().unwrap(),
                action: Action::Stay,
                belief_before: BeliefState::delta(OBJECTS[0]),
                target_visible: false,
            }],
        };
        let x = encode(&map, &traj, 0, &OBJECTS);
        for cell in 0..CELLS {
            let p = Position::from_index(cell);
            assert_eq!(x.get(p, WALL_PLANE) == 1.0, !map.is_free(p));
        }
        for (i, &o) in OBJECTS.iter().enumerate() {
            assert_eq!(x.get(o, OBJECT_PLANES + i), 1.0);
            assert_eq!(x.plane(OBJECT_PLANES + i).iter().sum::<f32>(), 1.0);
        }
    }
}
