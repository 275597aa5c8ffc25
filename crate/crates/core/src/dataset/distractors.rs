use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{GridMap, Position, CELLS};
use crate::planner::Trajectory;
use crate::seed;

use super::WINDOW;

/// How the three decoys are placed relative to the actor's behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "snake_case")]
pub enum DistractorMode {
    Random,
    /// `k` decoys on cells the actor saw during the chunk's past steps and is
    /// not heading through.
    Ignored(usize),
    /// `k` decoys on the actor's shortest path to the target.
    Aligned(usize),
}

impl DistractorMode {
    fn special(self) -> usize {
        match self {
            DistractorMode::Random => 0,
            DistractorMode::Ignored(k) | DistractorMode::Aligned(k) => k,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            DistractorMode::Random => Ok(()),
            DistractorMode::Ignored(k) | DistractorMode::Aligned(k) if (1..=3).contains(&k) => Ok(()),
            other => Err(Error::InvalidArgument(format!("{other}: k must be 1, 2 or 3"))),
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            DistractorMode::Random => 0,
            DistractorMode::Ignored(k) => 10 + k as u64,
            DistractorMode::Aligned(k) => 20 + k as u64,
        }
    }
}

impl fmt::Display for DistractorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistractorMode::Random => f.write_str("random"),
            DistractorMode::Ignored(k) => write!(f, "ignored:{k}"),
            DistractorMode::Aligned(k) => write!(f, "aligned:{k}"),
        }
    }
}

impl FromStr for DistractorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mode = match s.split_once(':') {
            None if s == "random" => DistractorMode::Random,
            Some((kind, k)) => {
                let k = k
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad count in `{s}`")))?;
                match kind {
                    "ignored" => DistractorMode::Ignored(k),
                    "aligned" => DistractorMode::Aligned(k),
                    _ => return Err(Error::InvalidArgument(format!("unknown mode `{s}`"))),
                }
            }
            None => return Err(Error::InvalidArgument(format!("unknown mode `{s}`"))),
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// The target plus three identical decoys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ObjectSet {
    pub target: Position,
    pub distractors: [Position; 3],
}

impl ObjectSet {
    /// Target first, then distractors in placement order.
    pub fn cells(&self) -> [Position; 4] {
        [
            self.target,
            self.distractors[0],
            self.distractors[1],
            self.distractors[2],
        ]
    }

    /// The objects in a seeded random order, one per object plane, so that
    /// no plane index singles out the target.
    pub fn plane_order(&self, seed: u64) -> [Position; 4] {
        let mut cells = self.cells();
        cells.shuffle(&mut seed::rng(seed));
        cells
    }
}

/// Cells of the shortest path from the actor's position at `t` to the target,
/// endpoints excluded.
pub(crate) fn future_path(map: &GridMap, traj: &Trajectory, t: usize) -> Vec<Position> {
    let path = map
        .shortest_path(traj.steps[t].pos, traj.target)
        .expect("free cells of a valid map are connected");
    let n = path.cells.len();
    if n <= 2 {
        Vec::new()
    } else {
        path.cells[1..n - 1].to_vec()
    }
}

/// Free cells inside the field of view at any of the chunk's past steps.
pub(crate) fn past_view(map: &GridMap, traj: &Trajectory, t: usize) -> Vec<bool> {
    let mut seen = vec![false; CELLS];
    for s in &traj.steps[t.saturating_sub(WINDOW)..t] {
        for c in map.fov(s.pos).cells() {
            seen[c.index()] = map.is_free(c);
        }
    }
    seen
}

/// Whether step `t` can host the mode at all: ignoring needs a past, and
/// `Aligned(k)` needs at least `k` cells strictly between actor and target.
pub fn is_eligible(map: &GridMap, traj: &Trajectory, t: usize, mode: DistractorMode) -> bool {
    match mode {
        DistractorMode::Random => true,
        DistractorMode::Ignored(_) => t >= 1,
        DistractorMode::Aligned(k) => future_path(map, traj, t).len() >= k,
    }
}

/// Places the target and three distractors for the sample at step `t`.
pub fn inject_distractors(
    map: &GridMap,
    traj: &Trajectory,
    t: usize,
    mode: DistractorMode,
    seed: u64,
) -> Result<ObjectSet> {
    mode.validate()?;
    let actor = traj.steps[t].pos;
    let target = traj.target;
    let mut rng = seed::rng(seed);

    let candidates: Vec<Position> = match mode {
        DistractorMode::Random => Vec::new(),
        DistractorMode::Ignored(_) => {
            let seen = past_view(map, traj, t);
            let ahead = future_path(map, traj, t);
            (0..CELLS)
                .filter(|&i| seen[i])
                .map(Position::from_index)
                .filter(|&p| p != target && p != actor && !ahead.contains(&p))
                .collect()
        }
        DistractorMode::Aligned(_) => future_path(map, traj, t),
    };
    let k = mode.special();
    if candidates.len() < k {
        return Err(Error::InfeasiblePlacement {
            needed: k,
            available: candidates.len(),
        });
    }
    let mut placed: Vec<Position> = candidates.choose_multiple(&mut rng, k).copied().collect();

    let elsewhere: Vec<Position> = map
        .free_cells()
        .filter(|&p| p != target && p != actor && !candidates.contains(&p))
        .collect();
    if elsewhere.len() < 3 - k {
        return Err(Error::InfeasiblePlacement {
            needed: 3 - k,
            available: elsewhere.len(),
        });
    }
    placed.extend(elsewhere.choose_multiple(&mut rng, 3 - k));
    Ok(ObjectSet {
        target,
        distractors: [placed[0], placed[1], placed[2]],
    })
}
