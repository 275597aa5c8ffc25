//! Deterministic 11×11 grid environment.
//!
//! Rows grow southwards: `N` decreases the row index, `E` increases the column.
//! A move into a wall or off the grid leaves the actor where it is.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const GRID: usize = 11;
pub const CELLS: usize = GRID * GRID;
/// Half-width of the square field of view (5×5 window).
pub const FOV_RADIUS: usize = 2;
/// Lower bound on free cells so that actor, target, three distractors and
/// the past positions always fit.
pub const MIN_FREE_CELLS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub fn new(row: usize, col: usize) -> Self {
        assert!(row < GRID && col < GRID, "position ({row}, {col}) out of bounds");
        Position { row, col }
    }

    /// Row-major cell index in `0..121`.
    pub fn index(self) -> usize {
        self.row * GRID + self.col
    }

    pub fn from_index(index: usize) -> Self {
        Position::new(index / GRID, index % GRID)
    }

    pub fn chebyshev(self, other: Position) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }

    fn offset(self, (dr, dc): (isize, isize)) -> Option<Position> {
        let row = self.row.checked_add_signed(dr)?;
        let col = self.col.checked_add_signed(dc)?;
        (row < GRID && col < GRID).then_some(Position { row, col })
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    N,
    E,
    S,
    W,
    NE,
    NW,
    SE,
    SW,
    #[serde(rename = "STAY")]
    Stay,
}

impl Action {
    pub const COUNT: usize = 9;
    /// Canonical order; also the tie-break order everywhere.
    pub const ALL: [Action; 9] = [
        Action::N,
        Action::E,
        Action::S,
        Action::W,
        Action::NE,
        Action::NW,
        Action::SE,
        Action::SW,
        Action::Stay,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Self {
        Action::ALL[index]
    }

    /// `(Δrow, Δcol)`.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::N => (-1, 0),
            Action::E => (0, 1),
            Action::S => (1, 0),
            Action::W => (0, -1),
            Action::NE => (-1, 1),
            Action::NW => (-1, -1),
            Action::SE => (1, 1),
            Action::SW => (1, -1),
            Action::Stay => (0, 0),
        }
    }

    pub fn inverse(self) -> Self {
        match self {
            Action::N => Action::S,
            Action::E => Action::W,
            Action::S => Action::N,
            Action::W => Action::E,
            Action::NE => Action::SW,
            Action::NW => Action::SE,
            Action::SE => Action::NW,
            Action::SW => Action::NE,
            Action::Stay => Action::Stay,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Action::N => "N",
            Action::E => "E",
            Action::S => "S",
            Action::W => "W",
            Action::NE => "NE",
            Action::NW => "NW",
            Action::SE => "SE",
            Action::SW => "SW",
            Action::Stay => "STAY",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.symbol() == s)
            .ok_or_else(|| Error::format("action", format!("unknown action `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Wall,
    Free,
}

/// The cells inside the 5×5 window around an actor, clipped at the border.
/// Walls do not occlude.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldOfView {
    center: Position,
}

impl FieldOfView {
    pub fn new(center: Position) -> Self {
        FieldOfView { center }
    }

    pub fn center(&self) -> Position {
        self.center
    }

    pub fn contains(&self, p: Position) -> bool {
        self.center.chebyshev(p) <= FOV_RADIUS
    }

    pub fn cells(&self) -> impl Iterator<Item = Position> + '_ {
        let r0 = self.center.row.saturating_sub(FOV_RADIUS);
        let r1 = (self.center.row + FOV_RADIUS).min(GRID - 1);
        let c0 = self.center.col.saturating_sub(FOV_RADIUS);
        let c1 = (self.center.col + FOV_RADIUS).min(GRID - 1);
        (r0..=r1).flat_map(move |row| (c0..=c1).map(move |col| Position { row, col }))
    }

    pub fn len(&self) -> usize {
        self.cells().count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    /// Number of moves.
    pub length: usize,
    /// Visited cells, both endpoints included.
    pub cells: Vec<Position>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapGenParams {
    /// Probability that a cell not covered by a column becomes a wall.
    pub wall_density: f64,
    /// Number of 1×1 or 1×2 wall blocks placed before the random walls.
    pub columns: usize,
    /// Surround the grid with a wall ring.
    pub border: bool,
    pub max_attempts: usize,
}

impl Default for MapGenParams {
    fn default() -> Self {
        MapGenParams {
            wall_density: 0.1,
            columns: 4,
            border: false,
            max_attempts: 1000,
        }
    }
}

impl MapGenParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.35).contains(&self.wall_density) {
            return Err(Error::InvalidArgument(format!(
                "wall density {} outside [0, 0.35]",
                self.wall_density
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidArgument("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// An 11×11 occupancy grid whose free cells form a single connected region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMap {
    id: String,
    seed: u64,
    cells: [Cell; CELLS],
}

impl GridMap {
    /// Builds a map and checks connectivity and the free-cell minimum.
    pub fn from_cells(id: impl Into<String>, seed: u64, cells: [Cell; CELLS]) -> Result<Self> {
        let map = GridMap {
            id: id.into(),
            seed,
            cells,
        };
        map.check_invariants()?;
        Ok(map)
    }

    /// All cells free.
    pub fn empty(id: impl Into<String>) -> Self {
        GridMap {
            id: id.into(),
            seed: 0,
            cells: [Cell::Free; CELLS],
        }
    }

    fn check_invariants(&self) -> Result<()> {
        let free = self.free_count();
        if free < MIN_FREE_CELLS {
            return Err(Error::InvalidMap(format!(
                "map `{}` has {free} free cells, need at least {MIN_FREE_CELLS}",
                self.id
            )));
        }
        if !self.is_connected() {
            return Err(Error::InvalidMap(format!(
                "free cells of map `{}` are not connected",
                self.id
            )));
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cell(&self, p: Position) -> Cell {
        self.cells[p.index()]
    }

    pub fn is_free(&self, p: Position) -> bool {
        self.cell(p) == Cell::Free
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Position> + '_ {
        (0..CELLS)
            .map(Position::from_index)
            .filter(|&p| self.is_free(p))
    }

    pub fn free_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == Cell::Free).count()
    }

    /// Result of taking `action` from `pos`; blocked moves are no-ops.
    pub fn step(&self, pos: Position, action: Action) -> Position {
        match pos.offset(action.delta()) {
            Some(next) if self.is_free(next) => next,
            _ => pos,
        }
    }

    pub fn is_blocked(&self, pos: Position, action: Action) -> bool {
        action != Action::Stay && self.step(pos, action) == pos
    }

    pub fn fov(&self, pos: Position) -> FieldOfView {
        FieldOfView::new(pos)
    }

    /// Cells reachable from `start` (flood fill over the 8 move directions).
    pub fn reachable_from(&self, start: Position) -> Vec<bool> {
        let mut seen = vec![false; CELLS];
        if !self.is_free(start) {
            return seen;
        }
        let mut queue = VecDeque::from([start]);
        seen[start.index()] = true;
        while let Some(p) = queue.pop_front() {
            for a in &Action::ALL[..8] {
                let q = self.step(p, *a);
                if !seen[q.index()] {
                    seen[q.index()] = true;
                    queue.push_back(q);
                }
            }
        }
        seen
    }

    pub fn is_connected(&self) -> bool {
        let Some(start) = self.free_cells().next() else {
            return false;
        };
        let seen = self.reachable_from(start);
        self.free_cells().all(|p| seen[p.index()])
    }

    /// Breadth-first shortest path; neighbours are expanded in canonical action
    /// order, so ties resolve deterministically.
    pub fn shortest_path(&self, from: Position, to: Position) -> Result<Path> {
        let unreachable = || Error::Unreachable {
            from_row: from.row,
            from_col: from.col,
            row: to.row,
            col: to.col,
        };
        if !self.is_free(from) || !self.is_free(to) {
            return Err(unreachable());
        }
        let mut parent = [usize::MAX; CELLS];
        parent[from.index()] = from.index();
        let mut queue = VecDeque::from([from]);
        while let Some(p) = queue.pop_front() {
            if p == to {
                break;
            }
            for a in &Action::ALL[..8] {
                let q = self.step(p, *a);
                if parent[q.index()] == usize::MAX {
                    parent[q.index()] = p.index();
                    queue.push_back(q);
                }
            }
        }
        if parent[to.index()] == usize::MAX {
            return Err(unreachable());
        }
        let mut cells = vec![to];
        let mut cur = to.index();
        while cur != from.index() {
            cur = parent[cur];
            cells.push(Position::from_index(cur));
        }
        cells.reverse();
        Ok(Path {
            length: cells.len() - 1,
            cells,
        })
    }

    /// Plain-text form: a `map <id> seed=<n>` header and 11 rows of `#`/`.`.
    pub fn to_text(&self) -> String {
        let mut out = format!("map {} seed={}\n", self.id, self.seed);
        for row in 0..GRID {
            for col in 0..GRID {
                out.push(match self.cells[row * GRID + col] {
                    Cell::Wall => '#',
                    Cell::Free => '.',
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("map", "empty input"))?;
        let mut parts = header.split(' ');
        let (Some("map"), Some(id), Some(seed), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::format("map", format!("bad header `{header}`")));
        };
        let seed = seed
            .strip_prefix("seed=")
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| Error::format("map", format!("bad seed in `{header}`")))?;
        let mut cells = [Cell::Free; CELLS];
        for row in 0..GRID {
            let line = lines
                .next()
                .ok_or_else(|| Error::format("map", format!("missing row {row}")))?;
            if line.len() != GRID {
                return Err(Error::format("map", format!("row {row} has {} chars", line.len())));
            }
            for (col, ch) in line.chars().enumerate() {
                cells[row * GRID + col] = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Free,
                    other => {
                        return Err(Error::format("map", format!("unexpected `{other}`")));
                    }
                };
            }
        }
        if lines.any(|l| !l.is_empty()) {
            return Err(Error::format("map", "trailing content"));
        }
        GridMap::from_cells(id, seed, cells)
    }
}

/// Places columns and Bernoulli walls on a blank grid, retrying until the
/// result is connected.
pub fn generate_map(id: impl Into<String>, seed: u64, params: &MapGenParams) -> Result<GridMap> {
    params.validate()?;
    let id = id.into();
    let mut rng = seed::rng(seed);
    for _ in 0..params.max_attempts {
        let mut cells = [Cell::Free; CELLS];
        if params.border {
            for i in 0..GRID {
                cells[i] = Cell::Wall;
                cells[(GRID - 1) * GRID + i] = Cell::Wall;
                cells[i * GRID] = Cell::Wall;
                cells[i * GRID + GRID - 1] = Cell::Wall;
            }
        }
        for _ in 0..params.columns {
            let row = rng.random_range(0..GRID);
            let col = rng.random_range(0..GRID);
            cells[row * GRID + col] = Cell::Wall;
            // 0: 1×1, 1: extends east, 2: extends south
            match rng.random_range(0..3) {
                1 if col + 1 < GRID => cells[row * GRID + col + 1] = Cell::Wall,
                2 if row + 1 < GRID => cells[(row + 1) * GRID + col] = Cell::Wall,
                _ => {}
            }
        }
        if params.wall_density > 0.0 {
            for cell in cells.iter_mut() {
                if *cell == Cell::Free && rng.random_bool(params.wall_density) {
                    *cell = Cell::Wall;
                }
            }
        }
        if let Ok(map) = GridMap::from_cells(id.clone(), seed, cells) {
            return Ok(map);
        }
    }
    Err(Error::GenerationFailed {
        attempts: params.max_attempts,
        density: params.wall_density,
        columns: params.columns,
    })
}

/// All-pairs shortest-path distances for one map.
#[derive(Clone, Debug)]
pub struct DistanceTable {
    dist: Vec<u8>,
}

impl DistanceTable {
    pub const UNREACHABLE: u8 = u8::MAX;

    pub fn new(map: &GridMap) -> Self {
        let mut dist = vec![Self::UNREACHABLE; CELLS * CELLS];
        for src in map.free_cells() {
            let row = &mut dist[src.index() * CELLS..(src.index() + 1) * CELLS];
            row[src.index()] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(p) = queue.pop_front() {
                let d = row[p.index()];
                for a in &Action::ALL[..8] {
                    let q = map.step(p, *a);
                    if row[q.index()] == Self::UNREACHABLE {
                        row[q.index()] = d + 1;
                        queue.push_back(q);
                    }
                }
            }
        }
        DistanceTable { dist }
    }

    pub fn distance(&self, a: Position, b: Position) -> u8 {
        self.dist[a.index() * CELLS + b.index()]
    }

    /// First action (canonical order) that brings `pos` one step closer to
    /// `target`; `Stay` when already there.
    pub fn greedy_action(&self, map: &GridMap, pos: Position, target: Position) -> Action {
        let here = self.distance(pos, target);
        Action::ALL[..8]
            .iter()
            .copied()
            .find(|&a| self.distance(map.step(pos, a), target) < here)
            .unwrap_or(Action::Stay)
    }
}
