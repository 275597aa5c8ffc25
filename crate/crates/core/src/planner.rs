//! POMCP actor over the exact target belief.
//!
//! Each decision runs `max_samples` simulations. A simulation draws a target
//! cell from the root belief, descends the search tree by UCB1 over
//! `(action, observation)` children, grows one node and scores it with a
//! rollout. Observations are "target seen at cell c" or "not seen", which is
//! exactly what the belief filter conditions on.

use std::io::{BufRead, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::belief::BeliefState;
use crate::error::{Error, Result};
use crate::gridworld::{Action, DistanceTable, GridMap, Position, CELLS};
use crate::seed::{self, Rng};

/// Budget used for the actors the observer is trained on.
pub const TRAINING_BUDGET: usize = 250;
/// Reduced budgets for the generalisation test actors.
pub const TEST_BUDGETS: [usize; 4] = [150, 50, 25, 5];
pub const DEFAULT_MAX_STEPS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RolloutPolicy {
    /// Uniform over non-blocked actions.
    Uniform,
    /// With probability `greedy_prob` take a shortest-path step towards the
    /// simulated target, otherwise act uniformly.
    TowardTarget { greedy_prob: f64 },
    /// With probability `greedy_prob` take a shortest-path step towards the
    /// target if the simulation has already seen it, else towards the nearest
    /// cell that may still hold it; otherwise act uniformly. Uses only what
    /// the simulated actor has observed.
    Frontier { greedy_prob: f64 },
}

impl RolloutPolicy {
    fn greedy_prob(self) -> Option<f64> {
        match self {
            RolloutPolicy::Uniform => None,
            RolloutPolicy::TowardTarget { greedy_prob } | RolloutPolicy::Frontier { greedy_prob } => {
                Some(greedy_prob)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PomcpConfig {
    /// Tree-search simulations per decision.
    pub max_samples: usize,
    pub ucb_c: f64,
    pub discount: f64,
    /// Search horizon in steps, tree and rollout combined.
    pub rollout_depth: usize,
    pub reward_target: f64,
    /// Reward added on every step, moves and `Stay` alike.
    pub step_cost: f64,
    pub rollout: RolloutPolicy,
    pub seed: u64,
}

impl Default for PomcpConfig {
    fn default() -> Self {
        PomcpConfig {
            max_samples: TRAINING_BUDGET,
            ucb_c: 5.0,
            discount: 0.95,
            rollout_depth: 20,
            reward_target: 10.0,
            step_cost: -1.0,
            rollout: RolloutPolicy::Frontier { greedy_prob: 0.8 },
            seed: 0,
        }
    }
}

impl PomcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_samples == 0 {
            return Err(Error::InvalidArgument("max_samples must be at least 1".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "discount {} outside (0, 1)",
                self.discount
            )));
        }
        if self.rollout_depth == 0 {
            return Err(Error::InvalidArgument("rollout_depth must be at least 1".into()));
        }
        if let Some(greedy_prob) = self.rollout.greedy_prob() {
            if !(0.0..=1.0).contains(&greedy_prob) {
                return Err(Error::InvalidArgument(format!(
                    "greedy_prob {greedy_prob} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn with_budget(&self, max_samples: usize) -> Self {
        PomcpConfig {
            max_samples,
            ..self.clone()
        }
    }
}

const NOT_SEEN: u8 = u8::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ActionStats {
    pub visits: u32,
    /// Running mean of the discounted return.
    pub value: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SearchNode {
    pub visit_count: u32,
    pub action_stats: [ActionStats; Action::COUNT],
    /// `(action index, observation, node index)`; observation is the seen
    /// target cell or `u8::MAX`.
    pub children: Vec<(u8, u8, u32)>,
}

impl SearchNode {
    fn child(&self, action: usize, obs: u8) -> Option<usize> {
        self.children
            .iter()
            .find(|&&(a, o, _)| usize::from(a) == action && o == obs)
            .map(|&(_, _, i)| i as usize)
    }
}

/// The tree built by one call to [`Actor::plan`].
#[derive(Clone, Debug, Default)]
pub struct SearchTree {
    pub nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }
}

/// Planner bound to one map; caches what rollouts need about it.
pub struct Actor<'m> {
    map: &'m GridMap,
    cfg: PomcpConfig,
    distances: Option<DistanceTable>,
    fov_masks: Vec<u128>,
}

fn cell_mask(cells: impl Iterator<Item = Position>) -> u128 {
    cells.fold(0u128, |m, p| m | (1u128 << p.index()))
}

/// Closest cell of `mask` by path distance; ties go to the lower index.
fn nearest_cell(d: &DistanceTable, pos: Position, mut mask: u128) -> Position {
    let mut best = pos;
    let mut best_d = u8::MAX;
    while mask != 0 {
        let i = mask.trailing_zeros() as usize;
        mask &= mask - 1;
        let c = Position::from_index(i);
        let dist = d.distance(pos, c);
        if dist < best_d {
            best = c;
            best_d = dist;
        }
    }
    best
}

/// What a simulated actor knows about the target: the cells that may still
/// hold it (bit per cell) and whether it has been seen.
#[derive(Clone, Copy)]
struct Knowledge {
    unseen: u128,
    seen: bool,
}

struct Search<'a> {
    map: &'a GridMap,
    cfg: &'a PomcpConfig,
    distances: Option<&'a DistanceTable>,
    fov_masks: &'a [u128],
    rng: &'a mut Rng,
    tree: SearchTree,
}

impl Search<'_> {
    fn select(&self, node: usize) -> usize {
        let n = &self.tree.nodes[node];
        if let Some(a) = n.action_stats.iter().position(|s| s.visits == 0) {
            return a;
        }
        let log_n = f64::from(n.visit_count).ln();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (a, s) in n.action_stats.iter().enumerate() {
            let score = s.value + self.cfg.ucb_c * (log_n / f64::from(s.visits)).sqrt();
            if score > best_score {
                best = a;
                best_score = score;
            }
        }
        best
    }

    fn observe(&self, k: &mut Knowledge, pos: Position, target: Position) {
        k.unseen &= !self.fov_masks[pos.index()];
        k.seen |= self.map.fov(pos).contains(target);
    }

    fn rollout_action(&mut self, pos: Position, target: Position, k: &Knowledge) -> Action {
        if let (Some(greedy_prob), Some(d)) = (self.cfg.rollout.greedy_prob(), self.distances) {
            if self.rng.random_bool(greedy_prob) {
                let goal = match self.cfg.rollout {
                    RolloutPolicy::Frontier { .. } if !k.seen && k.unseen != 0 => {
                        nearest_cell(d, pos, k.unseen)
                    }
                    _ => target,
                };
                return d.greedy_action(self.map, pos, goal);
            }
        }
        let mut open = [Action::Stay; Action::COUNT];
        let mut n = 0;
        for a in Action::ALL {
            if !self.map.is_blocked(pos, a) {
                open[n] = a;
                n += 1;
            }
        }
        open[self.rng.random_range(0..n)]
    }

    fn rollout(&mut self, mut pos: Position, target: Position, mut k: Knowledge, mut depth: usize) -> f64 {
        let mut total = 0.0;
        let mut weight = 1.0;
        while depth < self.cfg.rollout_depth {
            let a = self.rollout_action(pos, target, &k);
            pos = self.map.step(pos, a);
            total += weight * self.cfg.step_cost;
            if pos == target {
                total += weight * self.cfg.reward_target;
                break;
            }
            self.observe(&mut k, pos, target);
            weight *= self.cfg.discount;
            depth += 1;
        }
        total
    }

    fn simulate(
        &mut self,
        pos: Position,
        target: Position,
        mut k: Knowledge,
        node: usize,
        depth: usize,
    ) -> f64 {
        if depth >= self.cfg.rollout_depth {
            return 0.0;
        }
        let a = self.select(node);
        let next = self.map.step(pos, Action::from_index(a));
        let mut ret = self.cfg.step_cost;
        if next == target {
            ret += self.cfg.reward_target;
        } else {
            let obs = if self.map.fov(next).contains(target) {
                target.index() as u8
            } else {
                NOT_SEEN
            };
            self.observe(&mut k, next, target);
            let future = match self.tree.nodes[node].child(a, obs) {
                Some(child) => self.simulate(next, target, k, child, depth + 1),
                None => {
                    let child = self.tree.nodes.len() as u32;
                    self.tree.nodes.push(SearchNode::default());
                    self.tree.nodes[node].children.push((a as u8, obs, child));
                    self.rollout(next, target, k, depth + 1)
                }
            };
            ret += self.cfg.discount * future;
        }
        let n = &mut self.tree.nodes[node];
        n.visit_count += 1;
        let s = &mut n.action_stats[a];
        s.visits += 1;
        s.value += (ret - s.value) / f64::from(s.visits);
        ret
    }
}

impl<'m> Actor<'m> {
    pub fn new(map: &'m GridMap, cfg: PomcpConfig) -> Result<Self> {
        cfg.validate()?;
        let distances = cfg.rollout.greedy_prob().map(|_| DistanceTable::new(map));
        let fov_masks = (0..CELLS)
            .map(|i| cell_mask(map.fov(Position::from_index(i)).cells()))
            .collect();
        Ok(Actor {
            map,
            cfg,
            distances,
            fov_masks,
        })
    }

    pub fn config(&self) -> &PomcpConfig {
        &self.cfg
    }

    /// Runs exactly `max_samples` simulations and returns the search tree.
    pub fn search(&self, pos: Position, belief: &BeliefState, rng: &mut Rng) -> SearchTree {
        let support: Vec<(Position, f64)> = belief.support().map(|p| (p, belief.prob(p))).collect();
        let knowledge = Knowledge {
            unseen: cell_mask(support.iter().map(|&(p, _)| p)),
            seen: belief.is_delta(),
        };
        let mut search = Search {
            map: self.map,
            cfg: &self.cfg,
            distances: self.distances.as_ref(),
            fov_masks: &self.fov_masks,
            rng,
            tree: SearchTree {
                nodes: vec![SearchNode::default()],
            },
        };
        for _ in 0..self.cfg.max_samples {
            let u: f64 = search.rng.random();
            let mut acc = 0.0;
            let mut target = support[support.len() - 1].0;
            for &(p, w) in &support {
                acc += w;
                if u < acc {
                    target = p;
                    break;
                }
            }
            search.simulate(pos, target, knowledge, 0, 0);
        }
        search.tree
    }

    /// Root action with the highest mean value; ties go to the earlier action
    /// in canonical order.
    pub fn plan(&self, pos: Position, belief: &BeliefState, rng: &mut Rng) -> Action {
        best_root_action(&self.search(pos, belief, rng))
    }

    /// Acts from `start` until the target is reached or `max_steps` moves
    /// have been made.
    pub fn run_episode(
        &self,
        start: Position,
        target: Position,
        prior: BeliefState,
        max_steps: usize,
    ) -> Vec<TrajectoryStep> {
        let see = |pos: Position| self.map.fov(pos).contains(target).then_some(target);
        let mut pos = start;
        let mut belief = prior
            .update(&self.map.fov(pos), see(pos))
            .expect("belief filter is consistent with the true target");
        let mut steps = Vec::new();
        loop {
            let target_visible = see(pos).is_some();
            if pos == target || steps.len() == max_steps {
                steps.push(TrajectoryStep {
                    pos,
                    action: Action::Stay,
                    belief_before: belief,
                    target_visible,
                });
                return steps;
            }
            let mut rng = seed::rng(seed::derive(self.cfg.seed, steps.len() as u64));
            let action = self.plan(pos, &belief, &mut rng);
            let next = self.map.step(pos, action);
            let updated = belief
                .update(&self.map.fov(next), see(next))
                .expect("belief filter is consistent with the true target");
            steps.push(TrajectoryStep {
                pos,
                action,
                belief_before: belief,
                target_visible,
            });
            pos = next;
            belief = updated;
        }
    }
}

pub fn best_root_action(tree: &SearchTree) -> Action {
    let mut best = Action::Stay;
    let mut best_value = f64::NEG_INFINITY;
    for (a, s) in tree.root().action_stats.iter().enumerate() {
        if s.visits > 0 && s.value > best_value {
            best = Action::from_index(a);
            best_value = s.value;
        }
    }
    best
}

/// One decision with a freshly seeded search (`cfg.seed`).
pub fn plan_action(
    map: &GridMap,
    pos: Position,
    belief: &BeliefState,
    cfg: &PomcpConfig,
) -> Result<Action> {
    let actor = Actor::new(map, cfg.clone())?;
    let mut rng = seed::rng(cfg.seed);
    Ok(actor.plan(pos, belief, &mut rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub pos: Position,
    /// Action taken from `pos`; `Stay` on the closing record.
    pub action: Action,
    /// The actor's belief when choosing `action`.
    pub belief_before: BeliefState,
    pub target_visible: bool,
}

/// One episode. The last step is a closing record holding the final position
/// (the target when `success`) and no further move.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub map_id: String,
    pub episode: usize,
    pub target: Position,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start(&self) -> Position {
        self.steps[0].pos
    }

    pub fn final_pos(&self) -> Position {
        self.steps[self.steps.len() - 1].pos
    }

    pub fn success(&self) -> bool {
        self.final_pos() == self.target
    }

    /// Moves made.
    pub fn moves(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        self.steps.iter().map(|s| s.pos)
    }
}

/// Runs the actor from `start` towards the hidden `target`.
pub fn generate_trajectory(
    map: &GridMap,
    start: Position,
    target: Position,
    cfg: &PomcpConfig,
    max_steps: usize,
) -> Result<Vec<TrajectoryStep>> {
    if start == target || !map.is_free(start) || !map.is_free(target) {
        return Err(Error::InvalidArgument(format!(
            "start {start} and target {target} must be distinct free cells"
        )));
    }
    let actor = Actor::new(map, cfg.clone())?;
    Ok(actor.run_episode(start, target, BeliefState::uniform(map, start), max_steps))
}

/// One line of the trajectory record file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub map: String,
    pub episode: usize,
    pub step: usize,
    pub row: usize,
    pub col: usize,
    pub action: Action,
    pub target_row: usize,
    pub target_col: usize,
    pub target_visible: bool,
    pub belief: Vec<f64>,
}

pub fn write_trajectories<W: Write>(mut w: W, trajectories: &[Trajectory]) -> Result<()> {
    for t in trajectories {
        for (i, s) in t.steps.iter().enumerate() {
            let rec = StepRecord {
                map: t.map_id.clone(),
                episode: t.episode,
                step: i,
                row: s.pos.row,
                col: s.pos.col,
                action: s.action,
                target_row: t.target.row,
                target_col: t.target.col,
                target_visible: s.target_visible,
                belief: s.belief_before.probs().to_vec(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_trajectories<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut out: Vec<Trajectory> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec: StepRecord = serde_json::from_str(&line)?;
        if rec.row >= crate::gridworld::GRID || rec.col >= crate::gridworld::GRID {
            return Err(Error::format("trajectory", format!("line {}: position out of range", lineno + 1)));
        }
        let step = TrajectoryStep {
            pos: Position::new(rec.row, rec.col),
            action: rec.action,
            belief_before: BeliefState::from_probs(rec.belief)?,
            target_visible: rec.target_visible,
        };
        let continues = out
            .last()
            .is_some_and(|t| t.map_id == rec.map && t.episode == rec.episode);
        if continues {
            let t = out.last_mut().unwrap();
            if rec.step != t.steps.len() {
                return Err(Error::format("trajectory", format!("line {}: step out of order", lineno + 1)));
            }
            t.steps.push(step);
        } else {
            if rec.step != 0 {
                return Err(Error::format("trajectory", format!("line {}: episode starts mid-way", lineno + 1)));
            }
            out.push(Trajectory {
                map_id: rec.map,
                episode: rec.episode,
                target: Position::new(rec.target_row, rec.target_col),
                steps: vec![step],
            });
        }
    }
    Ok(out)
}

/// Root actions the search never tried; small budgets leave some untried.
pub fn untried_root_actions(tree: &SearchTree) -> usize {
    tree.root().action_stats.iter().filter(|s| s.visits == 0).count()
}

// observation codes must not collide with cell indices
const _: () = assert!(CELLS < NOT_SEEN as usize);
