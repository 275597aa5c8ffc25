//! Supervised samples built from actor trajectories.
//!
//! Every usable step `t` of a trajectory (one with a successor) yields one
//! sample: the encoded behaviour chunk ending at `t`, the object layout, and
//! the labels the actor itself knows at that moment (its target, its next
//! action and state, its belief).

mod distractors;
mod encode;
mod io;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use distractors::{inject_distractors, is_eligible, DistractorMode, ObjectSet};
pub use encode::{encode, InputTensor, INPUT_LEN, PLANES};
pub use io::{read_dataset, write_dataset, DATASET_MAGIC, LABELS_MAGIC};

use crate::belief::BeliefState;
use crate::error::{Error, Result};
use crate::gridworld::{GridMap, Position, CELLS};
use crate::planner::{Actor, PomcpConfig, Trajectory};
use crate::seed;

pub const TRAJECTORIES_PER_MAP: usize = 30;
/// Past steps visible to the observer.
pub const WINDOW: usize = 5;

/// Which samples to keep, by whether the actor could see its target at the
/// chunk's final step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    #[default]
    Any,
    Visible,
    Hidden,
}

impl Visibility {
    pub fn admits(self, target_visible: bool) -> bool {
        match self {
            Visibility::Any => true,
            Visibility::Visible => target_visible,
            Visibility::Hidden => !target_visible,
        }
    }
}

impl fmt::Display for Visibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Visibility::Any => "any",
            Visibility::Visible => "visible",
            Visibility::Hidden => "hidden",
        })
    }
}

impl FromStr for Visibility {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any" => Ok(Visibility::Any),
            "visible" => Ok(Visibility::Visible),
            "hidden" => Ok(Visibility::Hidden),
            _ => Err(Error::InvalidArgument(format!("unknown visibility `{s}`"))),
        }
    }
}

/// Supervision for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub target: usize,
    pub next_action: usize,
    pub next_state: usize,
    pub belief: BeliefState,
}

/// Labels for step `t`; requires a successor step.
pub fn label(traj: &Trajectory, t: usize) -> Labels {
    assert!(t + 1 < traj.len(), "step {t} has no successor");
    let step = &traj.steps[t];
    Labels {
        target: traj.target.index(),
        next_action: step.action.index(),
        next_state: traj.steps[t + 1].pos.index(),
        belief: step.belief_before.clone(),
    }
}

/// Per-sample bookkeeping kept beside the tensors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleInfo {
    pub map: String,
    pub episode: usize,
    pub step: usize,
    pub target_visible: bool,
    pub target: u8,
    pub next_action: u8,
    pub next_state: u8,
    /// Object cells; slot 0 is the true target.
    pub objects: [u8; 4],
}

impl SampleInfo {
    pub fn object_set(&self) -> ObjectSet {
        let p = |i: usize| Position::from_index(usize::from(self.objects[i]));
        ObjectSet {
            target: p(0),
            distractors: [p(1), p(2), p(3)],
        }
    }
}

/// A single sample, materialised.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: InputTensor,
    pub labels: Labels,
    pub objects: ObjectSet,
    pub target_visible: bool,
}

/// Column-oriented sample storage, ready for batching.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    /// `len × INPUT_LEN`, each sample HWC (11, 11, 20).
    pub inputs: Vec<f32>,
    /// `len × 121`.
    pub beliefs: Vec<f32>,
    pub info: Vec<SampleInfo>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.info.len()
    }

    pub fn is_empty(&self) -> bool {
        self.info.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * INPUT_LEN..(i + 1) * INPUT_LEN]
    }

    pub fn belief(&self, i: usize) -> &[f32] {
        &self.beliefs[i * CELLS..(i + 1) * CELLS]
    }

    pub fn push(&mut self, map: &str, episode: usize, step: usize, sample: &Sample) {
        self.inputs.extend_from_slice(sample.input.as_slice());
        self.beliefs
            .extend(sample.labels.belief.probs().iter().map(|&p| p as f32));
        let o = &sample.objects;
        self.info.push(SampleInfo {
            map: map.to_string(),
            episode,
            step,
            target_visible: sample.target_visible,
            target: sample.labels.target as u8,
            next_action: sample.labels.next_action as u8,
            next_state: sample.labels.next_state as u8,
            objects: [
                o.target.index() as u8,
                o.distractors[0].index() as u8,
                o.distractors[1].index() as u8,
                o.distractors[2].index() as u8,
            ],
        });
    }

    pub fn extend(&mut self, other: Dataset) {
        self.inputs.extend(other.inputs);
        self.beliefs.extend(other.beliefs);
        self.info.extend(other.info);
    }

    /// Keeps the samples whose info satisfies `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&SampleInfo) -> bool) -> Dataset {
        let mut out = Dataset::default();
        for (i, info) in self.info.iter().enumerate() {
            if keep(info) {
                out.inputs.extend_from_slice(self.input(i));
                out.beliefs.extend_from_slice(self.belief(i));
                out.info.push(info.clone());
            }
        }
        out
    }
}

/// Summary of a sample build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildCounts {
    /// Steps passing the eligibility and visibility filters.
    pub attempts: usize,
    /// Of those, steps where the placement was infeasible.
    pub skipped: usize,
}

impl BuildCounts {
    pub fn skip_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.skipped as f64 / self.attempts as f64
        }
    }
}

/// How samples are drawn from trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub mode: DistractorMode,
    pub visibility: Visibility,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            mode: DistractorMode::Random,
            visibility: Visibility::Any,
            seed: 0,
        }
    }
}

fn sample_seed(spec: &SampleSpec, traj: &Trajectory, t: usize) -> u64 {
    seed::derive_path(
        seed::derive_str(spec.seed, &traj.map_id),
        &[traj.episode as u64, t as u64, spec.mode.code()],
    )
}

/// Builds the sample for step `t`, or `Ok(None)` when `t` is not eligible.
pub fn make_sample(
    map: &GridMap,
    traj: &Trajectory,
    t: usize,
    spec: &SampleSpec,
) -> Result<Option<Sample>> {
    if t + 1 >= traj.len()
        || !spec.visibility.admits(traj.steps[t].target_visible)
        || !is_eligible(map, traj, t, spec.mode)
    {
        return Ok(None);
    }
    let s = sample_seed(spec, traj, t);
    let objects = inject_distractors(map, traj, t, spec.mode, s)?;
    let planes = objects.plane_order(seed::derive(s, 0x0b7e_c75));
    Ok(Some(Sample {
        input: encode(map, traj, t, &planes),
        labels: label(traj, t),
        objects,
        target_visible: traj.steps[t].target_visible,
    }))
}

/// One sample per eligible step of every trajectory. Steps whose distractor
/// placement is infeasible are skipped and counted.
pub fn build_samples(
    map: &GridMap,
    trajectories: &[Trajectory],
    spec: &SampleSpec,
) -> (Dataset, BuildCounts) {
    let mut out = Dataset::default();
    let mut counts = BuildCounts::default();
    for traj in trajectories {
        debug_assert_eq!(traj.map_id, map.id());
        for t in 0..traj.len().saturating_sub(1) {
            match make_sample(map, traj, t, spec) {
                Ok(Some(sample)) => {
                    counts.attempts += 1;
                    out.push(&traj.map_id, traj.episode, t, &sample);
                }
                Ok(None) => {}
                Err(_) => {
                    counts.attempts += 1;
                    counts.skipped += 1;
                }
            }
        }
    }
    (out, counts)
}

/// [`build_samples`] over trajectories from several maps, kept in
/// trajectory order.
pub fn build_dataset(
    maps: &[GridMap],
    trajectories: &[Trajectory],
    spec: &SampleSpec,
) -> Result<(Dataset, BuildCounts)> {
    let by_id: HashMap<&str, &GridMap> = maps.iter().map(|m| (m.id(), m)).collect();
    let groups: Vec<&[Trajectory]> = trajectories.chunk_by(|a, b| a.map_id == b.map_id).collect();
    let parts = groups
        .par_iter()
        .map(|group| {
            let id = group[0].map_id.as_str();
            let map = by_id
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("trajectory refers to unknown map `{id}`")))?;
            Ok(build_samples(map, group, spec))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Dataset::default();
    let mut counts = BuildCounts::default();
    for (ds, c) in parts {
        out.extend(ds);
        counts.attempts += c.attempts;
        counts.skipped += c.skipped;
    }
    Ok((out, counts))
}

/// Mean and sample variance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
}

impl Moments {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len();
        if n == 0 {
            return Moments::default();
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Moments { n, mean, variance }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub success_rate: f64,
    /// Moves to reach the target, successful episodes only.
    pub steps_to_target: Moments,
    /// Moves made while the target was out of view.
    pub steps_hidden: Moments,
    /// Moves from the first sighting to arrival, successful episodes only.
    pub steps_after_visible: Moments,
}

impl TrajectoryStats {
    pub fn of(trajectories: &[Trajectory]) -> Self {
        let ok: Vec<_> = trajectories.iter().filter(|t| t.success()).collect();
        let moves_hidden = |t: &Trajectory| {
            t.steps[..t.moves()]
                .iter()
                .filter(|s| !s.target_visible)
                .count() as f64
        };
        TrajectoryStats {
            success_rate: if trajectories.is_empty() {
                0.0
            } else {
                ok.len() as f64 / trajectories.len() as f64
            },
            steps_to_target: Moments::of(ok.iter().map(|t| t.moves() as f64)),
            steps_hidden: Moments::of(trajectories.iter().map(moves_hidden)),
            steps_after_visible: Moments::of(ok.iter().map(|t| {
                let first = t.steps.iter().position(|s| s.target_visible).unwrap_or(t.moves());
                (t.moves() - first) as f64
            })),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub map_ids: Vec<String>,
    pub trajectories_per_map: usize,
    pub total_behaviours: usize,
    pub total_samples: usize,
    pub seed: u64,
    pub planner: PomcpConfig,
    pub max_steps: usize,
    pub stats: TrajectoryStats,
}

/// Start and target for one episode: distinct free cells.
pub fn episode_endpoints(map: &GridMap, seed: u64, episode: usize) -> (Position, Position) {
    let mut rng = seed::rng(seed::derive_path(
        seed::derive_str(seed, map.id()),
        &[episode as u64, 0x57a7],
    ));
    let mut free: Vec<Position> = map.free_cells().collect();
    free.shuffle(&mut rng);
    (free[0], free[1])
}

/// Planner seed for one episode.
pub fn episode_planner_seed(seed: u64, map: &GridMap, episode: usize) -> u64 {
    seed::derive_path(seed::derive_str(seed, map.id()), &[episode as u64, 0x91a2])
}

/// `TRAJECTORIES_PER_MAP` episodes on every map, with random start and
/// target. Episodes run in parallel; results come back in map/episode order.
pub fn generate_trajectories(
    maps: &[GridMap],
    cfg: &PomcpConfig,
    seed: u64,
    max_steps: usize,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let tasks: Vec<(usize, usize)> = (0..maps.len())
        .flat_map(|m| (0..TRAJECTORIES_PER_MAP).map(move |e| (m, e)))
        .collect();
    tasks
        .par_iter()
        .map(|&(m, e)| {
            let map = &maps[m];
            let (start, target) = episode_endpoints(map, seed, e);
            let actor = Actor::new(
                map,
                PomcpConfig {
                    seed: episode_planner_seed(seed, map, e),
                    ..cfg.clone()
                },
            )?;
            Ok(Trajectory {
                map_id: map.id().to_string(),
                episode: e,
                target,
                steps: actor.run_episode(start, target, BeliefState::uniform(map, start), max_steps),
            })
        })
        .collect()
}

/// Trajectories for all maps plus their manifest.
pub fn generate_dataset(
    maps: &[GridMap],
    cfg: &PomcpConfig,
    seed: u64,
    max_steps: usize,
) -> Result<(Vec<Trajectory>, DatasetManifest)> {
    let trajectories = generate_trajectories(maps, cfg, seed, max_steps)?;
    let total_samples = trajectories.iter().map(|t| t.moves()).sum();
    let manifest = DatasetManifest {
        version: 1,
        map_ids: maps.iter().map(|m| m.id().to_string()).collect(),
        trajectories_per_map: TRAJECTORIES_PER_MAP,
        total_behaviours: trajectories.len(),
        total_samples,
        seed,
        planner: cfg.clone(),
        max_steps,
        stats: TrajectoryStats::of(&trajectories),
    };
    Ok((trajectories, manifest))
}
