//! The five studies: learning curves, hidden targets, distractor placement,
//! and generalisation to weaker or differently paced actors.
//!
//! A [`Harness`] owns the map pools and the trajectories drawn on them. For
//! each training-map count it trains (or loads) one model per architecture
//! and seed, then scores every condition of an [`ExperimentSpec`] on the
//! held-out test maps.

mod claims;
mod expectations;
mod report;
mod speed;
pub mod stats;
mod table;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use claims::{check_claims, ClaimCheck};
pub use expectations::{DatasetFacts, Expectation, ExpectationCheck, Expectations, Reduce, Statistic, Status};
pub use report::render_report;
pub use speed::{resample_indices, resample_speed, Speed, SPEED_FACTORS};
pub use stats::significance;
pub use table::{
    read_csv, write_csv, ConditionLog, ResultRow, ResultTable, SummaryRow, CONDITIONS_FILE, RESULTS_FILE,
    SKIP_FLAG_RATE, SUMMARY_FILE,
};

use crate::dataset::{build_dataset, generate_trajectories, Dataset, DistractorMode, SampleSpec, Visibility};
use crate::error::{Error, Result};
use crate::gridworld::{GridMap, Position, CELLS};
use crate::neural::{Adam, Checkpoint};
use crate::observer::{evaluate, Accuracy, ObserverModel, Variant};
use crate::planner::{PomcpConfig, Trajectory, TEST_BUDGETS};
use crate::seed;
use crate::training::{finetune, train, TrainConfig, TrainHistory};

pub const MAP_COUNTS: [usize; 9] = [5, 10, 15, 20, 25, 30, 60, 120, 300];
pub const TEST_MAPS: usize = 10;
pub const DEFAULT_SEEDS: usize = 5;
pub const FINETUNE_MAPS: usize = 5;
pub const FINETUNE_EPOCHS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LearningCurve,
    HiddenTarget,
    Distractors,
    Cognitive,
    Speed,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::LearningCurve,
        ExperimentKind::HiddenTarget,
        ExperimentKind::Distractors,
        ExperimentKind::Cognitive,
        ExperimentKind::Speed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LearningCurve => "learning_curve",
            ExperimentKind::HiddenTarget => "hidden_target",
            ExperimentKind::Distractors => "distractors",
            ExperimentKind::Cognitive => "cognitive",
            ExperimentKind::Speed => "speed",
        }
    }

    pub fn default_map_counts(self) -> Vec<usize> {
        match self {
            ExperimentKind::LearningCurve | ExperimentKind::HiddenTarget => MAP_COUNTS.to_vec(),
            ExperimentKind::Distractors => vec![25, 120],
            ExperimentKind::Cognitive | ExperimentKind::Speed => vec![25],
        }
    }

    pub fn default_conditions(self) -> Vec<Condition> {
        let base = Condition::default();
        let vis = |visibility| Condition { visibility, ..base };
        match self {
            ExperimentKind::LearningCurve => vec![base],
            ExperimentKind::HiddenTarget => vec![base, vis(Visibility::Visible), vis(Visibility::Hidden)],
            ExperimentKind::Distractors => {
                let mut out = Vec::new();
                for mode in [DistractorMode::Ignored, DistractorMode::Aligned] {
                    for k in 1..=3 {
                        for v in [Visibility::Visible, Visibility::Hidden] {
                            out.push(Condition { mode: mode(k), ..vis(v) });
                        }
                    }
                }
                out.push(vis(Visibility::Visible));
                out.push(vis(Visibility::Hidden));
                out
            }
            ExperimentKind::Cognitive => std::iter::once(base)
                .chain(TEST_BUDGETS.iter().map(|&b| Condition { budget: Some(b), ..base }))
                .collect(),
            ExperimentKind::Speed => {
                let mut out = vec![base];
                for f in SPEED_FACTORS {
                    out.push(Condition {
                        speed: Speed::new(f).expect("listed factors are valid"),
                        ..base
                    });
                }
                for f in [0.75, 0.9] {
                    out.push(Condition {
                        speed: Speed::new(f).expect("listed factors are valid"),
                        finetuned: true,
                        ..base
                    });
                }
                out
            }
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!("unknown experiment `{s}` (one of {})", names.join(", ")))
            })
    }
}

/// How the test set of one cell of an experiment is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Condition {
    pub mode: DistractorMode,
    pub visibility: Visibility,
    /// Planner budget of the test actor; `None` is the training budget.
    pub budget: Option<usize>,
    pub speed: Speed,
    /// Score the model after brief retraining on actors at `speed`.
    pub finetuned: bool,
}

impl Default for Condition {
    fn default() -> Self {
        Condition {
            mode: DistractorMode::Random,
            visibility: Visibility::Any,
            budget: None,
            speed: Speed::NORMAL,
            finetuned: false,
        }
    }
}

impl Condition {
    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        if self.budget == Some(0) {
            return Err(Error::InvalidArgument("actor budget must be positive".into()));
        }
        if self.finetuned && self.speed == Speed::NORMAL {
            return Err(Error::InvalidArgument("finetuning needs a non-default speed".into()));
        }
        Ok(())
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.mode, self.visibility)?;
        if let Some(b) = self.budget {
            write!(f, "/budget={b}")?;
        }
        if self.speed != Speed::NORMAL {
            write!(f, "/speed={}", self.speed)?;
        }
        if self.finetuned {
            f.write_str("/finetuned")?;
        }
        Ok(())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad condition `{s}`"));
        let mut parts = s.split('/');
        let mode = parts.next().ok_or_else(bad)?.parse()?;
        let visibility = parts.next().ok_or_else(bad)?.parse()?;
        let mut c = Condition {
            mode,
            visibility,
            ..Condition::default()
        };
        for part in parts {
            match part.split_once('=') {
                Some(("budget", v)) => c.budget = Some(v.parse().map_err(|_| bad())?),
                Some(("speed", v)) => c.speed = v.parse()?,
                None if part == "finetuned" => c.finetuned = true,
                _ => return Err(bad()),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

impl TryFrom<String> for Condition {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> String {
        c.to_string()
    }
}

/// Settings shared by every experiment of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seeds: usize,
    pub test_maps: usize,
    /// Overrides each experiment's own map counts.
    pub map_counts: Option<Vec<usize>>,
    pub finetune_maps: usize,
    pub finetune_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: DEFAULT_SEEDS,
            test_maps: TEST_MAPS,
            map_counts: None,
            finetune_maps: FINETUNE_MAPS,
            finetune_epochs: FINETUNE_EPOCHS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub architectures: Vec<Variant>,
    pub map_counts: Vec<usize>,
    pub test_maps: usize,
    pub seeds: Vec<u64>,
    pub conditions: Vec<Condition>,
    pub finetune_maps: usize,
    pub finetune_epochs: usize,
}

impl ExperimentSpec {
    pub fn standard(kind: ExperimentKind, cfg: &ExperimentConfig) -> Self {
        ExperimentSpec {
            kind,
            architectures: Variant::ALL.to_vec(),
            map_counts: cfg.map_counts.clone().unwrap_or_else(|| kind.default_map_counts()),
            test_maps: cfg.test_maps,
            seeds: (0..cfg.seeds as u64).collect(),
            conditions: kind.default_conditions(),
            finetune_maps: cfg.finetune_maps,
            finetune_epochs: cfg.finetune_epochs,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(format!("experiment {}: {m}", self.kind)));
        let unique = |v: &[u64]| v.iter().enumerate().all(|(i, x)| !v[..i].contains(x));
        if self.architectures.is_empty() || !unique(&self.architectures.iter().map(|&a| a as u64).collect::<Vec<_>>()) {
            return fail("architectures must be a non-empty set".into());
        }
        if self.map_counts.is_empty() {
            return fail("no training map counts".into());
        }
        if let Some(n) = self.map_counts.iter().find(|n| !MAP_COUNTS.contains(n)) {
            return fail(format!("map count {n} is not one of {MAP_COUNTS:?}"));
        }
        if !unique(&self.map_counts.iter().map(|&n| n as u64).collect::<Vec<_>>()) {
            return fail("repeated map count".into());
        }
        if self.test_maps == 0 {
            return fail("no test maps".into());
        }
        if self.seeds.is_empty() || !unique(&self.seeds) {
            return fail("seeds must be a non-empty set".into());
        }
        if self.conditions.is_empty() {
            return fail("no conditions".into());
        }
        for c in &self.conditions {
            c.validate()?;
        }
        if self.conditions.iter().any(|c| c.finetuned) && self.finetune_maps == 0 {
            return fail("finetuned conditions need finetune maps".into());
        }
        Ok(())
    }
}

/// Where trained models come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelSource {
    /// Train on demand, caching checkpoints in the directory when given.
    Train(Option<PathBuf>),
    /// Existing checkpoints only.
    Load(PathBuf),
}

/// One trained network: architecture, training-map count, seed, and the
/// speed it was finetuned on, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelKey {
    pub variant: Variant,
    pub map_count: usize,
    pub seed: u64,
    pub finetune: Option<Speed>,
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-m{:03}-s{}", self.variant, self.map_count, self.seed)?;
        if let Some(s) = self.finetune {
            write!(f, "-ft{s}")?;
        }
        Ok(())
    }
}

pub struct Trained {
    pub model: ObserverModel,
    pub adam: Option<Adam>,
    /// Epochs run, including earlier sessions.
    pub epochs: usize,
    pub lr: f64,
    pub history: Option<TrainHistory>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Seed of the trajectories on one split. Episode endpoints and planner
/// streams derive from it, so every budget sees the same start and target.
pub fn trajectory_seed(seed: u64, split: Split) -> u64 {
    seed::derive_str(
        seed,
        match split {
            Split::Train => "trajectories/train",
            Split::Test => "trajectories/test",
        },
    )
}

pub fn sample_seed(seed: u64) -> u64 {
    seed::derive_str(seed, "samples")
}

fn same_layout(a: &GridMap, b: &GridMap) -> bool {
    (0..CELLS).all(|i| a.cell(Position::from_index(i)) == b.cell(Position::from_index(i)))
}

/// Test maps must share neither an id nor a wall layout with any training map.
pub fn check_disjoint(train: &[GridMap], test: &[GridMap]) -> Result<()> {
    for t in test {
        if let Some(m) = train.iter().find(|m| m.id() == t.id() || same_layout(m, t)) {
            return Err(Error::Integrity(format!(
                "test map `{}` also appears in training as `{}`",
                t.id(),
                m.id()
            )));
        }
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Harness {
    train_maps: Vec<GridMap>,
    test_maps: Vec<GridMap>,
    planner: PomcpConfig,
    max_steps: usize,
    seed: u64,
    train: TrainConfig,
    models: ModelSource,
    train_trajectories: HashMap<String, Vec<Trajectory>>,
    /// Per actor budget, in test-map order.
    test_trajectories: BTreeMap<usize, Vec<Trajectory>>,
}

impl Harness {
    /// `train_maps` is an ordered pool: a run with `n` training maps uses
    /// the first `n`.
    pub fn new(
        train_maps: Vec<GridMap>,
        test_maps: Vec<GridMap>,
        planner: PomcpConfig,
        max_steps: usize,
        seed: u64,
        train: TrainConfig,
        models: ModelSource,
    ) -> Result<Self> {
        check_disjoint(&train_maps, &test_maps)?;
        planner.validate()?;
        Ok(Harness {
            train_maps,
            test_maps,
            planner,
            max_steps,
            seed,
            train,
            models,
            train_trajectories: HashMap::new(),
            test_trajectories: BTreeMap::new(),
        })
    }

    pub fn train_maps(&self) -> &[GridMap] {
        &self.train_maps
    }

    pub fn test_maps(&self) -> &[GridMap] {
        &self.test_maps
    }

    /// Supplies trajectories generated elsewhere at the training budget
    /// (with [`trajectory_seed`]), so they are not regenerated.
    pub fn insert_trajectories(&mut self, split: Split, trajectories: Vec<Trajectory>) -> Result<()> {
        match split {
            Split::Train => {
                for t in trajectories {
                    if !self.train_maps.iter().any(|m| m.id() == t.map_id) {
                        return Err(Error::Integrity(format!("trajectory for unknown training map `{}`", t.map_id)));
                    }
                    self.train_trajectories.entry(t.map_id.clone()).or_default().push(t);
                }
            }
            Split::Test => {
                let ids: Vec<&str> = self.test_maps.iter().map(|m| m.id()).collect();
                if let Some(t) = trajectories.iter().find(|t| !ids.contains(&t.map_id.as_str())) {
                    return Err(Error::Integrity(format!("trajectory for unknown test map `{}`", t.map_id)));
                }
                self.test_trajectories.insert(self.planner.max_samples, trajectories);
            }
        }
        Ok(())
    }

    fn ensure_train_trajectories(&mut self, n: usize) -> Result<()> {
        let missing: Vec<GridMap> = self.train_maps[..n]
            .iter()
            .filter(|m| !self.train_trajectories.contains_key(m.id()))
            .cloned()
            .collect();
        if missing.is_empty() {
            return Ok(());
        }
        log::info!("generating trajectories on {} training maps", missing.len());
        let trajs = generate_trajectories(
            &missing,
            &self.planner,
            trajectory_seed(self.seed, Split::Train),
            self.max_steps,
        )?;
        for t in trajs {
            self.train_trajectories.entry(t.map_id.clone()).or_default().push(t);
        }
        Ok(())
    }

    fn train_trajectories(&self, n: usize) -> Vec<Trajectory> {
        self.train_maps[..n]
            .iter()
            .flat_map(|m| self.train_trajectories[m.id()].iter().cloned())
            .collect()
    }

    fn test_trajectories(&mut self, budget: Option<usize>, maps: usize) -> Result<Vec<Trajectory>> {
        let budget = budget.unwrap_or(self.planner.max_samples);
        if !self.test_trajectories.contains_key(&budget) {
            log::info!("generating test trajectories at budget {budget}");
            let trajs = generate_trajectories(
                &self.test_maps,
                &self.planner.with_budget(budget),
                trajectory_seed(self.seed, Split::Test),
                self.max_steps,
            )?;
            self.test_trajectories.insert(budget, trajs);
        }
        let ids: Vec<&str> = self.test_maps[..maps].iter().map(|m| m.id()).collect();
        Ok(self.test_trajectories[&budget]
            .iter()
            .filter(|t| ids.contains(&t.map_id.as_str()))
            .cloned()
            .collect())
    }

    fn samples(&self) -> SampleSpec {
        SampleSpec {
            seed: sample_seed(self.seed),
            ..SampleSpec::default()
        }
    }

    /// Samples from the first `n` training maps.
    pub fn training_set(&mut self, n: usize) -> Result<Dataset> {
        if n > self.train_maps.len() {
            return Err(Error::InvalidArgument(format!(
                "{n} training maps requested, the pool has {}",
                self.train_maps.len()
            )));
        }
        self.ensure_train_trajectories(n)?;
        let (ds, _) = build_dataset(&self.train_maps[..n], &self.train_trajectories(n), &self.samples())?;
        Ok(ds)
    }

    /// The evaluation set of `condition` on the first `maps` test maps.
    pub fn test_set(&mut self, condition: &Condition, maps: usize) -> Result<(Dataset, ConditionLog)> {
        condition.validate()?;
        if maps > self.test_maps.len() {
            return Err(Error::InvalidArgument(format!(
                "{maps} test maps requested, {} available",
                self.test_maps.len()
            )));
        }
        let mut trajs = self.test_trajectories(condition.budget, maps)?;
        if condition.speed != Speed::NORMAL {
            trajs = trajs.iter().map(|t| resample_speed(t, condition.speed)).collect();
        }
        let spec = SampleSpec {
            mode: condition.mode,
            visibility: condition.visibility,
            ..self.samples()
        };
        let (ds, counts) = build_dataset(&self.test_maps[..maps], &trajs, &spec)?;
        let log = ConditionLog::new("", &condition.to_string(), counts.attempts, counts.skipped, ds.len());
        Ok((ds, log))
    }

    /// Actors at `speed` on the first `maps` training maps.
    fn finetune_set(&mut self, speed: Speed, maps: usize) -> Result<Dataset> {
        let maps = maps.min(self.train_maps.len());
        self.ensure_train_trajectories(maps)?;
        let trajs: Vec<Trajectory> = self
            .train_trajectories(maps)
            .iter()
            .map(|t| resample_speed(t, speed))
            .collect();
        Ok(build_dataset(&self.train_maps[..maps], &trajs, &self.samples())?.0)
    }

    fn train_config(&self, key: &ModelKey) -> TrainConfig {
        TrainConfig {
            seed: seed::derive_path(self.seed, &[0x70de1, key.map_count as u64, key.seed]),
            ..self.train.clone()
        }
    }

    /// Content address of a model: everything its weights depend on.
    pub fn fingerprint(&self, key: &ModelKey, finetune: (usize, usize)) -> String {
        #[derive(Serialize)]
        struct Inputs<'a> {
            variant: Variant,
            map_count: usize,
            seed: u64,
            data_seed: u64,
            train: TrainConfig,
            planner: &'a PomcpConfig,
            max_steps: usize,
            maps: Vec<String>,
            finetune: Option<(Speed, usize, usize)>,
        }
        let inputs = Inputs {
            variant: key.variant,
            map_count: key.map_count,
            seed: key.seed,
            data_seed: self.seed,
            train: self.train_config(key),
            planner: &self.planner,
            max_steps: self.max_steps,
            maps: self.train_maps[..key.map_count.min(self.train_maps.len())]
                .iter()
                .map(|m| m.to_text())
                .collect(),
            finetune: key.finetune.map(|s| (s, finetune.0, finetune.1)),
        };
        let json = serde_json::to_vec(&inputs).expect("plain data serialises");
        hex(&Sha256::digest(json)[..8])
    }

    pub fn checkpoint_path(&self, dir: &Path, key: &ModelKey, finetune: (usize, usize)) -> PathBuf {
        dir.join(format!("{key}-{}.ckpt", self.fingerprint(key, finetune)))
    }

    fn obtain(
        &self,
        key: &ModelKey,
        finetune: (usize, usize),
        make: impl FnOnce() -> Result<Trained>,
    ) -> Result<Trained> {
        let (dir, may_train) = match &self.models {
            ModelSource::Train(None) => return make(),
            ModelSource::Train(Some(dir)) => (dir, true),
            ModelSource::Load(dir) => (dir, false),
        };
        let path = self.checkpoint_path(dir, key, finetune);
        if path.exists() || !may_train {
            return load_trained(&path, key.variant);
        }
        let t = make()?;
        let adam = t.adam.as_ref().map(|a| (a, t.epochs as u64, t.lr));
        t.model.to_checkpoint(adam).save(&path)?;
        if let Some(h) = &t.history {
            std::fs::write(path.with_extension("history.txt"), h.to_text())?;
        }
        Ok(t)
    }

    /// Trains or loads the base model for `key` from `ds`.
    fn base_model(&self, key: &ModelKey, ds: &Dataset) -> Result<Trained> {
        self.obtain(key, (0, 0), || {
            let cfg = self.train_config(key);
            let out = train(ObserverModel::new(key.variant, cfg.seed), ds, &cfg)?;
            log::info!(
                "trained {key}: {} epochs, best epoch {:?}, best val loss {:?}",
                out.epochs,
                out.history.best_epoch,
                out.history.best_val()
            );
            Ok(Trained {
                model: out.model,
                adam: Some(out.adam),
                epochs: out.epochs,
                lr: out.last_lr,
                history: Some(out.history),
            })
        })
    }

    /// Trains (or loads) one base model, building its training set.
    pub fn model(&mut self, key: &ModelKey) -> Result<Trained> {
        if key.finetune.is_some() {
            return Err(Error::InvalidArgument("use a base model key".into()));
        }
        let ds = if matches!(self.models, ModelSource::Load(_)) {
            Dataset::default()
        } else {
            self.training_set(key.map_count)?
        };
        self.base_model(key, &ds)
    }

    fn finetuned_model(&self, key: &ModelKey, base: &Trained, ds: &Dataset, spec: &ExperimentSpec) -> Result<Trained> {
        self.obtain(key, (spec.finetune_maps, spec.finetune_epochs), || {
            let cfg = TrainConfig {
                max_epochs: spec.finetune_epochs,
                seed: seed::derive(self.train_config(key).seed, 0xf1),
                ..self.train.clone()
            };
            let out = finetune(base.model.clone(), base.adam.clone(), base.epochs, ds, &cfg)?;
            Ok(Trained {
                model: out.model,
                adam: Some(out.adam),
                epochs: out.epochs,
                lr: out.last_lr,
                history: Some(out.history),
            })
        })
    }

    /// Runs every (map count, architecture, seed) of `spec` and scores each
    /// condition. Models for one map count train in parallel.
    pub fn run(&mut self, spec: &ExperimentSpec) -> Result<ResultTable> {
        spec.validate()?;
        let name = spec.name();
        let mut table = ResultTable::default();

        let mut tests = Vec::with_capacity(spec.conditions.len());
        for c in &spec.conditions {
            let (ds, mut log) = self.test_set(c, spec.test_maps)?;
            log.experiment = name.into();
            if ds.is_empty() {
                return Err(Error::EmptyCondition(format!("{name} {c}")));
            }
            if log.flagged {
                log::warn!("{name} {c}: {} of {} placements infeasible", log.skipped, log.attempts);
            }
            table.conditions.push(log);
            tests.push(ds);
        }

        let mut speeds: Vec<Speed> = spec.conditions.iter().filter(|c| c.finetuned).map(|c| c.speed).collect();
        speeds.sort();
        speeds.dedup();
        let ft_sets = speeds
            .iter()
            .map(|&s| Ok((s, self.finetune_set(s, spec.finetune_maps)?)))
            .collect::<Result<Vec<_>>>()?;

        let loading = matches!(self.models, ModelSource::Load(_));
        for &n in &spec.map_counts {
            let train_ds = if loading { Dataset::default() } else { self.training_set(n)? };
            let jobs: Vec<ModelKey> = spec
                .architectures
                .iter()
                .flat_map(|&variant| {
                    spec.seeds.iter().map(move |&seed| ModelKey {
                        variant,
                        map_count: n,
                        seed,
                        finetune: None,
                    })
                })
                .collect();
            let this = &*self;
            let rows = jobs
                .par_iter()
                .map(|key| this.run_job(spec, key, &train_ds, &tests, &ft_sets))
                .collect::<Result<Vec<_>>>()?;
            table.rows.extend(rows.into_iter().flatten());
        }

        let pos = |v: &[String], x: &String| v.iter().position(|y| y == x);
        let cond_names: Vec<String> = spec.conditions.iter().map(|c| c.to_string()).collect();
        table.rows.sort_by_key(|r| {
            (
                pos(&cond_names, &r.condition),
                spec.map_counts.iter().position(|&m| m == r.map_count),
                spec.architectures.iter().position(|&a| a == r.architecture),
                spec.seeds.iter().position(|&s| s == r.seed),
            )
        });
        table.validate()?;
        Ok(table)
    }

    fn run_job(
        &self,
        spec: &ExperimentSpec,
        key: &ModelKey,
        train_ds: &Dataset,
        tests: &[Dataset],
        ft_sets: &[(Speed, Dataset)],
    ) -> Result<Vec<ResultRow>> {
        let mut base = self.base_model(key, train_ds)?;
        let mut rows = Vec::new();
        let mut push = |c: &Condition, acc: Accuracy| {
            rows.push(ResultRow {
                experiment: spec.name().into(),
                condition: c.to_string(),
                architecture: key.variant,
                map_count: key.map_count,
                seed: key.seed,
                n: acc.n,
                accuracy: acc.rate(),
            })
        };
        for (c, ds) in spec.conditions.iter().zip(tests) {
            if !c.finetuned {
                push(c, evaluate(&mut base.model, ds, &all(ds))?);
            }
        }
        for (speed, ft_ds) in ft_sets {
            let ft_key = ModelKey {
                finetune: Some(*speed),
                ..*key
            };
            let mut ft = self.finetuned_model(&ft_key, &base, ft_ds, spec)?;
            for (c, ds) in spec.conditions.iter().zip(tests) {
                if c.finetuned && c.speed == *speed {
                    push(c, evaluate(&mut ft.model, ds, &all(ds))?);
                }
            }
        }
        Ok(rows)
    }
}

fn all(ds: &Dataset) -> Vec<usize> {
    (0..ds.len()).collect()
}

pub fn load_trained(path: &Path, variant: Variant) -> Result<Trained> {
    let ck = Checkpoint::load(path)?;
    let model = ObserverModel::from_checkpoint(&ck)?;
    if model.variant() != variant {
        return Err(Error::Integrity(format!(
            "{} holds a {} model, expected {variant}",
            path.display(),
            model.variant()
        )));
    }
    let (adam, epochs, lr) = match model.optimizer_from_checkpoint(&ck)? {
        Some((a, e, lr)) => (Some(a), e as usize, lr),
        None => (None, 0, 0.0),
    };
    Ok(Trained {
        model,
        adam,
        epochs,
        lr,
        history: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_names_round_trip() {
        for kind in ExperimentKind::ALL {
            for c in kind.default_conditions() {
                let s = c.to_string();
                assert_eq!(s.parse::<Condition>().unwrap(), c, "{s}");
            }
        }
        assert_eq!(Condition::default().to_string(), "random/any");
        let c: Condition = "aligned:3/visible".parse().unwrap();
        assert_eq!(c.mode, DistractorMode::Aligned(3));
        assert!("random".parse::<Condition>().is_err());
        assert!("random/any/finetuned".parse::<Condition>().is_err());
        assert!("random/any/budget=x".parse::<Condition>().is_err());
    }

    #[test]
    fn distractor_grid() {
        let c = ExperimentKind::Distractors.default_conditions();
        assert_eq!(c.len(), 14);
        assert!(c.iter().any(|c| c.to_string() == "ignored:2/hidden"));
    }

    #[test]
    fn spec_validation() {
        let cfg = ExperimentConfig::default();
        let spec = ExperimentSpec::standard(ExperimentKind::LearningCurve, &cfg);
        spec.validate().unwrap();
        assert_eq!(spec.map_counts.len(), 9);
        assert_eq!(spec.seeds.len(), 5);
        let bad = |f: fn(&mut ExperimentSpec)| {
            let mut s = spec.clone();
            f(&mut s);
            s.validate().is_err()
        };
        assert!(bad(|s| s.map_counts = vec![7]));
        assert!(bad(|s| s.map_counts.clear()));
        assert!(bad(|s| s.seeds = vec![1, 1]));
        assert!(bad(|s| s.test_maps = 0));
        assert!(bad(|s| s.architectures.clear()));
    }

    #[test]
    fn kinds_parse() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("nope".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn overlapping_maps_are_rejected() {
        use crate::gridworld::{generate_map, MapGenParams};
        let p = MapGenParams::default();
        let a = generate_map("train-000", 1, &p).unwrap();
        let b = generate_map("test-000", 2, &p).unwrap();
        check_disjoint(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        let same_id = generate_map("train-000", 3, &p).unwrap();
        assert!(matches!(check_disjoint(&[a.clone()], &[same_id]), Err(Error::Integrity(_))));
        let copy = generate_map("test-001", 1, &p).unwrap();
        assert!(matches!(check_disjoint(&[a], &[copy]), Err(Error::Integrity(_))));
    }
}
