use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use tom_core::dataset::{
    build_dataset, generate_dataset, write_dataset, DatasetManifest, DistractorMode, SampleSpec, TrajectoryStats,
};
use tom_core::experiments::{
    check_claims, render_report, resample_speed, sample_seed, trajectory_seed, Condition, DatasetFacts,
    ExperimentKind, ExperimentSpec, Expectations, Harness, ModelKey, ModelSource, ResultTable, Speed, Split,
    SKIP_FLAG_RATE,
};
use tom_core::gridworld::generate_map;
use tom_core::neural::Checkpoint;
use tom_core::observer::{evaluate, ObserverModel, Variant};
use tom_core::planner::write_trajectories;
use tom_core::{seed, Error, GridMap};

use crate::config::RunConfig;
use crate::layout::{read_maps, write_index, write_map, Layout, MapIndex};
use crate::{Arch, Cli, Command, ConditionArgs, Empty, SplitArg};

pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const BUILD_FILE: &str = "build.json";
/// Datasets whose actor reaches the target less often than this are flagged.
pub const PLANNER_SUCCESS_FLOOR: f64 = 0.9;

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.global.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &cli.global.out {
        cfg.out = Some(o.clone());
    }
    if cfg.jobs > 0 {
        // only fails when a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
    }
    let layout = Layout::new(cfg.out_dir());
    match cli.command {
        Command::GenMaps { maps, test_maps } => gen_maps(
            &cfg,
            &layout,
            maps.unwrap_or(cfg.maps.train),
            test_maps.unwrap_or(cfg.maps.test),
        ),
        Command::GenData { split, maps, condition } => gen_data(&cfg, &layout, split, maps, &condition),
        Command::Train {
            arch,
            map_count,
            replicate,
        } => train(&cfg, &layout, arch, map_count, replicate),
        Command::Eval {
            arch,
            map_count,
            replicate,
            checkpoint,
            condition,
        } => eval(&cfg, &layout, arch, map_count, replicate, checkpoint, &condition),
        Command::Experiment {
            name,
            arch,
            map_count,
            replicates,
            condition,
        } => experiment(&cfg, &layout, name, arch, map_count, replicates, &condition),
        Command::Report { expectations } => report(&layout, expectations),
        Command::Config => {
            print!("{}", cfg.emit());
            Ok(())
        }
    }
}

fn map_seed(seed: u64, split: u64, i: usize, attempt: u64) -> u64 {
    seed::derive_path(seed, &[0x6d6170, split, i as u64, attempt])
}

fn layout_of(map: &GridMap) -> String {
    let text = map.to_text();
    text.split_once('\n').map_or(String::new(), |(_, grid)| grid.to_string())
}

fn gen_maps(cfg: &RunConfig, layout: &Layout, n_train: usize, n_test: usize) -> Result<()> {
    let p = &cfg.maps.generator;
    let train: Vec<GridMap> = (0..n_train)
        .into_par_iter()
        .map(|i| generate_map(format!("train-{i:03}"), map_seed(cfg.seed, 0, i, 0), p))
        .collect::<Result<_, _>>()?;
    let mut seen: Vec<String> = train.iter().map(layout_of).collect();
    let mut test = Vec::with_capacity(n_test);
    for i in 0..n_test {
        // a test layout identical to a training one would leak
        let mut attempt = 0;
        let map = loop {
            let m = generate_map(format!("test-{i:03}"), map_seed(cfg.seed, 1, i, attempt), p)?;
            let l = layout_of(&m);
            if !seen.contains(&l) {
                seen.push(l);
                break m;
            }
            attempt += 1;
        };
        test.push(map);
    }

    let dir = layout.maps();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let index = MapIndex {
        version: 1,
        seed: cfg.seed,
        generator: p.clone(),
        train: train.iter().map(|m| write_map(&dir, m)).collect::<Result<_>>()?,
        test: test.iter().map(|m| write_map(&dir, m)).collect::<Result<_>>()?,
    };
    write_index(&dir, &index)?;
    println!("{} training and {} test maps in {}", train.len(), test.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct BuildInfo {
    split: &'static str,
    maps: usize,
    budget: usize,
    speed: Speed,
    sample: SampleSpec,
    samples: usize,
    attempts: usize,
    skipped: usize,
    skip_rate: f64,
    planner_success_rate: f64,
    flags: Vec<String>,
}

fn dataset_name(split: &str, maps: usize, budget: Option<usize>, speed: Speed, spec: &SampleSpec) -> String {
    let mut name = format!("{split}-m{maps:03}");
    if let Some(b) = budget {
        name.push_str(&format!("-b{b}"));
    }
    if speed != Speed::NORMAL {
        name.push_str(&format!("-x{speed}"));
    }
    if spec.mode != DistractorMode::Random {
        name.push_str(&format!("-{}", spec.mode.to_string().replace(':', "")));
    }
    if spec.visibility != Default::default() {
        name.push_str(&format!("-{}", spec.visibility));
    }
    name
}

fn gen_data(cfg: &RunConfig, layout: &Layout, split: SplitArg, maps: Option<usize>, cond: &ConditionArgs) -> Result<()> {
    let (_, train, test) = read_maps(&layout.maps())?;
    let (pool, which, label) = match split {
        SplitArg::Train => (train, Split::Train, "train"),
        SplitArg::Test => (test, Split::Test, "test"),
    };
    let n = maps.unwrap_or(pool.len());
    if n > pool.len() {
        return Err(Error::InvalidArgument(format!("{n} {label} maps requested, {} generated", pool.len())).into());
    }
    if n == 0 {
        return Err(Empty(format!("no {label} maps to generate data from")).into());
    }
    let maps = &pool[..n];
    let budget = cond.budget.unwrap_or(cfg.planner.max_samples);
    let planner = cfg.planner.with_budget(budget);
    let (mut trajectories, mut manifest) =
        generate_dataset(maps, &planner, trajectory_seed(cfg.seed, which), cfg.max_steps)?;
    let speed = cond.speed.unwrap_or(Speed::NORMAL);
    if speed != Speed::NORMAL {
        trajectories = trajectories.iter().map(|t| resample_speed(t, speed)).collect();
        manifest.total_samples = trajectories.iter().map(|t| t.moves()).sum();
        manifest.stats = TrajectoryStats::of(&trajectories);
    }
    let spec = SampleSpec {
        mode: cond.distractor_mode.unwrap_or(cfg.dataset.mode),
        visibility: cond.visibility.unwrap_or(cfg.dataset.visibility),
        seed: sample_seed(cfg.seed),
    };
    let (ds, counts) = build_dataset(maps, &trajectories, &spec)?;
    if ds.is_empty() {
        return Err(Error::EmptyCondition(format!("{} / {}", spec.mode, spec.visibility)).into());
    }

    let mut flags = Vec::new();
    if counts.skip_rate() >= SKIP_FLAG_RATE {
        flags.push(format!("{:.1}% of placements infeasible", 100.0 * counts.skip_rate()));
    }
    if manifest.stats.success_rate < PLANNER_SUCCESS_FLOOR {
        flags.push(format!("actor reached its target in only {:.1}% of episodes", 100.0 * manifest.stats.success_rate));
    }
    for f in &flags {
        log::warn!("{f}");
    }

    let dir = layout.data().join(dataset_name(label, n, cond.budget, speed, &spec));
    write_dataset(&dir, &manifest, &ds)?;
    let file = File::create(dir.join(TRAJECTORIES_FILE))?;
    write_trajectories(BufWriter::new(file), &trajectories)?;
    let info = BuildInfo {
        split: label,
        maps: n,
        budget,
        speed,
        sample: spec,
        samples: ds.len(),
        attempts: counts.attempts,
        skipped: counts.skipped,
        skip_rate: counts.skip_rate(),
        planner_success_rate: manifest.stats.success_rate,
        flags,
    };
    let mut text = serde_json::to_string_pretty(&info)?;
    text.push('\n');
    fs::write(dir.join(BUILD_FILE), text)?;

    let s = &manifest.stats;
    println!("{}: {} behaviours, {} samples", dir.display(), manifest.total_behaviours, ds.len());
    println!(
        "steps to target {:.2} (var {:.2}), hidden {:.2} (var {:.2}), after visible {:.2} (var {:.2})",
        s.steps_to_target.mean,
        s.steps_to_target.variance,
        s.steps_hidden.mean,
        s.steps_hidden.variance,
        s.steps_after_visible.mean,
        s.steps_after_visible.variance
    );
    Ok(())
}

fn harness(cfg: &RunConfig, train: Vec<GridMap>, test: Vec<GridMap>, models: ModelSource) -> Result<Harness> {
    Ok(Harness::new(
        train,
        test,
        cfg.planner.clone(),
        cfg.max_steps,
        cfg.seed,
        cfg.train.clone(),
        models,
    )?)
}

fn variants(arch: Option<Arch>) -> Vec<Variant> {
    arch.map_or_else(|| Variant::ALL.to_vec(), |a| vec![a.into()])
}

fn train(cfg: &RunConfig, layout: &Layout, arch: Option<Arch>, map_count: Option<usize>, replicate: u64) -> Result<()> {
    let (_, train, test) = read_maps(&layout.maps())?;
    let n = map_count.unwrap_or(train.len());
    if n == 0 {
        return Err(Empty("no training maps".into()).into());
    }
    let dir = layout.models();
    fs::create_dir_all(&dir)?;
    let mut h = harness(cfg, train, test, ModelSource::Train(Some(dir.clone())))?;
    for variant in variants(arch) {
        let key = ModelKey {
            variant,
            map_count: n,
            seed: replicate,
            finetune: None,
        };
        let t = h.model(&key)?;
        let path = h.checkpoint_path(&dir, &key, (0, 0));
        println!("{key}: {} epochs, {}", t.epochs, path.display());
    }
    Ok(())
}

fn condition_of(cond: &ConditionArgs, cfg: &RunConfig) -> Condition {
    Condition {
        mode: cond.distractor_mode.unwrap_or(cfg.dataset.mode),
        visibility: cond.visibility.unwrap_or(cfg.dataset.visibility),
        budget: cond.budget,
        speed: cond.speed.unwrap_or(Speed::NORMAL),
        finetuned: false,
    }
}

#[allow(clippy::too_many_arguments)]
fn eval(
    cfg: &RunConfig,
    layout: &Layout,
    arch: Option<Arch>,
    map_count: Option<usize>,
    replicate: u64,
    checkpoint: Option<PathBuf>,
    cond: &ConditionArgs,
) -> Result<()> {
    let (_, train, test) = read_maps(&layout.maps())?;
    let n_train = map_count.unwrap_or(train.len());
    let mut h = harness(cfg, train, test, ModelSource::Load(layout.models()))?;

    let mut models: Vec<(String, ObserverModel)> = Vec::new();
    if let Some(path) = checkpoint {
        let ck = Checkpoint::load(&path)?;
        let model = ObserverModel::from_checkpoint(&ck)?;
        if let Some(a) = arch {
            let want: Variant = a.into();
            if model.variant() != want {
                return Err(Error::Integrity(format!("{} holds a {} model, not {want}", path.display(), model.variant())).into());
            }
        }
        models.push((path.display().to_string(), model));
    } else {
        for variant in variants(arch) {
            let key = ModelKey {
                variant,
                map_count: n_train,
                seed: replicate,
                finetune: None,
            };
            models.push((key.to_string(), h.model(&key)?.model));
        }
    }

    let condition = condition_of(cond, cfg);
    let maps = cfg.experiment.test_maps.min(h.test_maps().len());
    let (ds, log) = h.test_set(&condition, maps)?;
    if ds.is_empty() {
        return Err(Error::EmptyCondition(condition.to_string()).into());
    }
    if log.flagged {
        log::warn!("{condition}: {} of {} placements infeasible", log.skipped, log.attempts);
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    for (name, mut model) in models {
        let acc = evaluate(&mut model, &ds, &idx)?;
        println!("{name}\t{condition}\tn={}\taccuracy={:.4}", acc.n, acc.rate());
    }
    Ok(())
}

fn matches(c: &Condition, cond: &ConditionArgs, cfg: &RunConfig) -> bool {
    cond.budget
        .is_none_or(|b| c.budget.unwrap_or(cfg.planner.max_samples) == b)
        && cond.speed.is_none_or(|s| c.speed == s)
        && cond.distractor_mode.is_none_or(|m| c.mode == m)
        && cond.visibility.is_none_or(|v| c.visibility == v)
}

#[allow(clippy::too_many_arguments)]
fn experiment(
    cfg: &RunConfig,
    layout: &Layout,
    kind: ExperimentKind,
    arch: Option<Arch>,
    map_counts: Vec<usize>,
    replicates: Option<usize>,
    cond: &ConditionArgs,
) -> Result<()> {
    let (_, train, test) = read_maps(&layout.maps())?;
    let mut ecfg = cfg.experiment.clone();
    if let Some(r) = replicates {
        ecfg.seeds = r;
    }
    if !map_counts.is_empty() {
        ecfg.map_counts = Some(map_counts);
    }
    let mut spec = ExperimentSpec::standard(kind, &ecfg);
    spec.architectures = variants(arch);
    spec.conditions.retain(|c| matches(c, cond, cfg));
    if spec.conditions.is_empty() {
        return Err(Error::InvalidArgument(format!("no {kind} condition matches the given filters")).into());
    }
    let dir = layout.models();
    fs::create_dir_all(&dir)?;
    let mut h = harness(cfg, train, test, ModelSource::Train(Some(dir)))?;
    let table = h.run(&spec)?;

    let results = layout.results();
    let mut all = ResultTable::read_dir(&results)?;
    let rows = table.rows.len();
    all.merge(table);
    all.write_dir(&results)?;
    println!("{kind}: {rows} rows merged into {}", results.display());
    Ok(())
}

/// Trajectory facts of the largest standard training dataset, if any.
fn dataset_facts(dir: &Path) -> Result<Option<DatasetFacts>> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(None);
    };
    let mut best: Option<(usize, String, DatasetManifest)> = None;
    for e in entries {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        let standard = name
            .strip_prefix("train-m")
            .is_some_and(|rest| rest.chars().all(|c| c.is_ascii_digit()));
        let path = e.path().join("manifest.json");
        if !standard || !path.exists() {
            continue;
        }
        let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(&path)?).map_err(Error::from)?;
        let better = best
            .as_ref()
            .is_none_or(|(n, b, _)| (m.map_ids.len(), &name) > (*n, b));
        if better {
            best = Some((m.map_ids.len(), name, m));
        }
    }
    Ok(best.map(|(_, _, m)| DatasetFacts::from_manifest(&m)))
}

fn report(layout: &Layout, expectations: Option<PathBuf>) -> Result<()> {
    let results = layout.results();
    let table = ResultTable::read_dir(&results)?;
    if table.is_empty() {
        return Err(Empty(format!("no results in {}", results.display())).into());
    }
    let reference = match expectations {
        Some(p) => Expectations::load(&p)?,
        None => Expectations::builtin(),
    };
    let facts = dataset_facts(&layout.data())?;
    let checks = reference.check(&table.summary(), facts.as_ref());
    let claims = check_claims(&table);
    let text = render_report(&table, &checks, &claims);
    table.write_dir(&results)?;
    fs::write(layout.report(), &text)?;
    print!("{text}");
    Ok(())
}
