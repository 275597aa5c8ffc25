//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Criteria 1–7 always run. Criteria 8–12 need the full experiment grid
//! (300 training maps, 5 seeds, every experiment) and run only when
//! `TOM_FULL_SCALE` names a work directory for checkpoints and results;
//! otherwise they are reported as skipped.

mod common;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use tom_core::belief::{init_belief, update_belief};
use tom_core::dataset::{build_dataset, generate_dataset, write_dataset, Dataset, SampleSpec};
use tom_core::experiments::{
    check_claims, sample_seed, trajectory_seed, ExperimentConfig, ExperimentKind, ExperimentSpec, Harness,
    ModelSource, ResultTable, Split, Status,
};
use tom_core::gridworld::{generate_map, Action, GridMap, MapGenParams};
use tom_core::neural::Mode;
use tom_core::observer::{evaluate, ObserverModel, Variant};
use tom_core::planner::{plan_action, write_trajectories, Actor, PomcpConfig, Trajectory, DEFAULT_MAX_STEPS};
use tom_core::training::{TrainConfig, Trainer};
use tom_core::{seed, BeliefState};

const BELIEF_MAPS: u64 = 100;
const BELIEF_TOL: f64 = 1e-9;

const GRAD_INSTANCES: u64 = 50;

const PLANNER_MAPS: u64 = 50;
const STATES_PER_MAP: usize = 10;
const EPISODES_PER_MAP: usize = 4;
const ACTION_MATCH_MIN: f64 = 0.95;
const PATH_WITHIN_ONE_MIN: f64 = 0.90;

const ENCODE_SAMPLES: usize = 1000;

const CHANCE: f64 = 0.25;
const CHANCE_BAND: f64 = 0.03;
const CHANCE_SPREAD_SEEDS: u64 = 8;
const CHANCE_MIN_SAMPLES: usize = 2000;

const OVERFIT_MAPS: usize = 5;
const OVERFIT_ACCURACY: f64 = 0.90;
const OVERFIT_EPOCHS: usize = 200;

const FULL_SCALE_ENV: &str = "TOM_FULL_SCALE";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn maps(prefix: &str, base: u64, n: usize) -> Vec<GridMap> {
    (0..n)
        .map(|i| generate_map(format!("{prefix}-{i:03}"), base + i as u64, &MapGenParams::default()).unwrap())
        .collect()
}

fn belief_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for m in 0..BELIEF_MAPS {
        let map = common::block_map(1000 + m, 6 + (m as usize % 2));
        let mut rng = seed::rng(seed::derive(5, m));
        let free: Vec<_> = map.free_cells().collect();
        let start = free[rng.random_range(0..free.len())];
        let target = loop {
            let t = free[rng.random_range(0..free.len())];
            if t != start {
                break t;
            }
        };
        let mut pos = start;
        let mut belief = init_belief(&map, start);
        let mut history = Vec::new();
        for k in 0..30 {
            if k > 0 {
                pos = map.step(pos, Action::from_index(rng.random_range(0..8)));
            }
            let seen = (pos.chebyshev(target) <= 2).then_some(target);
            history.push((pos, seen));
            belief = update_belief(&belief, &map.fov(pos), seen).unwrap();
            let oracle = common::brute_posterior(&map, start, &history);
            for (x, y) in belief.probs().iter().zip(&oracle) {
                worst = worst.max((x - y).abs());
            }
            checked += 1;
        }
    }
    outcome(
        worst < BELIEF_TOL,
        format!("max |filter - enumeration| {worst:.1e} over {checked} beliefs on {BELIEF_MAPS} maps (tol {BELIEF_TOL:.0e})"),
    )
}

fn gradient_checks() -> Outcome {
    use common::grad;
    let suites: [(&str, fn(&mut seed::Rng) -> Vec<grad::Check>); 9] = [
        ("conv", grad::conv_instance),
        ("batchnorm/train", |r| grad::batchnorm_instance(r, Mode::Train)),
        ("batchnorm/eval", |r| grad::batchnorm_instance(r, Mode::Eval)),
        ("linear", grad::linear_instance),
        ("leaky_relu", grad::leaky_instance),
        ("pool", grad::pool_instance),
        ("residual", grad::residual_instance),
        ("losses", grad::loss_instance),
        ("beliefs model", |r| grad::model_instance(r, Variant::Beliefs, 1)),
    ];
    let mut worst = (0.0f64, String::new());
    let mut failures = 0;
    for (name, f) in suites {
        let mut rng = seed::rng(seed::derive_str(23, name));
        for _ in 0..GRAD_INSTANCES {
            for c in f(&mut rng) {
                if !(c.error < grad::TOLERANCE) {
                    failures += 1;
                }
                if c.error > worst.0 || c.error.is_nan() {
                    worst = (c.error, c.what);
                }
            }
        }
    }
    outcome(
        failures == 0,
        format!(
            "{failures} failing checks, worst relative error {:.1e} ({}) over {GRAD_INSTANCES} instances per layer and model (tol {:.0e})",
            worst.0,
            worst.1,
            grad::TOLERANCE
        ),
    )
}

fn planner_optimality() -> Outcome {
    let cfg = PomcpConfig::default();
    let (mut matched, mut states) = (0, 0);
    let (mut near, mut episodes) = (0, 0);
    for m in 0..PLANNER_MAPS {
        let map = generate_map(format!("vi-{m}"), 3000 + m, &MapGenParams::default()).unwrap();
        let free: Vec<_> = map.free_cells().collect();
        let mut rng = seed::rng(seed::derive(31, m));
        let pair = |rng: &mut seed::Rng| loop {
            let (s, t) = (free[rng.random_range(0..free.len())], free[rng.random_range(0..free.len())]);
            if s != t {
                return (s, t);
            }
        };
        for k in 0..STATES_PER_MAP {
            let (pos, target) = pair(&mut rng);
            let q = common::value_iteration(&map, target, &cfg);
            let c = PomcpConfig {
                seed: seed::derive_path(7, &[m, k as u64]),
                ..cfg.clone()
            };
            let a = plan_action(&map, pos, &BeliefState::delta(target), &c).unwrap();
            if common::optimal_actions(&q[pos.index()]).contains(&a) {
                matched += 1;
            }
            states += 1;
        }
        for k in 0..EPISODES_PER_MAP {
            let (start, target) = pair(&mut rng);
            let c = PomcpConfig {
                seed: seed::derive_path(8, &[m, k as u64]),
                ..cfg.clone()
            };
            let actor = Actor::new(&map, c).unwrap();
            let steps = actor.run_episode(start, target, BeliefState::delta(target), DEFAULT_MAX_STEPS);
            let shortest = common::bfs_distance(&map, start, target).unwrap();
            if steps.last().unwrap().pos == target && steps.len() - 1 <= shortest + 1 {
                near += 1;
            }
            episodes += 1;
        }
    }
    let action_rate = matched as f64 / states as f64;
    let path_rate = near as f64 / episodes as f64;
    outcome(
        action_rate >= ACTION_MATCH_MIN && path_rate >= PATH_WITHIN_ONE_MIN,
        format!(
            "optimal action in {:.1}% of {states} states (min {:.0}%), path within +1 in {:.1}% of {episodes} episodes (min {:.0}%)",
            100.0 * action_rate,
            100.0 * ACTION_MATCH_MIN,
            100.0 * path_rate,
            100.0 * PATH_WITHIN_ONE_MIN
        ),
    )
}

fn trajectories_and_data(maps: &[GridMap], seed: u64) -> (Vec<Trajectory>, Dataset) {
    let (trajs, _) =
        generate_dataset(maps, &PomcpConfig::default(), trajectory_seed(seed, Split::Train), DEFAULT_MAX_STEPS).unwrap();
    let spec = SampleSpec {
        seed: sample_seed(seed),
        ..SampleSpec::default()
    };
    let (ds, _) = build_dataset(maps, &trajs, &spec).unwrap();
    (trajs, ds)
}

fn encoding_contract() -> Outcome {
    let maps = maps("enc", 4000, 4);
    let (trajs, ds) = trajectories_and_data(&maps, 9);
    let mut rng = seed::rng(41);
    let mut violations = Vec::new();
    let n = ENCODE_SAMPLES.min(ds.len());
    for i in rand::seq::index::sample(&mut rng, ds.len(), n) {
        let info = &ds.info[i];
        let traj = trajs.iter().find(|t| t.map_id == info.map && t.episode == info.episode).unwrap();
        let map = maps.iter().find(|m| m.id() == info.map).unwrap();
        if let Err(e) = common::check_sample(map, traj, info.step, ds.input(i), info) {
            violations.push(e);
        }
    }
    outcome(
        n == ENCODE_SAMPLES && violations.is_empty(),
        format!(
            "{} violations in {n} random samples{}",
            violations.len(),
            violations.first().map(|e| format!(", first: {e}")).unwrap_or_default()
        ),
    )
}

/// Every file under `dir` with its contents, sorted by path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn pipeline(dir: &Path) {
    let seed = 12;
    let train_maps = maps("train", 100, 5);
    let test_maps = maps("test", 900, 2);
    let (trajs, ds) = trajectories_and_data(&train_maps, seed);
    let mut file = std::fs::File::create(dir.join("trajectories.jsonl")).unwrap();
    write_trajectories(&mut file, &trajs).unwrap();
    let (_, manifest) =
        generate_dataset(&train_maps, &PomcpConfig::default(), trajectory_seed(seed, Split::Train), DEFAULT_MAX_STEPS)
            .unwrap();
    write_dataset(&dir.join("data"), &manifest, &ds).unwrap();

    let train = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let mut h = Harness::new(
        train_maps,
        test_maps,
        PomcpConfig::default(),
        DEFAULT_MAX_STEPS,
        seed,
        train,
        ModelSource::Train(Some(dir.join("models"))),
    )
    .unwrap();
    let spec = ExperimentSpec {
        map_counts: vec![5],
        test_maps: 2,
        seeds: vec![0],
        ..ExperimentSpec::standard(ExperimentKind::HiddenTarget, &ExperimentConfig::default())
    };
    h.run(&spec).unwrap().write_dir(&dir.join("results")).unwrap();
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<String> = sa
        .iter()
        .zip(&sb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let kinds = ["trajectories.jsonl", "samples.bin", ".ckpt", ".csv"];
    let covered = kinds
        .iter()
        .all(|k| sa.iter().any(|(p, _)| p.to_string_lossy().ends_with(k)));
    outcome(
        sa.len() == sb.len() && differing.is_empty() && covered,
        format!(
            "{} files compared (trajectories, dataset, checkpoints, CSVs), {} differ{}",
            sa.len(),
            differing.len() + sa.len().abs_diff(sb.len()),
            if covered { "" } else { ", some artifact kind missing" }
        ),
    )
}

fn chance_calibration() -> Outcome {
    let maps = maps("test", 900, 10);
    let (_, ds) = trajectories_and_data(&maps, 3);
    let mut model = ObserverModel::new(Variant::Beliefs, 0);
    let idx: Vec<usize> = (0..ds.len()).collect();
    let acc = evaluate(&mut model, &ds, &idx).unwrap();
    let rate = acc.rate();
    // each initialisation is one random function of the trajectory, so its
    // accuracy scatters around chance by far more than sampling noise
    let others: Vec<f64> = (1..CHANCE_SPREAD_SEEDS)
        .map(|s| evaluate(&mut ObserverModel::new(Variant::Beliefs, s), &ds, &idx).unwrap().rate())
        .collect();
    let all: Vec<f64> = std::iter::once(rate).chain(others).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let (lo, hi) = all.iter().fold((1.0f64, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    outcome(
        acc.n >= CHANCE_MIN_SAMPLES && (rate - CHANCE).abs() <= CHANCE_BAND,
        format!(
            "untrained 4-way accuracy {:.2}% on {} samples (25% ± {:.0}%, min {CHANCE_MIN_SAMPLES} samples); \
             init seeds 0..{CHANCE_SPREAD_SEEDS}: mean {:.2}%, range {:.1}%..{:.1}%",
            100.0 * rate,
            acc.n,
            100.0 * CHANCE_BAND,
            100.0 * mean,
            100.0 * lo,
            100.0 * hi
        ),
    )
}

fn overfit() -> Outcome {
    let maps = maps("train", 100, OVERFIT_MAPS);
    let (_, ds) = trajectories_and_data(&maps, 1);
    let cfg = TrainConfig {
        max_epochs: OVERFIT_EPOCHS,
        patience: usize::MAX,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(ObserverModel::new(Variant::Beliefs, 0), &ds, &cfg).unwrap();
    let idx = t.train_indices().to_vec();
    let mut best = (0.0, 0);
    while !t.should_stop() {
        t.run_epoch().unwrap();
        let epoch = t.epochs_run();
        if epoch % 5 == 0 || epoch == OVERFIT_EPOCHS {
            let rate = evaluate(t.model_mut(), &ds, &idx).unwrap().rate();
            if rate > best.0 {
                best = (rate, epoch);
            }
            if rate > OVERFIT_ACCURACY {
                break;
            }
        }
    }
    let val = t.val_indices().to_vec();
    let held_out = evaluate(t.model_mut(), &ds, &val).unwrap().rate();
    outcome(
        best.0 > OVERFIT_ACCURACY,
        format!(
            "training 4-way accuracy {:.1}% at epoch {} on {} samples from {OVERFIT_MAPS} maps (need > {:.0}% within {OVERFIT_EPOCHS}); held-out {:.1}% on {}",
            100.0 * best.0,
            best.1,
            idx.len(),
            100.0 * OVERFIT_ACCURACY,
            100.0 * held_out,
            val.len()
        ),
    )
}

/// Runs every experiment at full scale under `dir`, reusing cached
/// checkpoints, and returns the claim checks.
fn full_scale(dir: &Path) -> Vec<tom_core::experiments::ClaimCheck> {
    let cfg = ExperimentConfig::default();
    let mut h = Harness::new(
        maps("train", 100, 300),
        maps("test", 900, cfg.test_maps),
        PomcpConfig::default(),
        DEFAULT_MAX_STEPS,
        0,
        TrainConfig::default(),
        ModelSource::Train(Some(dir.join("models"))),
    )
    .unwrap();
    let results = dir.join("results");
    let mut table = ResultTable::read_dir(&results).unwrap();
    for kind in ExperimentKind::ALL {
        let part = h.run(&ExperimentSpec::standard(kind, &cfg)).unwrap();
        table.merge(part);
        table.write_dir(&results).unwrap();
    }
    check_claims(&table)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("belief filter exactness", belief_exactness),
        ("gradient correctness", gradient_checks),
        ("planner optimality", planner_optimality),
        ("encoding contract", encoding_contract),
        ("determinism", determinism),
        ("chance calibration", chance_calibration),
        ("overfit sanity", overfit),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let o = f();
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2}  {}  {name}: {} [{:.0}s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }

    let groups: [(usize, &str, &str); 5] = [
        (8, "learning-curve synergy", "learning_curve."),
        (9, "hidden-target amplification", "hidden_target."),
        (10, "aligned-distractor stress", "distractors.aligned"),
        (11, "ignored-distractor ceiling", "distractors.ignored"),
        (12, "generalization degradation", "generalization."),
    ];
    match std::env::var_os(FULL_SCALE_ENV).filter(|v| !v.is_empty()) {
        None => {
            for (id, name, _) in groups {
                println!("criterion {id:>2}  SKIP  {name}: full-scale run; set {FULL_SCALE_ENV}=<work dir> to run");
            }
        }
        Some(dir) => {
            let claims = full_scale(Path::new(&dir));
            for (id, name, prefix) in groups {
                let mine: Vec<_> = claims.iter().filter(|c| c.id.starts_with(prefix)).collect();
                let pass = !mine.is_empty() && mine.iter().all(|c| c.status == Status::Pass);
                failed += usize::from(!pass);
                let detail: Vec<String> = mine.iter().map(|c| format!("{} {:?}: {}", c.id, c.status, c.detail)).collect();
                println!(
                    "criterion {id:>2}  {}  {name}: {}",
                    if pass { "PASS" } else { "FAIL" },
                    detail.join("; ")
                );
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
