use std::sync::OnceLock;

use tom_core::dataset::{build_dataset, generate_dataset, Dataset, SampleSpec};
use tom_core::gridworld::{generate_map, MapGenParams};
use tom_core::observer::{ObserverModel, Variant};
use tom_core::planner::{PomcpConfig, DEFAULT_MAX_STEPS};
use tom_core::training::{eval_loss, finetune, train, TrainConfig, Trainer};
use tom_core::Error;

/// Samples from the first `episodes` episodes of map `m`.
fn data(m: u64, episodes: usize) -> Dataset {
    let map = generate_map(format!("t{m}"), 70 + m, &MapGenParams::default()).unwrap();
    let maps = std::slice::from_ref(&map);
    let (trajs, _) = generate_dataset(maps, &PomcpConfig::default().with_budget(60), m, DEFAULT_MAX_STEPS).unwrap();
    let (ds, _) = build_dataset(maps, &trajs[..episodes], &SampleSpec::default()).unwrap();
    ds
}

fn small() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| data(0, 12))
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        seed: 4,
        ..TrainConfig::default()
    }
}

fn weights(m: &ObserverModel) -> Vec<f32> {
    m.params().iter().flat_map(|p| p.tensor.values().to_vec()).collect()
}

#[test]
fn same_config_same_history() {
    let ds = small();
    let a = train(ObserverModel::new(Variant::Beliefs, 1), ds, &cfg(3)).unwrap();
    let b = train(ObserverModel::new(Variant::Beliefs, 1), ds, &cfg(3)).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.to_text(), b.history.to_text());
    assert_eq!(weights(&a.model), weights(&b.model));
}

#[test]
fn returned_model_has_the_best_validation_loss() {
    let ds = small();
    let c = TrainConfig {
        milestones: vec![1, 2, 3],
        ..cfg(5)
    };
    let mut t = Trainer::new(ObserverModel::new(Variant::NoBeliefs, 2), ds, &c).unwrap();
    let val = t.val_indices().to_vec();
    assert!(!val.is_empty());
    while !t.should_stop() {
        t.run_epoch().unwrap();
    }
    let out = t.finish();
    let best = out.history.best_val().unwrap();
    assert!(out.history.records.iter().all(|r| best <= r.val_total));
    let mut model = out.model;
    let again = eval_loss(&mut model, ds, &val, &c.loss_weights).unwrap();
    assert_eq!(again.total, best);
    let schedule = c.schedule();
    for r in &out.history.records {
        assert_eq!(r.lr, schedule.lr_at(r.epoch));
    }
}

#[test]
fn zero_epoch_finetune_is_a_no_op() {
    let model = ObserverModel::new(Variant::Beliefs, 5);
    let before = weights(&model);
    let out = finetune(model, None, 40, small(), &cfg(0)).unwrap();
    assert_eq!(weights(&out.model), before);
    assert_eq!(out.epochs, 40);
    assert!(out.history.records.is_empty());
}

#[test]
fn finetune_loss_mostly_decreases() {
    let base = train(ObserverModel::new(Variant::Beliefs, 6), small(), &cfg(4)).unwrap();
    let fresh = data(1, 8);
    let c = cfg(10);
    let mut t = Trainer::new(base.model, &fresh, &c).unwrap().resume(base.adam, base.epochs);
    let idx = t.train_indices().to_vec();
    let mut losses = vec![eval_loss(t.model_mut(), &fresh, &idx, &c.loss_weights).unwrap().total];
    for _ in 0..10 {
        t.run_epoch().unwrap();
        losses.push(eval_loss(t.model_mut(), &fresh, &idx, &c.loss_weights).unwrap().total);
    }
    let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down * 10 >= 8 * (losses.len() - 1), "losses {losses:?}");
}

#[test]
fn l1_sparsifies_the_trunk() {
    let ds = data(2, 4);
    let c = TrainConfig {
        base_lr: 0.001,
        batch_size: 8,
        milestones: Vec::new(),
        patience: usize::MAX,
        ..cfg(150)
    };
    let mut t = Trainer::new(ObserverModel::new(Variant::Beliefs, 7), &ds, &c).unwrap();
    while !t.should_stop() {
        t.run_epoch().unwrap();
    }
    let trunk: Vec<f32> = t
        .model()
        .params()
        .iter()
        .filter(|p| p.regularize && p.name.starts_with("trunk"))
        .flat_map(|p| p.tensor.values().to_vec())
        .collect();
    let small = trunk.iter().filter(|w| w.abs() < 1e-3).count();
    let frac = small as f64 / trunk.len() as f64;
    assert!(frac >= 0.10, "{:.3} of {} trunk weights below 1e-3", frac, trunk.len());
}

#[test]
fn non_finite_inputs_abort_training() {
    let mut ds = small().clone();
    ds.inputs.iter_mut().for_each(|v| *v = f32::NAN);
    match train(ObserverModel::new(Variant::Beliefs, 1), &ds, &cfg(2)) {
        Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 0),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.epochs)),
    }
}

#[test]
fn tiny_datasets_are_rejected() {
    let ds = small().filter(|i| i.episode == 0 && i.step == 0);
    assert!(matches!(
        train(ObserverModel::new(Variant::Beliefs, 1), &ds, &cfg(1)),
        Err(Error::EmptyDataset)
    ));
}
