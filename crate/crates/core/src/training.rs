//! Mini-batch training with Adam, step-decay learning rate, per-map
//! validation hold-out and early stopping on validation loss.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::neural::{Adam, LrSchedule, Mode, Regularization};
use crate::observer::{
    batch_input, batch_labels, evaluate, multihead_loss, LossBreakdown, LossWeights, ObserverModel, Variant,
};
use crate::seed;

/// Learning rates swept for the observer, low to high.
pub const LR_LEVELS: [f64; 6] = [0.00015, 0.0002, 0.0003, 0.0005, 0.00075, 0.001];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub regularization: Regularization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = LrSchedule::new(0.0005);
        TrainConfig {
            base_lr: s.base_lr,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            val_fraction: 0.1,
            milestones: s.milestones,
            gamma: s.gamma,
            seed: 0,
            loss_weights: LossWeights::default(),
            regularization: Regularization::default(),
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            milestones: self.milestones.clone(),
            gamma: self.gamma,
        }
    }

    pub fn validate(&self, variant: Variant) -> Result<()> {
        self.schedule().validate()?;
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument(format!("validation fraction {}", self.val_fraction)));
        }
        self.loss_weights.validate(variant)
    }
}

/// Holds out `fraction` of each map's episodes (at least one when the map
/// has two or more). Returns `(train, validation)` sample indices.
pub fn split_by_episode(ds: &Dataset, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut episodes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for info in &ds.info {
        let e = episodes.entry(info.map.as_str()).or_default();
        if !e.contains(&info.episode) {
            e.push(info.episode);
        }
    }
    let mut held: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (map, mut eps) in episodes {
        eps.sort_unstable();
        let mut n = (fraction * eps.len() as f64).round() as usize;
        if fraction > 0.0 && eps.len() >= 2 {
            n = n.max(1);
        }
        eps.shuffle(&mut seed::rng(seed::derive_str(seed, map)));
        eps.truncate(n);
        held.insert(map, eps);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, info) in ds.info.iter().enumerate() {
        if held[info.map.as_str()].contains(&info.episode) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

/// Mini-batches of one epoch. A trailing batch of one sample (which batch
/// norm cannot use) joins the previous batch.
pub fn epoch_batches(train: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = train.to_vec();
    order.shuffle(&mut seed::rng(seed::derive_path(seed, &[0x5eed, epoch as u64])));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val_total: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: Option<usize>,
    /// Epoch at which patience ran out, if it did.
    pub early_stop_epoch: Option<usize>,
}

const HISTORY_MAGIC: &str = "# tom-history v1";
const HISTORY_HEADER: &str =
    "epoch,lr,train_total,train_target,train_action,train_state,train_belief,val_total,val_accuracy";

impl TrainHistory {
    pub fn best_val(&self) -> Option<f64> {
        let e = self.best_epoch?;
        self.records.iter().find(|r| r.epoch == e).map(|r| r.val_total)
    }

    /// CSV with a version line and trailing `# best_epoch=` / `# early_stop=`
    /// lines. Floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut s = format!("{HISTORY_MAGIC}\n{HISTORY_HEADER}\n");
        for r in &self.records {
            let belief = r.train.belief.map(|b| b.to_string()).unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.lr,
                r.train.total,
                r.train.target,
                r.train.action,
                r.train.state,
                belief,
                r.val_total,
                r.val_accuracy
            )
            .unwrap();
        }
        let opt = |v: Option<usize>| v.map(|e| e.to_string()).unwrap_or_else(|| "none".into());
        writeln!(s, "# best_epoch={}", opt(self.best_epoch)).unwrap();
        writeln!(s, "# early_stop={}", opt(self.early_stop_epoch)).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |d: String| Error::format("history", d);
        let mut lines = text.lines();
        if lines.next() != Some(HISTORY_MAGIC) || lines.next() != Some(HISTORY_HEADER) {
            return Err(bad("missing header".into()));
        }
        let mut h = TrainHistory::default();
        for line in lines {
            if let Some(rest) = line.strip_prefix("# ") {
                let (key, value) = rest.split_once('=').ok_or_else(|| bad(line.into()))?;
                let value = match value {
                    "none" => None,
                    v => Some(v.parse().map_err(|_| bad(line.into()))?),
                };
                match key {
                    "best_epoch" => h.best_epoch = value,
                    "early_stop" => h.early_stop_epoch = value,
                    _ => return Err(bad(format!("unknown key `{key}`"))),
                }
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad(format!("{} fields in `{line}`", f.len())));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(format!("bad number `{}`", f[i])));
            h.records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad(line.into()))?,
                lr: num(1)?,
                train: LossBreakdown {
                    total: num(2)?,
                    target: num(3)?,
                    action: num(4)?,
                    state: num(5)?,
                    belief: if f[6].is_empty() { None } else { Some(num(6)?) },
                },
                val_total: num(7)?,
                val_accuracy: num(8)?,
            });
        }
        Ok(h)
    }
}

/// Mean multi-head loss over `idx` in eval mode.
pub fn eval_loss(model: &mut ObserverModel, ds: &Dataset, idx: &[usize], w: &LossWeights) -> Result<LossBreakdown> {
    let mut sum = LossBreakdown::default();
    for chunk in idx.chunks(64) {
        let pred = model.forward(&batch_input(ds, chunk), Mode::Eval)?;
        let (l, _) = multihead_loss(&pred, &batch_labels(ds, chunk), w)?;
        accumulate(&mut sum, &l, chunk.len());
    }
    Ok(mean(sum, idx.len()))
}

fn accumulate(sum: &mut LossBreakdown, l: &LossBreakdown, n: usize) {
    let n = n as f64;
    sum.total += l.total * n;
    sum.target += l.target * n;
    sum.action += l.action * n;
    sum.state += l.state * n;
    if let Some(b) = l.belief {
        *sum.belief.get_or_insert(0.0) += b * n;
    }
}

fn mean(sum: LossBreakdown, n: usize) -> LossBreakdown {
    let n = n.max(1) as f64;
    LossBreakdown {
        total: sum.total / n,
        target: sum.target / n,
        action: sum.action / n,
        state: sum.state / n,
        belief: sum.belief.map(|b| b / n),
    }
}

/// Epoch-by-epoch training state.
pub struct Trainer<'d> {
    ds: &'d Dataset,
    cfg: TrainConfig,
    schedule: LrSchedule,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    model: ObserverModel,
    best: Option<(ObserverModel, f64)>,
    adam: Adam,
    /// Epochs run by earlier sessions; offsets the schedule.
    start_epoch: usize,
    epoch: usize,
    since_best: usize,
    history: TrainHistory,
}

/// A finished run: the best-validation model plus what is needed to resume.
pub struct TrainOutcome {
    pub model: ObserverModel,
    pub history: TrainHistory,
    pub adam: Adam,
    /// Total epochs run, including earlier sessions.
    pub epochs: usize,
    pub last_lr: f64,
}

impl<'d> Trainer<'d> {
    pub fn new(model: ObserverModel, ds: &'d Dataset, cfg: &TrainConfig) -> Result<Self> {
        let (train_idx, val_idx) = split_by_episode(ds, cfg.val_fraction, cfg.seed);
        Self::with_split(model, ds, train_idx, val_idx, cfg)
    }

    pub fn with_split(
        model: ObserverModel,
        ds: &'d Dataset,
        train_idx: Vec<usize>,
        val_idx: Vec<usize>,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate(model.variant())?;
        if train_idx.len() < 2 {
            return Err(Error::EmptyDataset);
        }
        if val_idx.iter().any(|i| train_idx.contains(i)) {
            return Err(Error::InvalidArgument("validation samples overlap the training set".into()));
        }
        Ok(Trainer {
            ds,
            schedule: cfg.schedule(),
            cfg: cfg.clone(),
            train_idx,
            val_idx,
            model,
            best: None,
            adam: Adam::new(),
            start_epoch: 0,
            epoch: 0,
            since_best: 0,
            history: TrainHistory::default(),
        })
    }

    /// Continues from an earlier run's optimizer state and schedule position.
    pub fn resume(mut self, adam: Adam, start_epoch: usize) -> Self {
        self.adam = adam;
        self.start_epoch = start_epoch;
        self
    }

    pub fn model(&self) -> &ObserverModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut ObserverModel {
        &mut self.model
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train_idx
    }

    pub fn val_indices(&self) -> &[usize] {
        &self.val_idx
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    pub fn should_stop(&self) -> bool {
        self.epoch >= self.cfg.max_epochs || self.history.early_stop_epoch.is_some()
    }

    /// One pass over the training split followed by validation.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let global_epoch = self.start_epoch + self.epoch;
        let lr = self.schedule.lr_at(global_epoch);
        let mut sum = LossBreakdown::default();
        for batch in epoch_batches(&self.train_idx, self.cfg.batch_size, self.cfg.seed, global_epoch) {
            self.model.zero_grad();
            let pred = self.model.forward(&batch_input(self.ds, &batch), Mode::Train)?;
            let (loss, grads) = multihead_loss(&pred, &batch_labels(self.ds, &batch), &self.cfg.loss_weights)?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    epoch: self.epoch,
                    detail: format!("non-finite training loss {loss:?}"),
                });
            }
            self.model.backward(&grads);
            self.adam.step(&mut self.model.params_mut(), lr, self.cfg.regularization);
            accumulate(&mut sum, &loss, batch.len());
        }
        let train = mean(sum, self.train_idx.len());

        // without a validation split, early stopping watches the training loss
        let (val_total, val_accuracy) = if self.val_idx.is_empty() {
            (train.total, f64::NAN)
        } else {
            let l = eval_loss(&mut self.model, self.ds, &self.val_idx, &self.cfg.loss_weights)?;
            let acc = evaluate(&mut self.model, self.ds, &self.val_idx)?;
            (l.total, acc.rate())
        };
        if !val_total.is_finite() {
            return Err(Error::Divergence {
                epoch: self.epoch,
                detail: format!("non-finite validation loss {val_total}"),
            });
        }
        if self.best.as_ref().is_none_or(|(_, b)| val_total < *b) {
            self.best = Some((self.model.clone(), val_total));
            self.history.best_epoch = Some(self.epoch);
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.cfg.patience {
                self.history.early_stop_epoch = Some(self.epoch);
            }
        }
        self.history.records.push(EpochRecord {
            epoch: self.epoch,
            lr,
            train,
            val_total,
            val_accuracy,
        });
        self.epoch += 1;
        Ok(self.history.records.last().unwrap())
    }

    pub fn finish(self) -> TrainOutcome {
        let epochs = self.start_epoch + self.epoch;
        let last_lr = self
            .history
            .records
            .last()
            .map_or_else(|| self.schedule.lr_at(self.start_epoch), |r| r.lr);
        TrainOutcome {
            model: self.best.map_or(self.model, |(m, _)| m),
            history: self.history,
            adam: self.adam,
            epochs,
            last_lr,
        }
    }
}

/// Trains until the epoch cap or until validation loss stalls for
/// `patience` epochs, returning the best-validation weights.
pub fn train(model: ObserverModel, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut t = Trainer::new(model, ds, cfg)?;
    while !t.should_stop() {
        t.run_epoch()?;
    }
    Ok(t.finish())
}

/// Brief continued training. The schedule carries on from `start_epoch`
/// instead of restarting at the base rate; `cfg.max_epochs` is the cap for
/// this session alone. Zero epochs return the model untouched.
pub fn finetune(
    model: ObserverModel,
    adam: Option<Adam>,
    start_epoch: usize,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.max_epochs == 0 {
        return Ok(TrainOutcome {
            model,
            history: TrainHistory::default(),
            adam: adam.unwrap_or_default(),
            epochs: start_epoch,
            last_lr: cfg.schedule().lr_at(start_epoch),
        });
    }
    let mut t = Trainer::new(model, ds, cfg)?.resume(adam.unwrap_or_default(), start_epoch);
    while !t.should_stop() {
        t.run_epoch()?;
    }
    Ok(t.finish())
}
