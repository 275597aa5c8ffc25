//! Per-seed results, their aggregation and CSV forms.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats;
use crate::error::{Error, Result};
use crate::observer::Variant;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONDITIONS_FILE: &str = "conditions.csv";

/// Skip rates at or above this flag a condition.
pub const SKIP_FLAG_RATE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub condition: String,
    pub architecture: Variant,
    pub map_count: usize,
    pub seed: u64,
    /// Samples evaluated.
    pub n: usize,
    /// 4-way target accuracy.
    pub accuracy: f64,
}

impl ResultRow {
    fn key(&self) -> (&str, &str, Variant, usize, u64) {
        (&self.experiment, &self.condition, self.architecture, self.map_count, self.seed)
    }
}

/// Size of one evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionLog {
    pub experiment: String,
    pub condition: String,
    pub attempts: usize,
    pub skipped: usize,
    pub n: usize,
    pub flagged: bool,
}

impl ConditionLog {
    pub fn new(experiment: &str, condition: &str, attempts: usize, skipped: usize, n: usize) -> Self {
        let rate = if attempts == 0 { 0.0 } else { skipped as f64 / attempts as f64 };
        ConditionLog {
            experiment: experiment.into(),
            condition: condition.into(),
            attempts,
            skipped,
            n,
            flagged: rate >= SKIP_FLAG_RATE,
        }
    }
}

/// Beliefs-vs-NoBeliefs contrast at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub condition: String,
    pub map_count: usize,
    pub seeds: usize,
    pub beliefs_mean: Option<f64>,
    pub beliefs_std: Option<f64>,
    pub nobeliefs_mean: Option<f64>,
    pub nobeliefs_std: Option<f64>,
    pub gain: Option<f64>,
    /// Welch test over seeds; absent with fewer than two seeds per side.
    pub p_value: Option<f64>,
}

impl SummaryRow {
    pub fn mean(&self, v: Variant) -> Option<f64> {
        match v {
            Variant::Beliefs => self.beliefs_mean,
            Variant::NoBeliefs => self.nobeliefs_mean,
        }
    }

    pub fn std(&self, v: Variant) -> Option<f64> {
        match v {
            Variant::Beliefs => self.beliefs_std,
            Variant::NoBeliefs => self.nobeliefs_std,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub conditions: Vec<ConditionLog>,
}

impl ResultTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if !(0.0..=1.0).contains(&r.accuracy) {
                return Err(Error::format("results", format!("accuracy {} out of [0, 1]", r.accuracy)));
            }
        }
        Ok(())
    }

    /// Adds `other`, replacing rows and logs that share a key.
    pub fn merge(&mut self, other: ResultTable) {
        for row in other.rows {
            match self.rows.iter_mut().find(|r| r.key() == row.key()) {
                Some(r) => *r = row,
                None => self.rows.push(row),
            }
        }
        for log in other.conditions {
            match self
                .conditions
                .iter_mut()
                .find(|c| c.experiment == log.experiment && c.condition == log.condition)
            {
                Some(c) => *c = log,
                None => self.conditions.push(log),
            }
        }
    }

    /// Accuracy per seed at one point.
    pub fn by_seed(&self, experiment: &str, condition: &str, arch: Variant, map_count: usize) -> BTreeMap<u64, f64> {
        self.rows
            .iter()
            .filter(|r| {
                r.experiment == experiment
                    && r.condition == condition
                    && r.architecture == arch
                    && r.map_count == map_count
            })
            .map(|r| (r.seed, r.accuracy))
            .collect()
    }

    /// Beliefs minus NoBeliefs for every seed run with both.
    pub fn gains_by_seed(&self, experiment: &str, condition: &str, map_count: usize) -> BTreeMap<u64, f64> {
        let b = self.by_seed(experiment, condition, Variant::Beliefs, map_count);
        let nb = self.by_seed(experiment, condition, Variant::NoBeliefs, map_count);
        b.iter()
            .filter_map(|(s, a)| nb.get(s).map(|c| (*s, a - c)))
            .collect()
    }

    /// One row per (experiment, condition, map count) in order of first
    /// appearance.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(&str, &str, usize)> = Vec::new();
        for r in &self.rows {
            let k = (r.experiment.as_str(), r.condition.as_str(), r.map_count);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(e, c, m)| {
                let side = |v| -> Vec<f64> { self.by_seed(e, c, v, m).into_values().collect() };
                let (b, nb) = (side(Variant::Beliefs), side(Variant::NoBeliefs));
                let some = |xs: &[f64], f: fn(&[f64]) -> f64| (!xs.is_empty()).then(|| f(xs));
                let beliefs_mean = some(&b, stats::mean);
                let nobeliefs_mean = some(&nb, stats::mean);
                SummaryRow {
                    experiment: e.into(),
                    condition: c.into(),
                    map_count: m,
                    seeds: b.len().max(nb.len()),
                    beliefs_mean,
                    beliefs_std: some(&b, stats::std_dev),
                    nobeliefs_mean,
                    nobeliefs_std: some(&nb, stats::std_dev),
                    gain: beliefs_mean.zip(nobeliefs_mean).map(|(x, y)| x - y),
                    p_value: stats::significance(&b, &nb).ok(),
                }
            })
            .collect()
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join(RESULTS_FILE), &self.rows)?;
        write_csv(&dir.join(SUMMARY_FILE), &self.summary())?;
        write_csv(&dir.join(CONDITIONS_FILE), &self.conditions)
    }

    /// Reads what [`ResultTable::write_dir`] wrote; a missing directory or
    /// file reads as empty.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let table = ResultTable {
            rows: read_csv(&dir.join(RESULTS_FILE))?,
            conditions: read_csv(&dir.join(CONDITIONS_FILE))?,
        };
        table.validate()?;
        Ok(table)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::format("csv", e.to_string())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("csv", e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_error)
}
