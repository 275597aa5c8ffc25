//! Reference values with tolerances, checked against measured summaries.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::table::SummaryRow;
use crate::dataset::{DatasetManifest, TrajectoryStats};
use crate::error::{Error, Result};
use crate::observer::Variant;

const BUILTIN: &str = include_str!("../../data/expectations.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    BeliefsMean,
    NobeliefsMean,
    /// Either architecture's mean.
    AnyMean,
    Gain,
    BehavioursPerMap,
    StepsToTargetMean,
    StepsToTargetVariance,
    StepsHiddenMean,
    StepsHiddenVariance,
    StepsAfterVisibleMean,
    StepsAfterVisibleVariance,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduce {
    #[default]
    Max,
    Min,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub id: String,
    #[serde(default)]
    pub note: String,
    pub experiment: String,
    /// Condition names; empty selects all.
    #[serde(default)]
    pub conditions: Vec<String>,
    /// Empty selects all.
    #[serde(default)]
    pub map_counts: Vec<usize>,
    pub statistic: Statistic,
    /// How several selected values collapse to one.
    #[serde(default)]
    pub reduce: Reduce,
    pub expected: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    pub version: u32,
    pub rows: Vec<Expectation>,
}

/// Trajectory facts of a generated dataset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetFacts {
    pub behaviours_per_map: f64,
    pub stats: TrajectoryStats,
}

impl DatasetFacts {
    pub fn from_manifest(m: &DatasetManifest) -> Self {
        DatasetFacts {
            behaviours_per_map: if m.map_ids.is_empty() {
                0.0
            } else {
                m.total_behaviours as f64 / m.map_ids.len() as f64
            },
            stats: m.stats.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    OutOfTolerance,
    Missing,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::OutOfTolerance => "out-of-tolerance",
            Status::Missing => "missing",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationCheck {
    pub id: String,
    pub expected: f64,
    pub tolerance: f64,
    pub measured: Option<f64>,
    pub status: Status,
}

impl Expectations {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("bundled expectations parse")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let e: Expectations = serde_json::from_str(text)?;
        if e.version != 1 {
            return Err(Error::format("expectations", format!("unsupported version {}", e.version)));
        }
        for r in &e.rows {
            if !(r.tolerance >= 0.0) || !r.expected.is_finite() {
                return Err(Error::format("expectations", format!("row `{}`: bad value or tolerance", r.id)));
            }
        }
        Ok(e)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn check(&self, summary: &[SummaryRow], facts: Option<&DatasetFacts>) -> Vec<ExpectationCheck> {
        self.rows
            .iter()
            .map(|e| {
                let measured = measure(e, summary, facts);
                let status = match measured {
                    None => Status::Missing,
                    // a little slack so a tolerance of 0 survives float noise
                    Some(m) if (m - e.expected).abs() <= e.tolerance + 1e-9 => Status::Pass,
                    Some(_) => Status::OutOfTolerance,
                };
                ExpectationCheck {
                    id: e.id.clone(),
                    expected: e.expected,
                    tolerance: e.tolerance,
                    measured,
                    status,
                }
            })
            .collect()
    }
}

fn measure(e: &Expectation, summary: &[SummaryRow], facts: Option<&DatasetFacts>) -> Option<f64> {
    let s = |f: fn(&TrajectoryStats) -> f64| facts.map(|d| f(&d.stats));
    match e.statistic {
        Statistic::BehavioursPerMap => return facts.map(|d| d.behaviours_per_map),
        Statistic::StepsToTargetMean => return s(|t| t.steps_to_target.mean),
        Statistic::StepsToTargetVariance => return s(|t| t.steps_to_target.variance),
        Statistic::StepsHiddenMean => return s(|t| t.steps_hidden.mean),
        Statistic::StepsHiddenVariance => return s(|t| t.steps_hidden.variance),
        Statistic::StepsAfterVisibleMean => return s(|t| t.steps_after_visible.mean),
        Statistic::StepsAfterVisibleVariance => return s(|t| t.steps_after_visible.variance),
        _ => {}
    }
    let values: Vec<f64> = summary
        .iter()
        .filter(|r| {
            r.experiment == e.experiment
                && (e.conditions.is_empty() || e.conditions.contains(&r.condition))
                && (e.map_counts.is_empty() || e.map_counts.contains(&r.map_count))
        })
        .flat_map(|r| match e.statistic {
            Statistic::BeliefsMean => vec![r.mean(Variant::Beliefs)],
            Statistic::NobeliefsMean => vec![r.mean(Variant::NoBeliefs)],
            Statistic::AnyMean => vec![r.mean(Variant::Beliefs), r.mean(Variant::NoBeliefs)],
            _ => vec![r.gain],
        })
        .flatten()
        .collect();
    let pick = match e.reduce {
        Reduce::Max => f64::max,
        Reduce::Min => f64::min,
    };
    values.into_iter().reduce(pick)
}
