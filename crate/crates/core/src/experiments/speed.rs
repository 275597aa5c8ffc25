//! Replaying a recorded trajectory at a different speed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::Action;
use crate::planner::{Trajectory, TrajectoryStep};

pub const SPEED_FACTORS: [f64; 4] = [0.75, 0.9, 1.1, 1.25];

/// A positive speed factor in thousandths, so resampling is exact integer
/// arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Speed(u32);

impl Speed {
    pub const NORMAL: Speed = Speed(1000);

    pub fn new(factor: f64) -> Result<Self> {
        let scaled = factor * 1000.0;
        let rounded = scaled.round();
        if !(factor > 0.0) || !scaled.is_finite() || (scaled - rounded).abs() > 1e-6 || rounded > f64::from(u32::MAX) {
            return Err(Error::InvalidArgument(format!(
                "speed factor {factor} must be positive with at most three decimals"
            )));
        }
        Ok(Speed(rounded as u32))
    }

    pub fn permille(self) -> u32 {
        self.0
    }

    pub fn factor(self) -> f64 {
        f64::from(self.0) / 1000.0
    }
}

impl Default for Speed {
    fn default() -> Self {
        Speed::NORMAL
    }
}

impl TryFrom<f64> for Speed {
    type Error = Error;

    fn try_from(f: f64) -> Result<Self> {
        Speed::new(f)
    }
}

impl From<Speed> for f64 {
    fn from(s: Speed) -> f64 {
        s.factor()
    }
}

impl fmt::Display for Speed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.factor())
    }
}

impl FromStr for Speed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let f: f64 = s
            .trim_start_matches('x')
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad speed factor `{s}`")))?;
        Speed::new(f)
    }
}

/// Source step shown at each observed tick: `⌊k · factor⌋` for tick `k`,
/// always ending on the final record.
pub fn resample_indices(len: usize, speed: Speed) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let last = len - 1;
    let p = u64::from(speed.0);
    let mut out: Vec<usize> = (0u64..)
        .map(|k| (k * p / 1000) as usize)
        .take_while(|&s| s <= last)
        .collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// The trajectory as seen by an observer whose clock runs `1 / factor` times
/// faster than the actor. Slow factors repeat a step (the actor stands still,
/// recorded as `Stay`); fast factors drop steps, and the step before a gap
/// keeps the action it took at the source. Beliefs and visibility travel with
/// their source step.
pub fn resample_speed(traj: &Trajectory, speed: Speed) -> Trajectory {
    let idx = resample_indices(traj.len(), speed);
    let steps = idx
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let src = &traj.steps[s];
            let action = match idx.get(j + 1) {
                Some(&next) if next != s => src.action,
                _ => Action::Stay,
            };
            TrajectoryStep {
                pos: src.pos,
                action,
                belief_before: src.belief_before.clone(),
                target_visible: src.target_visible,
            }
        })
        .collect();
    Trajectory {
        map_id: traj.map_id.clone(),
        episode: traj.episode,
        target: traj.target,
        steps,
    }
}
