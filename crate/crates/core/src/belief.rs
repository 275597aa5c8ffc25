//! Exact Bayes filter over the hidden target cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{FieldOfView, GridMap, Position, CELLS};

/// Probability mass over the 121 cells, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefState {
    probs: Vec<f64>,
}

impl BeliefState {
    /// Uniform over every free cell except the actor's start.
    pub fn uniform(map: &GridMap, actor_start: Position) -> Self {
        let support: Vec<_> = map.free_cells().filter(|&p| p != actor_start).collect();
        let mass = 1.0 / support.len() as f64;
        let mut probs = vec![0.0; CELLS];
        for p in support {
            probs[p.index()] = mass;
        }
        BeliefState { probs }
    }

    pub fn delta(at: Position) -> Self {
        let mut probs = vec![0.0; CELLS];
        probs[at.index()] = 1.0;
        BeliefState { probs }
    }

    /// Wraps raw probabilities after checking they form a distribution.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.len() != CELLS {
            return Err(Error::ShapeMismatch(format!(
                "belief has {} entries, expected {CELLS}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::format("belief", "negative or non-finite mass"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::format("belief", format!("mass sums to {total}")));
        }
        Ok(BeliefState { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, p: Position) -> f64 {
        self.probs[p.index()]
    }

    pub fn is_delta(&self) -> bool {
        self.probs.iter().any(|&p| p == 1.0)
    }

    pub fn support(&self) -> impl Iterator<Item = Position> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| Position::from_index(i))
    }

    /// Conditions on one observation: either the target was seen at a cell of
    /// `fov`, or it is not anywhere inside `fov`.
    pub fn update(&self, fov: &FieldOfView, target_seen_at: Option<Position>) -> Result<Self> {
        if let Some(at) = target_seen_at {
            debug_assert!(fov.contains(at));
            return Ok(BeliefState::delta(at));
        }
        let mut probs = self.probs.clone();
        for c in fov.cells() {
            probs[c.index()] = 0.0;
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        // Skip the division when nothing was removed, so a no-information
        // update returns the input bit for bit.
        if probs != self.probs {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        Ok(BeliefState { probs })
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    /// Draws a cell by inverse-CDF from `u ∈ [0, 1)`.
    pub fn sample_with(&self, u: f64) -> Position {
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return Position::from_index(i);
                }
            }
        }
        Position::from_index(last)
    }
}

/// Uniform prior over free cells other than `actor_start`.
pub fn init_belief(map: &GridMap, actor_start: Position) -> BeliefState {
    BeliefState::uniform(map, actor_start)
}

pub fn update_belief(
    belief: &BeliefState,
    fov: &FieldOfView,
    target_seen_at: Option<Position>,
) -> Result<BeliefState> {
    belief.update(fov, target_seen_at)
}

pub fn belief_entropy(belief: &BeliefState) -> f64 {
    belief.entropy()
}
