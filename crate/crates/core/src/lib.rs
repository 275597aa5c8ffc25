//! Self-observation theory-of-mind pipeline.
//!
//! A POMCP actor explores 11×11 gridworlds with an exact belief over a hidden
//! target; its trajectories, actions and beliefs supervise an observer network
//! that predicts the target, next action, next state and (optionally) the
//! actor's belief from short behaviour chunks.

pub mod belief;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod gridworld;
pub mod neural;
pub mod observer;
pub mod planner;
pub mod seed;
pub mod training;

pub use belief::BeliefState;
pub use error::{Error, Result};
pub use gridworld::{Action, Cell, FieldOfView, GridMap, MapGenParams, Position};
