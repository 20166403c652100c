//! Saddle-point offline imitation learning on finite MDPs with known features.
//!
//! The learner alternates an exponential-weights actor with a best-response critic
//! over a class of action-value functions, using only expert state-action pairs.
//! Exact evaluation utilities (occupancy measures, returns, objective values) live
//! alongside so that every run can be audited against the environment.

pub mod baselines;
pub mod dataset;
pub mod diagnostics;
pub mod envgen;
pub mod error;
pub mod mdp;
pub mod schedule;
pub mod spoil_general;
pub mod spoil_linear;

pub use error::{Error, Result};
