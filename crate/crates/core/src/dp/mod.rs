//! Grid value iteration for the hybrid minimum-cost problem.

mod grid;
pub mod io;
mod solver;

use thiserror::Error;

use crate::model::ModelError;

pub use grid::{admissible_actions, Axis, GridSpec, TerminationSpec};
pub use solver::{
    bellman_backup, iterate, policy_lookup, value_iteration, Backup, PolicyTable, Solution, SolveReport, SolverOptions,
    ValueTable,
};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid termination spec: {0}")]
    InvalidTermination(String),
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("value iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("state ({x}, {v}) is outside the grid")]
    OutOfDomain { x: f64, v: f64 },
    #[error("state ({x}, {v}) lies in a region with no solution")]
    Infeasible { x: f64, v: f64 },
}
