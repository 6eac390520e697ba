use thiserror::Error;

use crate::grid_ode::TimeGrid;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical blow-up (non-finite value) at node {node}")]
    NumericalBlowup { node: usize },

    #[error("grid mismatch: expected T = {}, N = {}, found T = {}, N = {}",
        expected.horizon(), expected.steps(), found.horizon(), found.steps())]
    GridMismatch { expected: TimeGrid, found: TimeGrid },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid scenario law: {0}")]
    InvalidLaw(String),

    #[error("line {line}, key `{key}`: {message}")]
    Parse {
        key: String,
        line: usize,
        message: String,
    },

    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),

    #[error("deviation policy reads the moderator's scenario; deviations may only use (xi, W)")]
    ScenarioDependentDeviation,
}
