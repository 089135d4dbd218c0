use thiserror::Error;

use crate::verify::PartialReconstruction;

pub type Result<T, E = CdiiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CdiiError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("inclusions overlap or touch the boundary: {0}")]
    Overlap(String),
    #[error("domain outside the inclusions is disconnected: {0}")]
    Disconnected(String),
    #[error("component has no nodes")]
    EmptyComponent,
    #[error("linear system is singular: {0}")]
    SingularSystem(String),
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("extension mode does not match the geometry: {0}")]
    ModeMismatch(String),
    #[error("inconsistent geometry: {0}")]
    InconsistentGeometry(String),
    #[error("level {0} lies outside the range of the field")]
    EmptyLevelSet(f64),
    #[error("degenerate field: weighted gradient integral vanishes")]
    DegenerateField,
    #[error("trial function differs from the reference on the boundary by {0:.3e}")]
    TraceMismatch(f64),
    #[error("no boundary seeds with data strictly between {alpha} and {beta}")]
    NoSeed { alpha: f64, beta: f64 },
    #[error("{stalled} of {total} traced curves stopped before reaching the boundary")]
    Stall {
        stalled: usize,
        total: usize,
        partial: Box<PartialReconstruction>,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
