//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SkyGpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("expert is at capacity ({capacity} points)")]
    CapacityFull { capacity: usize },

    #[error("operation requires a full expert (holds {held} of {capacity})")]
    NotFull { held: usize, capacity: usize },

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pool is empty")]
    EmptyPool,

    #[error("Lyapunov equation has no positive-definite solution: {0}")]
    LyapunovNoSolution(String),

    #[error("failed to load dataset: {0}")]
    Load(String),
}

pub type Result<T> = std::result::Result<T, SkyGpError>;
