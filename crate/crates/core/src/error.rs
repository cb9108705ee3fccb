use thiserror::Error;

use crate::world::ContextViolation;

pub type Result<T, E = SncError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SncError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("no valid context found after {attempts} regeneration attempts")]
    GenerationExhausted { attempts: usize },

    #[error("invalid context: {0:?}")]
    InvalidContext(Vec<ContextViolation>),

    #[error("column {0} has a zero normalizer")]
    DegenerateColumn(usize),

    #[error("cannot sample from an all-zero distribution ({0})")]
    DegenerateDistribution(String),

    #[error("distribution does not sum to one (sum = {0})")]
    NotNormalized(f64),

    #[error("zero vector where a nonzero one is required")]
    ZeroVector,

    #[error("trace has no post-burn-in states")]
    EmptyTrace,

    #[error("exhaustive enumeration infeasible: {0}")]
    TooLarge(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("threshold not reached with up to {0} symbols")]
    NotReached(usize),

    #[error("a trained linear model is required for this likelihood")]
    MissingModel,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
