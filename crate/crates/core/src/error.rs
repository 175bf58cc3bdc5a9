use thiserror::Error;

use crate::formal::SeriesError;
use crate::jets::JetError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not antisymmetric (max violation {0:e})")]
    NotAntisymmetric(f64),
    #[error("unsupported lambda order {order} (maximum {max})")]
    UnsupportedOrder { order: usize, max: usize },
    #[error("arity mismatch: operator takes {expected} arguments, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("jet order {have} insufficient, need {need}")]
    JetOrder { have: usize, need: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}
