use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("index {index:?} out of bounds for shape {shape:?}")]
    OutOfBounds {
        index: [usize; 4],
        shape: [usize; 4],
    },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("inconsistent activations: {0}")]
    Consistency(String),

    #[error("missing weights: {0}")]
    MissingWeights(String),

    #[error("training diverged at iteration {iteration}: loss {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("infeasible augmentation: {0}")]
    InfeasibleAugmentation(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("projection error: {0}")]
    Projection(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn mismatch(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
