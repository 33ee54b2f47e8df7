use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-positive depth {value} at pixel ({i}, {j})")]
    NonPositiveDepth { i: usize, j: usize, value: f64 },
    #[error("non-finite value at pixel ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("ray through pixel ({i}, {j}) misses the surface")]
    RayMiss { i: usize, j: usize },
    #[error("malformed {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },
    #[error("non-finite loss at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
