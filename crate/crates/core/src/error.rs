use thiserror::Error;

use crate::shot::ShotParam;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parameter {param} is not variable for preset {preset}")]
    MaskedParameter { preset: String, param: ShotParam },

    #[error("distance to actor reached {rho} m at t = {t} s")]
    CollapsedDistance { t: f64, rho: f64 },

    #[error("descriptor column `{0}` is constant")]
    ConstantColumn(String),

    #[error("dimension {0} has no spread (max <= min)")]
    ConstantDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("covariance block over {0:?} is singular")]
    SingularBlock(Vec<usize>),

    #[error("no perceptual unit for {param} on preset {preset}")]
    MissingUnit { preset: String, param: ShotParam },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("{0}")]
    Empty(String),

    /// Carries the cause in its message, so it reports no separate source.
    #[error("{path}: {cause}")]
    File { path: String, cause: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Wraps the error with the file it came from.
    pub fn in_file(self, path: impl AsRef<std::path::Path>) -> Self {
        Error::File {
            path: path.as_ref().display().to_string(),
            cause: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
