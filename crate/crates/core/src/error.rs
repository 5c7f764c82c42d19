use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} did not converge to tolerance {tolerance:e}")]
    NonConvergence { what: &'static str, tolerance: f64 },

    #[error("Cholesky factorization failed after jitter reached {max_jitter:e}")]
    FactorizationFailure { max_jitter: f64 },

    #[error("observation moment matrix is singular (jitter exhausted at {max_jitter:e})")]
    SingularMoments { max_jitter: f64 },

    #[error("observations are already centered")]
    DoubleCentering,

    #[error("observations must be centered before prediction")]
    NotCentered,

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("exhaustive search over {sensors} sensors exceeds the limit of {limit}")]
    InstanceTooLarge { sensors: usize, limit: usize },

    #[error("{}:{line}: {reason}", path.display())]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("footprint references unknown grid ids: {ids:?}")]
    UnresolvedGridId { ids: Vec<i64> },

    #[error("field values are constant; likelihood is degenerate")]
    DegenerateData,

    #[error("need at least {needed} data points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
