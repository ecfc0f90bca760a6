use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{which} row {row} has zero variance")]
    ZeroVariance { which: &'static str, row: usize },

    #[error("observation {0} has zero ensemble variance")]
    ZeroObservationVariance(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("numerical blow-up: {0}")]
    Divergence(String),

    #[error("underdetermined regression: {samples} samples for {unknowns} unknowns")]
    Underdetermined { samples: usize, unknowns: usize },

    #[error("regression for pair (i={i}, j={j}) failed: {source}")]
    Regression {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifact {}: {reason}", path.display())]
    MissingArtifact { path: PathBuf, reason: String },

    #[error("malformed file {}: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by the caller.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroVariance { .. }
                | Error::ZeroObservationVariance(_)
                | Error::Singular(_)
                | Error::Divergence(_)
                | Error::Underdetermined { .. }
                | Error::Regression { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
