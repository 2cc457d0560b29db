use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, indices or configuration values that do not fit together.
    #[error("structural error: {0}")]
    Structure(String),

    /// An operation was handed input violating its documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Iterative numerics failed or produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("degenerate readout: p0 + p1 = {0:e} is below the 1e-9 floor")]
    DegenerateReadout(f64),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
