use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for `{name}`: expected {expected}, got {got}")]
    Dimension {
        name: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("matrix is not positive definite (leading minor {0})")]
    NotPositiveDefinite(usize),

    #[error("quadratic program is infeasible: {0}")]
    Infeasible(String),

    #[error("iteration limit of {0} reached")]
    IterationLimit(usize),

    #[error("normalization rule required: the stationarity objective is homogeneous in (theta, lambda)")]
    MissingNormalization,

    #[error("all feature columns of the stationarity Jacobian vanish")]
    DegenerateFeatures,

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(name: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            name,
            expected,
            got,
        })
    }
}
