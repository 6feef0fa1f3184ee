use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("matrix is numerically singular: {0}")]
    Singular(String),

    #[error("rotated regressor {row} has zero variance")]
    DegenerateRow { row: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("coordinate descent did not converge after {sweeps} sweeps (max change {max_change:e})")]
    NonConvergence { sweeps: usize, max_change: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("variable {index} has zero initial price")]
    ZeroInitialPrice { index: usize },

    #[error("sample aborted after {consecutive} consecutive I(1) screening rejections (last seed {last_seed})")]
    RejectionCap { consecutive: usize, last_seed: u64 },

    #[error("run with seed {seed} failed: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
