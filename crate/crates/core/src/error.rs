use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),

    #[error("time span {span} is not a whole number of steps of size {step}")]
    GridAlignment { span: f64, step: f64 },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("malformed hierarchy: {0}")]
    Structure(String),

    #[error("level {level} has {count} samples, at least 2 are needed for a variance estimate")]
    InsufficientSamples { level: usize, count: usize },

    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),

    #[error(
        "tolerance {epsilon} not met at the level cap {max_level}: |finest correction| = {finest_correction:.3e}, sizes = {sizes:?}"
    )]
    ToleranceNotMet {
        epsilon: f64,
        max_level: usize,
        finest_correction: f64,
        sizes: Vec<usize>,
    },

    #[error("budget too small: level {level} would receive zero samples")]
    BudgetTooSmall { level: usize },

    #[error("value {0} lies outside [0, 1]")]
    Domain(f64),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: u64,
        message: String,
    },

    #[error("{0}: no rows")]
    EmptyInput(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status: 2 for bad configuration or input files, 3 for
    /// failures inside the numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::EmptyInput(_)
            | Error::Io { .. }
            | Error::InvalidArgument(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
