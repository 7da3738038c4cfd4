use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid adjacency graph: {0}")]
    InvalidGraph(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("location `{0}` has zero variance over the standardization window")]
    ConstantSeries(String),

    #[error("no location has at least {min_nonzero} nonzero observations")]
    AllFiltered { min_nonzero: usize },

    #[error("window of length {len} is too short for lag order {p}")]
    WindowTooShort { len: usize, p: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid model order: {0}")]
    InvalidOrder(String),

    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid lambda grid: {0}")]
    InvalidGrid(String),

    #[error("power iteration did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("every actual value is zero; relative error undefined")]
    AllZeroActuals,

    #[error("insufficient history: need {need} observations, got {got}")]
    InsufficientHistory { need: usize, got: usize },

    #[error("model is not stationary (spectral radius estimate {0:.6})")]
    UnstableModel(f64),

    #[error("could not rescale coefficients into the stable band after {0} bisection steps")]
    FailedToStabilize(usize),

    #[error("interval of {0} minutes does not divide a day evenly")]
    InvalidInterval(u32),

    #[error("no parseable records in input")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model file does not match the supplied adjacency graph")]
    FingerprintMismatch,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable, machine-parseable name of the error variant.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidGraph(_) => "InvalidGraph",
            Error::InvalidSeries(_) => "InvalidSeries",
            Error::ConstantSeries(_) => "ConstantSeries",
            Error::AllFiltered { .. } => "AllFiltered",
            Error::WindowTooShort { .. } => "WindowTooShort",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidOrder(_) => "InvalidOrder",
            Error::InvalidPenalty(_) => "InvalidPenalty",
            Error::InvalidSplit(_) => "InvalidSplit",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::NonConvergence(_) => "NonConvergence",
            Error::AllZeroActuals => "AllZeroActuals",
            Error::InsufficientHistory { .. } => "InsufficientHistory",
            Error::UnstableModel(_) => "UnstableModel",
            Error::FailedToStabilize(_) => "FailedToStabilize",
            Error::InvalidInterval(_) => "InvalidInterval",
            Error::EmptyInput => "EmptyInput",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::FingerprintMismatch => "FingerprintMismatch",
            Error::Io { .. } => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
