use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at coordinate {index} ({context})")]
    NonFinite { context: &'static str, index: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty response")]
    EmptyResponse,

    #[error("empty prompt: at least one context token is required")]
    EmptyPrompt,

    #[error("sequence of length {len} exceeds the context window of {max}")]
    ContextTooLong { len: usize, max: usize },

    #[error("token id {token} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("character {0:?} is not in the model alphabet")]
    UnknownCharacter(char),

    #[error("the forget batch is empty")]
    EmptyForgetSet,

    #[error("the retain batch is empty but the retain weight is {lambda}")]
    EmptyRetainSet { lambda: f64 },

    #[error("forget targets are missing or do not match the forget batch")]
    MissingForgetTargets,

    #[error("inverse temperature must be positive, got {0}")]
    InvalidBeta(f64),

    #[error("non-positive curvature {value} at coordinate {index}; add damping")]
    NonPositiveCurvature { index: usize, value: f64 },

    #[error("Hessian is singular; use a positive damping")]
    SingularHessian,

    #[error("the retain subproblem is rank deficient")]
    RankDeficient,

    #[error("starting point is not a minimizer (gradient norm {0:e})")]
    NotAMinimizer(f64),

    #[error("sample is empty")]
    EmptySample,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
