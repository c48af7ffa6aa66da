use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quantizer: {0}")]
    InvalidQuantizer(String),

    #[error("code {code} outside 0..={max}")]
    InvalidCode { code: u64, max: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("requested rank {requested} exceeds min(N, T) = {max}")]
    RankTooLarge { requested: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Negative regularizer outside the convex region. `critical` is
    /// lambda_min(Phi Phi^T) / T, the largest admissible |gamma|.
    #[error("objective is non-convex for gamma = {gamma}; critical |gamma| = {critical}")]
    NonConvex { gamma: f64, critical: f64 },

    #[error("reference norm is zero")]
    UndefinedReference,

    #[error("empty input")]
    EmptyInput,

    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("cell (bits = {bits}, trial = {trial}): {source}")]
    Cell {
        bits: u32,
        trial: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
