use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulation and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spin register: {0}")]
    InvalidRegister(String),

    #[error("invalid spin pair ({j}, {k}): {reason}")]
    InvalidPair { j: usize, k: usize, reason: String },

    #[error("operator check failed: {0}")]
    OperatorKind(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("trivial spin system: {0}")]
    TrivialSystem(String),

    #[error("invalid spin system: {0}")]
    InvalidSystem(String),

    #[error("hamiltonian is not secular: max |[H, Iz]| = {residual:e}")]
    NotSecular { residual: f64 },

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("grid too large: {estimate_bytes} bytes estimated, budget {budget_bytes} bytes")]
    GridTooLarge { estimate_bytes: u64, budget_bytes: u64 },

    #[error("unsupported sampling: {0}")]
    UnsupportedSampling(String),

    #[error("invalid decoherence parameters: {0}")]
    InvalidDecoherence(String),

    #[error("fit domain error: {0}")]
    FitDomain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
