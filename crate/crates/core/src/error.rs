use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{n_sites} sites exceeds the configured limit of {limit}")]
    Resource { n_sites: usize, limit: usize },

    #[error("symmetry check failed: {0}")]
    Symmetry(String),

    #[error("solver error in {context}: {message}")]
    Solver { context: String, message: String },

    #[error("target (E={energy}, M={magnetization}) is infeasible: {bounds}")]
    Infeasible {
        energy: f64,
        magnetization: f64,
        bounds: String,
    },

    #[error("no multiplet satisfies {0}")]
    NoMultiplet(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cache file {path}: {message}")]
    Cache { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn solver(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Solver {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 1 for validation problems, 2 for solver and resource failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. }
            | Error::Config(_)
            | Error::NoMultiplet(_) => 1,
            Error::Resource { .. }
            | Error::Symmetry(_)
            | Error::Solver { .. }
            | Error::Infeasible { .. }
            | Error::Cache { .. }
            | Error::Io(_) => 2,
        }
    }
}
