use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the mapping engine and its tooling.
#[derive(Debug, Error)]
pub enum Error {
    /// Covariance could not be factorized even after regularization.
    #[error("component covariance is singular after regularization")]
    SingularComponent,

    /// Component has fewer than two points, so its sample covariance is undefined.
    #[error("component has weight {0} < 2; its covariance is undefined")]
    ImmatureComponent(f64),

    #[error("map contains no components")]
    EmptyMap,

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("invalid depth {0} (must be > 0)")]
    InvalidDepth(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("export error: {0}")]
    Export(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
