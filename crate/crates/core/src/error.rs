use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the training and scoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {file} at line {line}: {message}")]
    Parse { file: String, line: u64, message: String },

    #[error("unknown patient id '{id}' referenced at line {line}")]
    UnknownPatient { id: String, line: u64 },

    #[error("invalid record for patient '{id}': {message}")]
    InvalidPatient { id: String, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty subset: {0}")]
    EmptySubset(String),

    #[error("covariance factorization failed after jitter escalation (n = {size}, max jitter = {jitter:e})")]
    Factorization { size: usize, jitter: f64 },

    #[error("optimizer produced a non-finite objective after {iterations} iterations")]
    Divergence { iterations: usize },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
