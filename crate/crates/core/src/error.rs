use std::io;

use thiserror::Error;

/// Errors raised by the integrators, the coefficient builder and the harness.
#[derive(Debug, Error)]
pub enum EtdError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("solution blew up at step {step} (t = {time}) in stage {stage}")]
    BlowUp {
        step: usize,
        time: f64,
        stage: &'static str,
    },

    #[error("auxiliary problem for column {column} of {matrix} failed: {source}")]
    Builder {
        matrix: &'static str,
        column: usize,
        #[source]
        source: Box<EtdError>,
    },

    #[error("state time mismatch: {left} vs {right}")]
    TimeMismatch { left: f64, right: f64 },

    #[error("missing coefficient matrix {0} for the requested scheme")]
    MissingMatrix(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed cache file: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, EtdError>;

impl EtdError {
    pub fn is_blow_up(&self) -> bool {
        match self {
            EtdError::BlowUp { .. } => true,
            EtdError::Builder { source, .. } => source.is_blow_up(),
            _ => false,
        }
    }
}
