use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph is disconnected: {0}")]
    DisconnectedGraph(String),

    #[error("invalid topology parameter: {0}")]
    InvalidTopologyParameter(String),

    #[error("symmetric eigensolver did not converge")]
    EigenSolverFailure,

    #[error("parameter out of range: {name} = {value} (expected {expected})")]
    ParameterOutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("Cholesky factorization failed; covariance estimate is not positive semidefinite")]
    FactorizationFailure,

    #[error("Banach-Picard iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("consensus loss needs at least two nodes")]
    SingleNode,

    #[error("fixed point has zero norm; normalized distance is undefined")]
    ZeroFixedPoint,

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn out_of_range(name: &'static str, value: f64, expected: &'static str) -> Self {
        Error::ParameterOutOfRange {
            name,
            value,
            expected,
        }
    }

    /// True for errors caused by bad user input (config, flags, files) rather
    /// than a numerical failure during a run.
    pub fn is_usage_error(&self) -> bool {
        matches!(
            self,
            Error::ConfigInvalid(_)
                | Error::Parse { .. }
                | Error::InvalidTopologyParameter(_)
                | Error::DisconnectedGraph(_)
                | Error::ParameterOutOfRange { .. }
                | Error::InvalidDimension(_)
        )
    }
}
