use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the simulation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Param { name: &'static str, reason: String },

    #[error("value {value} outside the domain of {what}")]
    Domain { what: &'static str, value: i64 },

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{solver} did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        /// Tail of the per-iteration update or residual history.
        trace: Vec<f64>,
    },

    #[error("singular jacobian at pivot {pivot}")]
    Singular { pivot: usize },

    #[error("no lookup table for {0}")]
    MissingLut(String),

    #[error("lookup table grid point {index} failed: {source}")]
    LutPoint { index: usize, source: Box<Error> },

    #[error("state became non-finite at integration step {step}")]
    NonFinite { step: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("{failed} of {trials} Monte Carlo trials failed")]
    TooManyFailures { failed: usize, trials: usize },

    #[error("layer {layer}, tile {tile}: {source}")]
    Tile {
        layer: usize,
        tile: usize,
        source: Box<Error>,
    },

    #[error("cycle {cycle}: {source}")]
    Cycle { cycle: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Param {
            name,
            reason: reason.into(),
        }
    }

    /// True for solver failures (as opposed to invalid input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonConvergence { .. } | Error::Singular { .. } | Error::NonFinite { .. } => true,
            Error::TooManyFailures { .. } => true,
            Error::LutPoint { source, .. }
            | Error::Tile { source, .. }
            | Error::Cycle { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
