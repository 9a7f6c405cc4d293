use thiserror::Error;

/// Errors produced by the solver, simulator and their parsers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cannot parse `{token}`: {reason}")]
    Parse { token: String, reason: String },

    #[error("invalid service distribution: {0}")]
    InvalidDistribution(String),

    #[error("probability {0} is outside the open interval (0, 1)")]
    InvalidProbability(f64),

    #[error("{name} must be nonnegative, got {value}")]
    NegativeInput { name: &'static str, value: f64 },

    #[error("quadrature reached relative error {achieved:e}, target was {target:e}")]
    Quadrature { target: f64, achieved: f64 },

    #[error("threshold solver did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("{0}")]
    Io(String),
}

impl Error {
    pub(crate) fn parse(token: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            token: token.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
