use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid qubit state: {0}")]
    InvalidState(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid protocol configuration: {0}")]
    Protocol(String),

    #[error("integration step {step:e} s too coarse: positivity violated by {violation:e}")]
    StepTooCoarse { step: f64, violation: f64 },

    #[error("fit did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Io(_) => 2,
            Error::InvalidParam { .. }
            | Error::InvalidState(_)
            | Error::Schedule(_)
            | Error::Protocol(_) => 3,
            Error::StepTooCoarse { .. } | Error::NonConvergence { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
