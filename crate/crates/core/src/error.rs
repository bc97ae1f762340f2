use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("unknown parameter `{name}` for scenario `{scenario}`")]
    UnknownParam { scenario: String, name: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite force on agent {agent} at step {step}; the time step is likely too coarse")]
    NonFiniteForce { agent: u32, step: u64 },

    #[error("threshold not bracketed: curve must span y > {high} and y < {low}")]
    NotBracketed { high: f64, low: f64 },

    #[error("no breakpoint detected: a single line fits the data")]
    NoBreakpoint,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("power-law fit requires strictly positive data")]
    NonPositiveData,

    #[error("curves have no overlapping support after rescaling")]
    NoOverlap,

    #[error("planner problem infeasible: attacker {attacker} log-survival exceeds the cap by {violation:.3e}")]
    Infeasible { attacker: usize, violation: f64 },

    #[error("sweep aborted: {failed} of {total} runs failed (first failure: {first})")]
    SweepAborted {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("record file {path}: {reason}")]
    Schema { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParam { .. }
                | Error::UnknownParam { .. }
                | Error::Config(_)
                | Error::Toml(_)
                | Error::Schema { .. }
        )
    }
}
