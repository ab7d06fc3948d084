use alloc::string::String;

use thiserror::Error;

/// Errors raised by validation anywhere in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("task {task}: {reason}")]
    InvalidTask { task: String, reason: String },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn check_confidence(confidence: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&confidence) {
        Ok(confidence)
    } else {
        Err(Error::ConfidenceOutOfRange(confidence))
    }
}
