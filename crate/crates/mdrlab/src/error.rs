//! Error type shared across the crate.
//!
//! Every fallible operation returns [`Result`]. Numerical failures carry
//! enough context (op name, offending values) to locate the bad node without
//! a debugger; anything surfaced during training is wrapped in
//! [`Error::TrainAbort`] so the caller can record a partial run.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value produced by {context}")]
    NonFinite { context: String },

    #[error("tape error: {0}")]
    Tape(String),

    #[error("mode violation: {0}")]
    ModeViolation(String),

    #[error("invalid action {action} for environment with {count} actions")]
    InvalidAction { action: usize, count: usize },

    #[error("environment error: {0}")]
    Env(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error("training aborted at step {step}, {phase} update {update}: {source}")]
    TrainAbort {
        step: usize,
        phase: &'static str,
        update: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap an error that occurred inside a training update so the run
    /// record can point at the exact step and phase.
    pub fn in_training(self, step: usize, phase: &'static str, update: usize) -> Error {
        Error::TrainAbort {
            step,
            phase,
            update,
            source: Box::new(self),
        }
    }
}
