use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample: {0}")]
    EmptySample(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("reference plane mismatch: expected {expected}, found {found}")]
    PlaneMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("branch synchronization violated: totals differ by {delta_s} s (tolerance {tolerance_s} s)")]
    Synchronization { delta_s: f64, tolerance_s: f64 },

    #[error("incomplete run: {0}")]
    IncompleteRun(String),

    #[error("blinding violation: refusing to write {quantity} derived from quantum data")]
    BlindingViolation { quantity: &'static str },

    #[error("parse error in {path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
