use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants are grouped by failure class so callers (in particular the CLI)
/// can map them to coarse categories: I/O, validation, numerical.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid {what}: {why}")]
    Validation { what: String, why: String },

    #[error("length mismatch: {what}")]
    Mismatch { what: String },

    #[error("series too short: need at least {need} observations, got {got}")]
    SeriesTooShort { need: usize, got: usize },

    #[error("degenerate segment: {why}")]
    DegenerateSegment { why: String },

    #[error("state {state} is starved (effective weight {weight:.3e})")]
    StarvedState { state: usize, weight: f64 },

    #[error("all states starved; data cannot support the model — start from a physics-based initialization or check the input series")]
    AllStatesStarved,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn validation(what: impl Into<String>, why: impl Into<String>) -> Self {
        Error::Validation {
            what: what.into(),
            why: why.into(),
        }
    }

    /// Coarse failure class, used by the CLI for exit codes.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_) => ErrorClass::Io,
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Mismatch { .. }
            | Error::SeriesTooShort { .. } => ErrorClass::Validation,
            Error::DegenerateSegment { .. }
            | Error::StarvedState { .. }
            | Error::AllStatesStarved
            | Error::Numerical(_) => ErrorClass::Numerical,
        }
    }
}

/// Failure class for exit-status mapping: I/O = 1, validation = 2, numerical = 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
