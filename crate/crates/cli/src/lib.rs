//! Text formats and command drivers behind the `hypflow` binary.

pub mod commands;
pub mod phm;
pub mod steplog;
pub mod values;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no `e` record for edge ({0}, {1})")]
    MissingEdge(usize, usize),
    #[error("more than one `e` record for edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("`e` record for ({0}, {1}), which is not an edge of the triangulation")]
    UnknownEdge(usize, usize),
    #[error(transparent)]
    Surface(#[from] hypflow::Error),
}

impl FormatError {
    pub(crate) fn parse(line: usize, msg: String) -> Self {
        FormatError::Parse { line, msg }
    }
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    /// Converged, or the input is valid.
    Ok = 0,
    /// Not converged, or invalid input.
    Invalid = 1,
    /// Integrator or solver failure.
    Failure = 2,
    /// Target outside the convexity regime without `--force`.
    Refused = 3,
}
