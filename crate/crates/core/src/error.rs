use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The file does not start with the expected magic or has an unknown version.
    #[error("format error: {0}")]
    Format(String),
    /// Header and payload disagree.
    #[error("corrupt file: {0}")]
    Corruption(String),
    #[error("validation error: {0}")]
    Validation(String),
    /// Not enough samples to form the requested estimate.
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Cumulative informativeness decreased along the lattice order.
    #[error("estimator inconsistency: {0}")]
    Inconsistent(String),
    /// Ablated trace was not conditioned on the baseline token sequence.
    #[error("teacher-forcing violation: {0}")]
    TeacherForcing(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code for this error class: 2 for invalid input, 3 for
    /// numerical failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_)
            | Error::Corruption(_)
            | Error::Validation(_)
            | Error::Estimation(_)
            | Error::TeacherForcing(_) => 2,
            Error::Numerical(_) | Error::Inconsistent(_) => 3,
            Error::Io(_) => 4,
        }
    }
}
