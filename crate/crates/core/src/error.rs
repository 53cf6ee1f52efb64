use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DtanError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DtanError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Self::ShapeMismatch(msg.into())
    }

    /// Whether the failure is a numerical fault rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::Numerical(_) | Self::NonFinite(_))
    }

    /// Whether the failure stems from input data (files, parsing, shapes).
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Self::Parse { .. } | Self::Io(_) | Self::Format(_) | Self::ShapeMismatch(_) | Self::EmptyClass(_)
        )
    }
}

pub type Result<T, E = DtanError> = std::result::Result<T, E>;
