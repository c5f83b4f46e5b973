use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("degenerate input to {op}: {detail}")]
    DegenerateInput { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("unknown transform `{0}`")]
    UnknownTransform(String),

    #[error("magnitude {magnitude} outside [{min}, {max}] for {op}")]
    MagnitudeOutOfRange {
        op: &'static str,
        magnitude: f32,
        min: f32,
        max: f32,
    },

    #[error("malformed policy table at line {line}: {detail}")]
    PolicyFormat { line: usize, detail: String },

    #[error("bad {format} file: {detail}")]
    Format { format: &'static str, detail: String },

    #[error("truncated {format} file: needed {needed} more bytes at offset {offset}")]
    Truncated {
        format: &'static str,
        offset: usize,
        needed: usize,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidArgument(detail.into())
    }
}
