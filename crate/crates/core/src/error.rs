use alloc::string::String;

use crate::tensor::Shape4;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: Shape4,
        got: Shape4,
    },
    #[error("shape mismatch in {op}: {detail}")]
    Length { op: &'static str, detail: String },
    #[error("degenerate batch in {op}: train-mode batch norm needs at least 2 values per channel, got {count}")]
    DegenerateBatch { op: &'static str, count: usize },
    #[error("invalid mask value {value} at index {index}")]
    InvalidMask { value: f64, index: usize },
    #[error("unknown ground-truth label {label} at pixel {index}")]
    UnknownLabel { label: u8, index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("training diverged: non-finite {phase} loss at epoch {epoch}, batch {batch}")]
    Divergence {
        phase: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: Shape4, got: Shape4) -> Self {
        Error::Shape { op, expected, got }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
