use std::io;

use thiserror::Error;

/// Errors produced by the panofuse library.
///
/// Variants are split along the CLI exit-code contract: [`Error::exit_code`]
/// maps input and format problems to 2 and consistency problems (dimensions,
/// label ranges, coverage) to 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("window {window_h}x{window_w} does not fit inside image {image_h}x{image_w}")]
    WindowTooLarge { window_h: usize, window_w: usize, image_h: usize, image_w: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u8, num_classes: usize },

    #[error("pixel ({row}, {col}) is not covered by any window")]
    Uncovered { row: usize, col: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("entropy undefined: no mask pixel votes for label {0}")]
    UndefinedEntropy(u8),

    #[error("mIoU undefined: every class has an empty union")]
    UndefinedMiou,
}

impl Error {
    /// Process exit code for this error under the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DimensionMismatch(_) | Error::LabelOutOfRange { .. } | Error::Uncovered { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
