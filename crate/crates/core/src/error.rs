use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate contour: {0}")]
    DegenerateContour(String),

    #[error("frame mismatch: {left_width}x{left_height} vs {right_width}x{right_height}")]
    FrameMismatch {
        left_width: u32,
        left_height: u32,
        right_width: u32,
        right_height: u32,
    },

    #[error("mask is empty")]
    EmptyMask,

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),

    #[error("no reference vertebra (C2 or S1) found among instance detections")]
    NoReferenceFound,

    #[error("invalid matching threshold {0}; expected a value in (0, 1]")]
    InvalidThreshold(f64),

    #[error("invalid spine spec: {0}")]
    InvalidSpec(String),

    #[error("invalid corruption: {0}")]
    InvalidCorruption(String),

    #[error("unknown vertebra label {0:?}")]
    UnknownLabel(String),

    #[error("contour file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
