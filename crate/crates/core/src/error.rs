use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnsError {
    #[error("degree {requested} exceeds the configured maximum {max}")]
    DegreeOverflow { requested: usize, max: usize },

    #[error("invalid truncation: {0}")]
    InvalidTruncation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("degree l = 0 carries no divergence-free tangent field")]
    ZeroDegree,

    #[error("mode (l={l}, m={m}) out of range for truncation L={l_max}")]
    ModeOutOfRange { l: usize, m: i64, l_max: usize },

    #[error("negative power of a singular operator: l=1 coefficient {magnitude:e} is not zero")]
    NonInvertible { magnitude: f64 },

    #[error("degenerate drift nu*sigma + alpha = 0 for retained degree l={l}")]
    DegenerateDrift { l: usize },

    #[error("time {time} is not a multiple of the step {dt}")]
    Misaligned { time: f64, dt: f64 },

    #[error("noise path queried at step {step}, before its anchor step {anchor}")]
    BeforeAnchor { step: i64, anchor: i64 },

    #[error("blow-up at t={t}: |v| = {norm:e} after {last_good_step} good steps")]
    BlowUp {
        t: f64,
        norm: f64,
        last_good_step: usize,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid parameter {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("malformed coefficient file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = SnsError> = std::result::Result<T, E>;

impl SnsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SnsError::Io {
            path: path.into(),
            source,
        }
    }
}
