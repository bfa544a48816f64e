use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("kernel has zero mass; center of mass and covariance are undefined")]
    ZeroMass,

    #[error("degenerate kernel: all mass removed by clamping")]
    DegenerateKernel,

    #[error("unsupported scale x{0}; the GAN operates at x2")]
    UnsupportedScale(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("insufficient data: need at least {needed} pairs, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("non-finite loss encountered: {0}")]
    NonFinite(String),

    #[error("archive error in {path}: {reason}")]
    Archive { path: PathBuf, reason: String },

    #[error("image error in {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("SR adapter failed: {reason}\n--- stdout ---\n{stdout}\n--- stderr ---\n{stderr}")]
    Adapter {
        reason: String,
        stdout: String,
        stderr: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn sizing(msg: impl Into<String>) -> Self {
        Error::Sizing(msg.into())
    }
}
