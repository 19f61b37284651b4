//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite result in {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("backward already ran on this tape")]
    BackwardTwice,

    #[error("tensor is not registered on the active tape")]
    NotOnTape,

    #[error("tensor belongs to a different tape")]
    WrongTape,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} outside schedule domain [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("numeric failure at step {step} (t={t}): {message}")]
    Numeric { step: u64, t: f64, message: String },

    #[error("discriminator step is illegal in phase1 (encoder is frozen)")]
    DiscriminatorInPhase1,

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("bad magic in checkpoint (expected \"SADM\")")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),

    #[error("checkpoint is corrupt: {0}")]
    CorruptCheckpoint(String),

    #[error("run directory is locked by another writer: {0}")]
    RunDirLocked(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit code classes for the CLI: 1 = usage/config, 2 = numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::Numeric { .. } => 2,
            _ => 1,
        }
    }
}
