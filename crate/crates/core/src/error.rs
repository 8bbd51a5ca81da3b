use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid alias map: {0}")]
    InvalidAliasMap(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no negative candidates: every drug is excluded")]
    NoNegativeCandidates,

    #[error("no trainable samples in corpus")]
    NoTrainingSamples,

    #[error("non-finite loss {loss} at step {step}; learning rate {lr} is likely too high")]
    NonFiniteLoss { loss: f64, step: u64, lr: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("model file version {found} is not supported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("model file checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("patient {patient_id}: {reason}")]
    Patient { patient_id: String, reason: String },

    #[error("empty gold set")]
    EmptyGoldSet,

    #[error("unknown name {0:?}")]
    UnknownName(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
