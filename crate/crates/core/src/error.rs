use std::path::PathBuf;

use thiserror::Error;

use crate::dataset_io::{Domain, Label};

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: not a RIFF/WAVE file ({field})")]
    NotWav { path: PathBuf, field: &'static str },

    #[error("{path}: unsupported WAV format code {code} (field `audio_format`, only PCM=1)")]
    UnsupportedFormat { path: PathBuf, code: u16 },

    #[error("{path}: {channels} channels (field `num_channels`, only mono is supported)")]
    MultiChannel { path: PathBuf, channels: u16 },

    #[error("{path}: {bits}-bit samples (field `bits_per_sample`, only 16-bit is supported)")]
    UnsupportedBitDepth { path: PathBuf, bits: u16 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("invalid band edges ({lo} Hz, {hi} Hz) at fs {fs} Hz")]
    InvalidBand { lo: f64, hi: f64, fs: f64 },

    #[error("state {0} absent from training labels")]
    MissingState(&'static str),

    #[error("record {record}: no S1 onset found")]
    NoS1Onset { record: String },

    #[error("decoding needs at least {needed} frames, got {got}")]
    DecodeTooShort { got: usize, needed: usize },

    #[error("empty sampling cell ({domain}, {class})")]
    EmptyCell { domain: Domain, class: Label },

    #[error("class {class} has {have} segments, {need} requested")]
    InsufficientClass { class: Label, need: usize, have: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value in layer `{layer}`")]
    NonFinite { layer: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid k={k} for {n} references (k must be odd and 1 <= k <= n)")]
    InvalidK { k: usize, n: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config: {0}")]
    Config(String),

    #[error("missing checkpoint for branch {branch}: {path}")]
    MissingCheckpoint { branch: Domain, path: PathBuf },

    #[error("{path}: bad cache file: {msg}")]
    Cache { path: PathBuf, msg: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidK { .. } => 1,
            Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => 3,
            _ => 2,
        }
    }
}
