use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav: {path}: {message}")]
    Wav { path: PathBuf, message: String },
    #[error("unsupported sample rate: {0} Hz (expected 16000)")]
    UnsupportedSampleRate(u32),
    #[error("waveform too short: {len} samples, need at least {min}")]
    WaveformTooShort { len: usize, min: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("degenerate stats: std {0:e} below floor")]
    DegenerateStats(f64),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("checkpoint: unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint: bounds violation: {0}")]
    BoundsViolation(String),
    #[error("checkpoint: fingerprint mismatch (file {stored}, config {expected})")]
    FingerprintMismatch { stored: String, expected: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
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

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Wav { .. } => "wav",
            Error::UnsupportedSampleRate(_) => "sample_rate",
            Error::WaveformTooShort { .. } => "too_short",
            Error::EmptyDataset => "empty_dataset",
            Error::DegenerateStats(_) => "degenerate_stats",
            Error::ShapeMismatch { .. } => "shape",
            Error::InvalidInput(_) => "invalid_input",
            Error::NonFinite(_) => "non_finite",
            Error::Manifest(_) => "manifest",
            Error::Config(_) => "config",
            Error::BadMagic(_) => "bad_magic",
            Error::UnsupportedVersion(_) => "version",
            Error::BoundsViolation(_) => "bounds",
            Error::FingerprintMismatch { .. } => "fingerprint",
            Error::Checkpoint(_) => "checkpoint",
            Error::Json(_) => "json",
        }
    }
}
