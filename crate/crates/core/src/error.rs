use thiserror::Error;

/// Errors produced by the enhancement library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input")]
    EmptyInput,

    #[error("channel {channel} has {len} samples, expected {expected}")]
    ChannelLengthMismatch {
        channel: usize,
        len: usize,
        expected: usize,
    },

    #[error("input too short: {len} samples, need at least {min}")]
    InputTooShort { len: usize, min: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("channel index {index} out of range for {channels} channels")]
    ChannelOutOfRange { index: usize, channels: usize },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("estimator {0} requires a direction of arrival")]
    MissingDoa(&'static str),

    #[error("source signal is silent")]
    SilentSource,

    #[error("empty pair set")]
    EmptyPairSet,

    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
