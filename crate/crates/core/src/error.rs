use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error type returned by a user-supplied policy callback.
pub type CallbackError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {message}")]
    InvalidConfig { field: &'static str, message: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("no live episode; call reset first")]
    NoEpisode,

    #[error("episode already finished; call reset before stepping again")]
    EpisodeFinished,

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checksum mismatch for {block}: stored {stored}, computed {computed}")]
    ChecksumMismatch {
        block: String,
        stored: String,
        computed: String,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("bad dataset magic {0:?}")]
    BadMagic([u8; 8]),

    #[error("dataset truncated inside record {record_index}")]
    Truncated { record_index: u64 },

    #[error("dataset layout mismatch: {0}")]
    Layout(String),

    #[error("shell sampler exceeded {attempts} attempts for ({eps_low}, {eps_high}]")]
    SamplingExhausted {
        eps_low: f64,
        eps_high: f64,
        attempts: u64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("policy callback failed at state {state:?}: {source}")]
    Callback {
        state: Vec<f64>,
        #[source]
        source: CallbackError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn ensure_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}

pub(crate) fn ensure_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
