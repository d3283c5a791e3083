use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("corrupt WAV header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sample rate {found} Hz, expected {expected} Hz")]
    SampleRate { expected: u32, found: u32 },

    #[error("signal has {len} samples, at least {min} required")]
    SignalTooShort { len: usize, min: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),

    #[error("signal is silent (rms {0:e})")]
    SilentSignal(f64),

    #[error("reference signal is silent")]
    SilentReference,

    #[error("length mismatch: estimate has {est} samples, reference has {reference}")]
    LengthMismatch { est: usize, reference: usize },

    #[error("corpus contains no usable speakers")]
    EmptyCorpus,

    #[error("speaker {0} has no gender entry")]
    MissingGender(String),

    #[error("need at least 2 speakers, corpus has {0}")]
    InsufficientSpeakers(usize),

    #[error("conditioning does not match network mode {0}")]
    ConditioningMismatch(&'static str),

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("record {0} has no extracted waveform")]
    MissingExtraction(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Short stable identifier for machine-readable error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotFound(_) => "NotFound",
            Error::UnsupportedFormat { .. } => "UnsupportedFormat",
            Error::CorruptHeader { .. } => "CorruptHeader",
            Error::Io { .. } => "IoError",
            Error::SampleRate { .. } => "UnsupportedSampleRate",
            Error::SignalTooShort { .. } => "SignalTooShort",
            Error::EmptyInput => "EmptyInput",
            Error::ShapeMismatch(..) => "ShapeMismatch",
            Error::SilentSignal(_) => "SilentSignal",
            Error::SilentReference => "SilentReference",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::MissingGender(_) => "MissingGender",
            Error::InsufficientSpeakers(_) => "InsufficientSpeakers",
            Error::ConditioningMismatch(_) => "ConditioningMismatch",
            Error::NonFiniteGradient(_) => "NonFiniteGradient",
            Error::Diverged { .. } => "DivergedError",
            Error::Data(_) => "DataError",
            Error::MissingExtraction(_) => "MissingExtraction",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Checkpoint(_) => "CheckpointError",
            Error::Json { .. } => "JsonError",
        }
    }
}

pub(crate) fn check_same_shape<A, B>(a: &ndarray::Array2<A>, b: &ndarray::Array2<B>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    Ok(())
}
