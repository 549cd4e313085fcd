use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot romanize {character:?} in {word:?}")]
    Unromanizable { word: String, character: char },

    #[error("empty word")]
    EmptyWord,

    #[error("word {word:?}: {source}")]
    BadWord {
        word: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid unit {0:?}")]
    InvalidUnit(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("target {target} out of range for {classes} classes at frame {frame}")]
    TargetOutOfRange {
        frame: usize,
        target: usize,
        classes: usize,
    },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter {0:?} has no gradient")]
    MissingGradient(String),

    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),

    #[error("duplicate parameter {0:?}")]
    DuplicateParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("checkpoint checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("stream: {0}")]
    Stream(String),

    #[error("prototype separation infeasible after {attempts} resamples; increase feature_dim (currently {feature_dim})")]
    InfeasibleSeparation { attempts: usize, feature_dim: usize },

    #[error("inventory mismatch: model {model}, corpus {corpus}")]
    InventoryMismatch { model: String, corpus: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures caused by bad data or files rather than bad code paths.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::Format(_)
                | Error::Checksum { .. }
                | Error::Version { .. }
                | Error::Unromanizable { .. }
                | Error::BadWord { .. }
                | Error::EmptyWord
                | Error::InvalidUnit(_)
                | Error::InventoryMismatch { .. }
                | Error::MissingPrerequisite(_)
        )
    }
}
