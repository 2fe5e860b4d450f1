use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not an SFV1 file")]
    BadMagic,

    #[error("unexpected end of stream")]
    UnexpectedEnd,

    #[error("stage out of range: record {record} has stage {stage} but dataset has {num_stages} stages")]
    StageOutOfRange {
        record: usize,
        stage: u32,
        num_stages: u32,
    },

    #[error("corrupt feature: {0}")]
    CorruptFeature(String),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps the error with a context string, e.g. the current step.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 for data problems, 3 for numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
