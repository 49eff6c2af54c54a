use thiserror::Error;

/// Errors produced anywhere in the adaptation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("{stage} diverged at step {step}")]
    Diverged { stage: &'static str, step: usize },

    #[error("class {0} has sampling mass but no fitted prototype")]
    MissingClass(usize),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("source data has been released and can no longer be read")]
    SourceReleased,

    #[error("source node {0} failed")]
    NodeFailed(usize),

    #[error("all sources failed; nothing to ensemble")]
    NoSurvivingSources,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
