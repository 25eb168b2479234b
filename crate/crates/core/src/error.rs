use thiserror::Error;

use crate::structures::SpaceKind;

/// Errors raised by the structure-learning engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("atom {atom} does not belong to a {space:?} space")]
    AtomMismatch { atom: String, space: SpaceKind },

    #[error("answer type mismatch: {0}")]
    AnswerMismatch(String),

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no structure in the committee agrees with the feedback")]
    EmptyVersionSpace,

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("ill-conditioned system (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("parameter out of range: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
