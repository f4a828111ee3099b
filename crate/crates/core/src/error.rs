use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input vectors failed a shape or normalization precondition.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("question {question_id} has {options} options; at most 26 labels are supported")]
    UnsupportedQuestion { question_id: u32, options: usize },

    #[error("split configuration error: {0}")]
    Split(String),

    #[error("non-finite logit in record {record}")]
    NonFiniteLogit { record: String },

    #[error("label tokens collide: labels {first:?} and {second:?} both map to token id {token}")]
    LabelTokenCollision { first: String, second: String, token: u32 },

    #[error("label {0:?} cannot be tokenized by this backend")]
    UnknownLabel(String),

    #[error("prompt for {record} is {length} tokens, exceeding the context length {limit}")]
    ContextOverflow { record: String, length: usize, limit: usize },

    #[error("backend capability missing: {0}")]
    Capability(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown report format {0:?}")]
    UnknownFormat(String),

    #[error("failed to read {path}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
