use thiserror::Error;

pub type Result<T, E = GlamError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GlamError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{what} {value} out of range (limit {limit})")]
    Range { what: &'static str, value: usize, limit: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("planning error: {0}")]
    Plan(String),
    #[error("data: {0}")]
    Data(String),
    #[error("eval: {0}")]
    Eval(String),
    #[error("training: {0}")]
    Train(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GlamError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }
}
