use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("node {node}: {msg}")]
    Graph { node: usize, msg: String },

    #[error("model format error: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn graph(node: usize, msg: impl Into<String>) -> Self {
        Error::Graph {
            node,
            msg: msg.into(),
        }
    }
}
