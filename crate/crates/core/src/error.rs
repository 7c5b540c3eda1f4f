use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scale: {0}")]
    InvalidScale(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported ball: {0}")]
    UnsupportedBall(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// An intermediate object became empty or lost all mass.
    #[error("degenerate input at stage `{stage}`: {detail}")]
    Degenerate {
        stage: String,
        detail: String,
        trace: Option<String>,
    },

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn degenerate(stage: &str, detail: impl Into<String>) -> Self {
        Error::Degenerate {
            stage: stage.to_string(),
            detail: detail.into(),
            trace: None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
