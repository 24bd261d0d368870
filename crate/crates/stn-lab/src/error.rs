use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("singular matrix (|det| = {det:e})")]
    SingularMatrix { det: f64 },

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("undetermined angle: a11+a22 and a21-a12 are both zero")]
    UndeterminedAngle,

    #[error("non-positive determinant {det}: transform is orientation-reversing or degenerate")]
    NonPositiveDeterminant { det: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("architecture error: {0}")]
    Arch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn arch(msg: impl Into<String>) -> Self {
        Error::Arch(msg.into())
    }
}
