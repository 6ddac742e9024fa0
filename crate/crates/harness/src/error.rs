use thiserror::Error;

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] copkit_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("study failed: {0}")]
    StudyFailed(String),
}

impl HarnessError {
    /// Process exit code: 1 for configuration problems, 2 for study failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::InvalidSpec(_) | HarnessError::Config(_) | HarnessError::Json(_) => 1,
            _ => 2,
        }
    }
}
