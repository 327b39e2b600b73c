use std::path::PathBuf;

/// Pipeline failures, grouped by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Bad or inconsistent input at a stage boundary.
    #[error("{stage}: {message}")]
    Validation { stage: &'static str, message: String },
    #[error("{stage}: provider failure: {message}")]
    Provider { stage: &'static str, message: String },
    #[error("train: diverged at step {step} (loss {loss}); parameters saved to {}", snapshot.display())]
    Diverged { step: u64, loss: f64, snapshot: PathBuf },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Io { .. } | PipelineError::Validation { .. } => 2,
            PipelineError::Provider { .. } => 3,
            PipelineError::Diverged { .. } => 4,
        }
    }

    pub(crate) fn validation(stage: &'static str, message: impl ToString) -> Self {
        PipelineError::Validation {
            stage,
            message: message.to_string(),
        }
    }

    pub(crate) fn provider(stage: &'static str, message: impl ToString) -> Self {
        PipelineError::Provider {
            stage,
            message: message.to_string(),
        }
    }
}
