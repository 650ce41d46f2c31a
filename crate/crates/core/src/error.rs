use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape error in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate observation: normalizer {normalizer:e} for observed class {observed}")]
    DegenerateObservation { observed: usize, normalizer: f64 },

    #[error("label_target mode requires a target class")]
    MissingTarget,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn format(offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Json(_) => 2,
            Error::Divergence { .. } => 4,
            Error::Format { .. } | Error::Io(_) => 3,
            _ => 3,
        }
    }
}
