use thiserror::Error;

/// Errors produced by the optimization engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing or out of range.
    #[error("invalid configuration at `{field}`: {message}")]
    Config { field: String, message: String },

    /// A template placeholder could not be bound.
    #[error("template `{template}`: {message}")]
    Template { template: String, message: String },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("backend `{endpoint}` failed{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Backend {
        endpoint: String,
        status: Option<u16>,
        message: String,
    },

    #[error("generation failed: {0}")]
    Generation(String),

    /// The generator produced no usable candidates.
    #[error("generator produced no candidates")]
    EmptyGeneration,

    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error("scoring failed{}: {message}", index.map(|i| format!(" at candidate {i}")).unwrap_or_default())]
    Scoring {
        index: Option<usize>,
        message: String,
    },

    /// A pipeline stage aborted.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("solve failed: {0}")]
    Solve(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn backend(endpoint: impl Into<String>, status: Option<u16>, message: impl Into<String>) -> Self {
        Error::Backend {
            endpoint: endpoint.into(),
            status,
            message: message.into(),
        }
    }

    pub fn scoring(index: Option<usize>, message: impl Into<String>) -> Self {
        Error::Scoring {
            index,
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
