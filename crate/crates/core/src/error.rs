use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid action id {0} (expected 0..=8)")]
    InvalidAction(usize),

    #[error("simulation diverged at step {step}: non-finite vertex {vertex}")]
    Diverged { step: u32, vertex: usize },

    #[error("step called on a finished episode")]
    StepAfterDone,

    #[error("scene file: {0}")]
    Scene(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        SimError::Io { context: context.into(), source }
    }
}
