use cholec_core::SimError;
use cholec_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("environment fault in lane {lane} (episode seed {episode_seed}, step {step}): {source}")]
    Env {
        lane: usize,
        episode_seed: u64,
        step: u32,
        #[source]
        source: SimError,
    },
    #[error("non-finite loss for agent {agent} in epoch {epoch}, minibatch {minibatch}: {detail}")]
    NonFinite { agent: String, epoch: usize, minibatch: usize, detail: String },
    #[error("resume: {0}")]
    Resume(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
