use std::path::PathBuf;

use cholec_core::SimError;
use cholec_nn::NnError;

use crate::controller::Instrument;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0:?} is human-controlled, which needs a live session")]
    HumanOutsideSession(Instrument),
    #[error("invalid team spec: {0}")]
    Team(String),
    #[error("checkpoint for {instrument:?}: {msg}")]
    Architecture { instrument: Instrument, msg: String },
    #[error("episode seed {seed}: {source}")]
    Episode {
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("replay diverged at step {step}: digest {got:016x}, log has {expected:016x}")]
    ReplayMismatch { step: usize, expected: u64, got: u64 },
    #[error("replay: {0}")]
    Replay(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl EvalError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvalError::Io { path: path.into(), source }
    }
}
