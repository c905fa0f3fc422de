//! Independent PPO: each agent learns its own recurrent policy and value
//! function from its own reward, with gradients clipped jointly.

pub mod config;
pub mod error;
pub mod gae;
pub mod loss;
pub mod telemetry;
pub mod trainer;
pub mod verify;

pub use config::{PpoConfig, TrainConfig};
pub use error::TrainError;
pub use gae::{compute_gae, value_targets, LaneSegment};
pub use trainer::{AgentStats, Learner, TrainStats, Trainer, AGENT_NAMES};
