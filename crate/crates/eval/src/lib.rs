//! Episode execution for frozen, scripted and human-in-the-loop teams,
//! with skill metrics, aggregate tables and replay logs.

pub mod controller;
pub mod episode;
pub mod error;
pub mod metrics;
pub mod report;

pub use controller::{Controller, ControllerSpec, Instrument, Script, Team, TeamSpec};
pub use episode::{evaluate, evaluate_with, replay, run_episode, run_episode_in, EpisodeRun, Evaluation, ReplayLog};
pub use error::EvalError;
pub use metrics::{path_length, Aggregate, EpisodeMetrics, MeanStd};
pub use report::write_report;
