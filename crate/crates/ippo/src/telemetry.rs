//! CSV log of per-iteration training statistics.

use std::fs::File;
use std::path::Path;

use serde::Serialize;

use crate::error::TrainError;
use crate::trainer::TrainStats;

#[derive(Debug, Serialize)]
struct Row {
    iteration: u64,
    env_steps: u64,
    episodes: u32,
    frac_reached_goal: f64,
    frac_lost_grasp: f64,
    frac_ran_out_of_time: f64,
    return_gripper: Option<f64>,
    return_cauter: Option<f64>,
    policy_loss_gripper: f64,
    policy_loss_cauter: f64,
    value_loss_gripper: f64,
    value_loss_cauter: f64,
    entropy_gripper: f64,
    entropy_cauter: f64,
    clip_fraction_gripper: f64,
    clip_fraction_cauter: f64,
    grad_norm_mean: f64,
    grad_norm_max: f64,
    clipped_grad_norm_max: f64,
}

impl From<&TrainStats> for Row {
    fn from(s: &TrainStats) -> Self {
        let [g, c] = &s.agents;
        Row {
            iteration: s.iteration,
            env_steps: s.env_steps,
            episodes: s.episodes,
            frac_reached_goal: s.outcome_fractions[0],
            frac_lost_grasp: s.outcome_fractions[1],
            frac_ran_out_of_time: s.outcome_fractions[2],
            return_gripper: g.mean_return,
            return_cauter: c.mean_return,
            policy_loss_gripper: g.policy_loss,
            policy_loss_cauter: c.policy_loss,
            value_loss_gripper: g.value_loss,
            value_loss_cauter: c.value_loss,
            entropy_gripper: g.entropy,
            entropy_cauter: c.entropy,
            clip_fraction_gripper: g.clip_fraction,
            clip_fraction_cauter: c.clip_fraction,
            grad_norm_mean: s.grad_norm_mean,
            grad_norm_max: s.grad_norm_max,
            clipped_grad_norm_max: s.clipped_grad_norm_max,
        }
    }
}

/// Column names, in order.
pub const COLUMNS: [&str; 19] = [
    "iteration",
    "env_steps",
    "episodes",
    "frac_reached_goal",
    "frac_lost_grasp",
    "frac_ran_out_of_time",
    "return_gripper",
    "return_cauter",
    "policy_loss_gripper",
    "policy_loss_cauter",
    "value_loss_gripper",
    "value_loss_cauter",
    "entropy_gripper",
    "entropy_cauter",
    "clip_fraction_gripper",
    "clip_fraction_cauter",
    "grad_norm_mean",
    "grad_norm_max",
    "clipped_grad_norm_max",
];

pub struct TelemetryWriter {
    out: csv::Writer<File>,
}

impl TelemetryWriter {
    /// Creates (truncating) `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        let file = File::create(path).map_err(|source| TrainError::Io { context: format!("creating {}", path.display()), source })?;
        Self::start(file, true)
    }

    fn start(file: File, header: bool) -> Result<Self, TrainError> {
        let mut w = Self { out: csv::WriterBuilder::new().has_headers(false).from_writer(file) };
        if header {
            w.out.write_record(COLUMNS)?;
            w.flush()?;
        }
        Ok(w)
    }

    fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush().map_err(|source| TrainError::Io { context: "flushing telemetry".into(), source })
    }

    /// Appends to `path`, writing the header only if the file is new or empty.
    pub fn append(path: &Path) -> Result<Self, TrainError> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| TrainError::Io { context: format!("opening {}", path.display()), source })?;
        Self::start(file, fresh)
    }

    pub fn write(&mut self, stats: &TrainStats) -> Result<(), TrainError> {
        self.out.serialize(Row::from(stats))?;
        self.flush()
    }
}
