//! Skill metrics of single episodes and their aggregation.

use serde::{Deserialize, Serialize};

use cholec_core::collision::CollisionReport;
use cholec_core::env::Outcome;

/// Simulation steps per second.
pub const STEPS_PER_SECOND: f64 = 30.0;

/// Σ ‖p_{t+1} − p_t‖ in mm.
pub fn path_length(tips: &[[f64; 3]]) -> f64 {
    tips.windows(2)
        .map(|w| {
            let d = [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .sum()
}

/// What the metrics need from one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub gripper_tip: [f64; 3],
    pub cauter_tip: [f64; 3],
    pub collisions: CollisionReport,
    pub reward_gripper: f64,
    pub reward_cauter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_seed: u64,
    pub success: bool,
    pub outcome: Outcome,
    pub steps: u32,
    pub time_s: f64,
    pub pl_gripper_mm: f64,
    pub pl_cauter_mm: f64,
    /// Steps with a gripper–liver contact.
    pub col_gl: u32,
    pub col_cl: u32,
    pub col_cg: u32,
    pub col_ii: u32,
    /// Undiscounted episode returns.
    pub return_gripper: f64,
    pub return_cauter: f64,
}

impl EpisodeMetrics {
    /// `start` holds the tip positions before the first step.
    pub fn from_trajectory(episode_seed: u64, start: ([f64; 3], [f64; 3]), steps: &[StepRecord], outcome: Outcome) -> Self {
        let mut g = vec![start.0];
        let mut c = vec![start.1];
        g.extend(steps.iter().map(|s| s.gripper_tip));
        c.extend(steps.iter().map(|s| s.cauter_tip));
        let count = |f: fn(&CollisionReport) -> bool| steps.iter().filter(|s| f(&s.collisions)).count() as u32;
        Self {
            episode_seed,
            success: outcome == Outcome::ReachedGoal,
            outcome,
            steps: steps.len() as u32,
            time_s: steps.len() as f64 / STEPS_PER_SECOND,
            pl_gripper_mm: path_length(&g),
            pl_cauter_mm: path_length(&c),
            col_gl: count(|r| r.gripper_liver.collided),
            col_cl: count(|r| r.cauter_liver.collided),
            col_cg: count(|r| r.cauter_gallbladder.collided),
            col_ii: count(|r| r.instrument_instrument.collided),
            return_gripper: steps.iter().map(|s| s.reward_gripper).sum(),
            return_cauter: steps.iter().map(|s| s.reward_cauter).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    /// Values are sorted before summation so that the result does not
    /// depend on episode order.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        sq.sort_by(f64::total_cmp);
        Self { mean, std: (sq.iter().sum::<f64>() / n).sqrt() }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.mean, self.std)
    }
}

/// One row of the team comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub success_rate_pct: f64,
    /// Indexed like `Outcome::index`.
    pub outcome_counts: [usize; 3],
    pub time_s: MeanStd,
    pub col_gl: MeanStd,
    pub col_cl: MeanStd,
    pub col_cg: MeanStd,
    pub col_ii: MeanStd,
    pub pl_gripper_mm: MeanStd,
    pub pl_cauter_mm: MeanStd,
    pub return_gripper: MeanStd,
    pub return_cauter: MeanStd,
}

impl Aggregate {
    pub fn of(episodes: &[EpisodeMetrics]) -> Self {
        let n = episodes.len();
        let field = |f: fn(&EpisodeMetrics) -> f64| MeanStd::of(episodes.iter().map(f));
        let mut outcome_counts = [0; 3];
        for e in episodes {
            outcome_counts[e.outcome.index()] += 1;
        }
        Self {
            n,
            success_rate_pct: if n == 0 { 0.0 } else { 100.0 * outcome_counts[0] as f64 / n as f64 },
            outcome_counts,
            time_s: field(|e| e.time_s),
            col_gl: field(|e| f64::from(e.col_gl)),
            col_cl: field(|e| f64::from(e.col_cl)),
            col_cg: field(|e| f64::from(e.col_cg)),
            col_ii: field(|e| f64::from(e.col_ii)),
            pl_gripper_mm: field(|e| e.pl_gripper_mm),
            pl_cauter_mm: field(|e| e.pl_cauter_mm),
            return_gripper: field(|e| e.return_gripper),
            return_cauter: field(|e| e.return_cauter),
        }
    }

    pub const TABLE_HEADER: &'static str =
        "| Team | Success (%) | Time (s) | Col. G-L | Col. C-L | Col. C-G | Col. I-I | PL Gripper (mm) | PL Cauter (mm) |";

    /// Markdown row laid out like the published team comparison.
    pub fn table_row(&self, team: &str) -> String {
        format!(
            "| {team} | {:.1} | {} | {} | {} | {} | {} | {} | {} |",
            self.success_rate_pct, self.time_s, self.col_gl, self.col_cl, self.col_cg, self.col_ii, self.pl_gripper_mm, self.pl_cauter_mm
        )
    }
}
