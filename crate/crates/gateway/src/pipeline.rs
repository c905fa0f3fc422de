//! Training driver: iterations, checkpoints, telemetry and periodic
//! frozen-policy evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use serde::Serialize;

use cholec_core::env::Outcome;
use cholec_eval::{evaluate_with, Team};
use cholec_ippo::telemetry::TelemetryWriter;
use cholec_ippo::{TrainConfig, TrainStats, Trainer};
use cholec_nn::checkpoint::Checkpoint;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const EVALS_FILE: &str = "evals.csv";

#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub out_dir: PathBuf,
    /// Training stops at the first iteration boundary at or past this count.
    pub total_steps: u64,
    pub checkpoint_every: u64,
    /// 0 disables periodic evaluation.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub eval_seed_base: u64,
    /// Stop once an evaluation reaches this success fraction.
    pub target_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPoint {
    pub iteration: u64,
    pub env_steps: u64,
    pub episodes: usize,
    pub success_rate: f64,
    pub lost_grasp_rate: f64,
    pub out_of_time_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub iterations: u64,
    pub env_steps: u64,
    pub stats: Vec<TrainStats>,
    pub evals: Vec<EvalPoint>,
    pub checkpoint: PathBuf,
    /// First evaluation meeting the target, if one was set and met.
    pub reached: Option<EvalPoint>,
}

/// Evaluates both current policies (sampled actions) on fresh episodes.
pub fn evaluate_trainer(trainer: &Trainer, episodes: usize, seed_base: u64) -> anyhow::Result<EvalPoint> {
    let nets = [0, 1].map(|k| Arc::new(trainer.net(k).clone()));
    let mut team = Team::from_policies(nets, false);
    let cfg = &trainer.config().env;
    let ev = evaluate_with(cfg, trainer.template().clone(), &mut team, episodes, seed_base, false)?;
    let n = ev.aggregate.n as f64;
    let frac = |o: Outcome| ev.aggregate.outcome_counts[o.index()] as f64 / n;
    Ok(EvalPoint {
        iteration: trainer.iteration(),
        env_steps: trainer.env_steps(),
        episodes,
        success_rate: frac(Outcome::ReachedGoal),
        lost_grasp_rate: frac(Outcome::LostGrasp),
        out_of_time_rate: frac(Outcome::RanOutOfTime),
    })
}

/// Episode-weighted outcome fractions over iterations whose cumulative step
/// count lies in `(lo, hi]`. `None` when no episode ended in the window.
pub fn outcome_fractions_between(stats: &[TrainStats], lo: u64, hi: u64) -> Option<[f64; 3]> {
    let mut counts = [0u64; 3];
    for s in stats.iter().filter(|s| s.env_steps > lo && s.env_steps <= hi) {
        for (c, n) in counts.iter_mut().zip(s.outcome_counts) {
            *c += u64::from(n);
        }
    }
    let total: u64 = counts.iter().sum();
    (total > 0).then(|| counts.map(|c| c as f64 / total as f64))
}

struct EvalLog {
    out: csv::Writer<fs::File>,
}

impl EvalLog {
    fn open(path: &Path) -> anyhow::Result<Self> {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = fs::OpenOptions::new().create(true).append(true).open(path).with_context(|| format!("opening {}", path.display()))?;
        Ok(Self { out: csv::WriterBuilder::new().has_headers(fresh).from_writer(file) })
    }

    fn write(&mut self, p: &EvalPoint) -> anyhow::Result<()> {
        self.out.serialize(p)?;
        self.out.flush()?;
        Ok(())
    }
}

/// Runs (or resumes) training under `plan`. `on_iteration` sees every
/// iteration's statistics and `on_eval` every evaluation.
pub fn train(
    config: TrainConfig,
    resume: Option<&Path>,
    plan: &TrainPlan,
    mut on_iteration: impl FnMut(&TrainStats),
    mut on_eval: impl FnMut(&EvalPoint),
) -> anyhow::Result<TrainReport> {
    fs::create_dir_all(&plan.out_dir).with_context(|| format!("creating {}", plan.out_dir.display()))?;
    let telemetry_path = plan.out_dir.join(TELEMETRY_FILE);
    let (mut trainer, mut telemetry) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let trainer = Trainer::resume(&ck).with_context(|| format!("resuming from {}", path.display()))?;
            (trainer, TelemetryWriter::append(&telemetry_path)?)
        }
        None => (Trainer::new(config)?, TelemetryWriter::create(&telemetry_path)?),
    };
    let mut evals_log = EvalLog::open(&plan.out_dir.join(EVALS_FILE))?;
    let checkpoint = plan.out_dir.join(CHECKPOINT_FILE);
    let mut report = TrainReport {
        iterations: trainer.iteration(),
        env_steps: trainer.env_steps(),
        stats: Vec::new(),
        evals: Vec::new(),
        checkpoint: checkpoint.clone(),
        reached: None,
    };
    trainer.save(&checkpoint)?;
    while trainer.env_steps() < plan.total_steps {
        let stats = trainer.train_iteration()?;
        telemetry.write(&stats)?;
        on_iteration(&stats);
        report.stats.push(stats);
        let it = trainer.iteration();
        if plan.checkpoint_every > 0 && it % plan.checkpoint_every == 0 {
            trainer.save(&checkpoint)?;
        }
        let last = trainer.env_steps() >= plan.total_steps;
        if plan.eval_every > 0 && (it % plan.eval_every == 0 || last) {
            let p = evaluate_trainer(&trainer, plan.eval_episodes, plan.eval_seed_base)?;
            evals_log.write(&p)?;
            on_eval(&p);
            report.evals.push(p.clone());
            if plan.target_success.is_some_and(|t| p.success_rate >= t) {
                report.reached = Some(p);
                break;
            }
        }
    }
    trainer.save(&checkpoint)?;
    report.iterations = trainer.iteration();
    report.env_steps = trainer.env_steps();
    Ok(report)
}
