//! Evaluation artifacts: per-episode CSV, JSON summary and replay files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::episode::Evaluation;
use crate::error::EvalError;
use crate::metrics::{Aggregate, EpisodeMetrics};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Serialize)]
struct Summary<'a> {
    schema_version: u32,
    config_hash: String,
    team: &'a str,
    seed_first: u64,
    seed_last: u64,
    aggregate: &'a Aggregate,
    table: Vec<String>,
}

/// Paths written by `write_report`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub replays: Vec<PathBuf>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    fs::write(path, bytes).map_err(|e| EvalError::io(path, e))
}

pub fn metrics_csv(episodes: &[EpisodeMetrics]) -> Result<Vec<u8>, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in episodes {
        w.serialize(e)?;
    }
    w.into_inner().map_err(|e| EvalError::Replay(e.to_string()))
}

/// Writes `eval_<hash>_<first>-<last>.csv`, the matching `_summary.json`
/// and one `replay_<hash>_<seed>.jsonl` per recorded episode. Output bytes
/// depend only on the evaluation.
pub fn write_report(eval: &Evaluation, out_dir: &Path) -> Result<ReportFiles, EvalError> {
    fs::create_dir_all(out_dir).map_err(|e| EvalError::io(out_dir, e))?;
    let hash = format!("{:016x}", eval.config.hash());
    let first = eval.seed_base;
    let last = eval.seed_base + eval.episodes.len().saturating_sub(1) as u64;
    let stem = format!("eval_{hash}_{first}-{last}");
    let csv = out_dir.join(format!("{stem}.csv"));
    write(&csv, &metrics_csv(&eval.episodes)?)?;
    let summary = Summary {
        schema_version: REPORT_SCHEMA,
        config_hash: hash.clone(),
        team: &eval.team,
        seed_first: first,
        seed_last: last,
        aggregate: &eval.aggregate,
        table: vec![Aggregate::TABLE_HEADER.to_string(), eval.aggregate.table_row(&eval.team)],
    };
    let summary_path = out_dir.join(format!("{stem}_summary.json"));
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write(&summary_path, text.as_bytes())?;
    let mut replays = Vec::new();
    for r in &eval.replays {
        let p = out_dir.join(format!("replay_{hash}_{}.jsonl", r.episode_seed));
        r.save(&p)?;
        replays.push(p);
    }
    Ok(ReportFiles { csv, summary: summary_path, replays })
}
