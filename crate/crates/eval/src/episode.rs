//! Headless episode execution and replay logs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use cholec_core::env::{CholecEnv, EnvConfig, JointAction, SceneTemplate};
use cholec_core::kinematics::TipTransform;

use crate::controller::{Team, TeamSpec};
use crate::error::EvalError;
use crate::metrics::{Aggregate, EpisodeMetrics, StepRecord};

pub const REPLAY_SCHEMA: u32 = 1;

fn tip(t: &TipTransform) -> [f64; 3] {
    [t.position.x, t.position.y, t.position.z]
}

/// Everything needed to re-run an episode and check it step by step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    pub config: EnvConfig,
    pub episode_seed: u64,
    /// Digest of the state after reset.
    pub initial_digest: u64,
    pub actions: Vec<JointAction>,
    /// Digest of the state after each step.
    pub digests: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReplayLine {
    Header { schema_version: u32, config_hash: String, episode_seed: u64, initial_digest: String, config: EnvConfig },
    Step { t: usize, action: JointAction, digest: String },
}

fn hex(d: u64) -> String {
    format!("{d:016x}")
}

fn unhex(s: &str) -> Result<u64, EvalError> {
    u64::from_str_radix(s, 16).map_err(|e| EvalError::Replay(format!("bad digest {s:?}: {e}")))
}

impl ReplayLog {
    pub fn config_hash(&self) -> u64 {
        self.config.hash()
    }

    pub fn final_digest(&self) -> u64 {
        self.digests.last().copied().unwrap_or(self.initial_digest)
    }

    /// JSON lines: one header, then one record per step.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = ReplayLine::Header {
            schema_version: REPLAY_SCHEMA,
            config_hash: hex(self.config_hash()),
            episode_seed: self.episode_seed,
            initial_digest: hex(self.initial_digest),
            config: self.config.clone(),
        };
        out.push_str(&serde_json::to_string(&header).expect("replay header serializes"));
        out.push('\n');
        for (t, (a, d)) in self.actions.iter().zip(&self.digests).enumerate() {
            let line = ReplayLine::Step { t, action: *a, digest: hex(*d) };
            out.push_str(&serde_json::to_string(&line).expect("replay step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, EvalError> {
        let mut lines = reader.lines();
        let first = lines.next().ok_or_else(|| EvalError::Replay("empty replay file".into()))?;
        let first = first.map_err(|e| EvalError::Replay(e.to_string()))?;
        let ReplayLine::Header { schema_version, config_hash, episode_seed, initial_digest, config } = serde_json::from_str(&first)? else {
            return Err(EvalError::Replay("first line is not a header".into()));
        };
        if schema_version != REPLAY_SCHEMA {
            return Err(EvalError::Replay(format!("schema_version {schema_version} is not supported")));
        }
        if unhex(&config_hash)? != config.hash() {
            return Err(EvalError::Replay("config hash does not match the embedded config".into()));
        }
        let mut log = Self { config, episode_seed, initial_digest: unhex(&initial_digest)?, actions: Vec::new(), digests: Vec::new() };
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| EvalError::Replay(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                ReplayLine::Step { t, action, digest } if t == i => {
                    log.actions.push(action);
                    log.digests.push(unhex(&digest)?);
                }
                _ => return Err(EvalError::Replay(format!("line {} is not step {i}", i + 2))),
            }
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let f = File::create(path).map_err(|e| EvalError::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(self.to_jsonl().as_bytes()).and_then(|_| w.flush()).map_err(|e| EvalError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let f = File::open(path).map_err(|e| EvalError::io(path, e))?;
        Self::from_jsonl(BufReader::new(f))
    }
}

/// Result of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub metrics: EpisodeMetrics,
    pub replay: Option<ReplayLog>,
}

/// Steps `env` from a fresh reset until the episode ends.
pub fn run_episode_in(env: &mut CholecEnv, team: &mut Team, episode_seed: u64, record: bool) -> Result<EpisodeRun, EvalError> {
    let mut obs = env.reset(episode_seed).to_tensor_data();
    team.reset(episode_seed);
    let start = (tip(&env.gripper_tip()), tip(&env.cauter_tip()));
    let initial_digest = env.state().digest();
    let mut steps = Vec::new();
    let (mut actions, mut digests) = (Vec::new(), Vec::new());
    let outcome = loop {
        let joint = team.act(env, &obs, [None, None])?;
        let res = env.step(&joint).map_err(|source| EvalError::Episode { seed: episode_seed, source })?;
        steps.push(StepRecord {
            gripper_tip: res.info.gripper_tip,
            cauter_tip: res.info.cauter_tip,
            collisions: res.collisions,
            reward_gripper: res.reward_gripper,
            reward_cauter: res.reward_cauter,
        });
        if record {
            actions.push(joint);
            digests.push(env.state().digest());
        }
        if let Some(o) = res.outcome {
            break o;
        }
        obs = res.observation.to_tensor_data();
    };
    let metrics = EpisodeMetrics::from_trajectory(episode_seed, start, &steps, outcome);
    let replay = record.then(|| ReplayLog { config: env.config().clone(), episode_seed, initial_digest, actions, digests });
    Ok(EpisodeRun { metrics, replay })
}

/// Builds the environment and team, then runs one episode.
pub fn run_episode(config: &EnvConfig, team: &TeamSpec, episode_seed: u64, record: bool) -> Result<EpisodeRun, EvalError> {
    let mut t = Team::build(team, config, false)?;
    let mut env = CholecEnv::new(config.clone())?;
    run_episode_in(&mut env, &mut t, episode_seed, record)
}

/// Episodes with seeds `seed_base..seed_base + n`, in seed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub config: EnvConfig,
    pub team: String,
    pub seed_base: u64,
    pub episodes: Vec<EpisodeMetrics>,
    pub replays: Vec<ReplayLog>,
    pub aggregate: Aggregate,
}

pub fn evaluate(config: &EnvConfig, team: &TeamSpec, n_episodes: usize, seed_base: u64, record: bool) -> Result<Evaluation, EvalError> {
    if n_episodes == 0 {
        return Err(EvalError::Team("n_episodes must be at least 1".into()));
    }
    let mut t = Team::build(team, config, false)?;
    let template = Arc::new(SceneTemplate::build(config)?);
    evaluate_with(config, template, &mut t, n_episodes, seed_base, record)
}

/// Like `evaluate`, with prebuilt controllers and scene.
pub fn evaluate_with(
    config: &EnvConfig,
    template: Arc<SceneTemplate>,
    team: &mut Team,
    n_episodes: usize,
    seed_base: u64,
    record: bool,
) -> Result<Evaluation, EvalError> {
    let mut env = CholecEnv::with_template(config.clone(), template)?;
    let mut episodes = Vec::with_capacity(n_episodes);
    let mut replays = Vec::new();
    for i in 0..n_episodes as u64 {
        let run = run_episode_in(&mut env, team, seed_base + i, record)?;
        episodes.push(run.metrics);
        replays.extend(run.replay);
    }
    let aggregate = Aggregate::of(&episodes);
    Ok(Evaluation { config: config.clone(), team: team.spec.label(), seed_base, episodes, replays, aggregate })
}

/// Outcome of re-running a replay log.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayCheck {
    pub metrics: EpisodeMetrics,
    pub final_digest: u64,
}

/// Re-runs the recorded actions and fails at the first digest mismatch.
pub fn replay(log: &ReplayLog) -> Result<ReplayCheck, EvalError> {
    let mut env = CholecEnv::new(log.config.clone())?;
    env.reset(log.episode_seed);
    let d0 = env.state().digest();
    if d0 != log.initial_digest {
        return Err(EvalError::ReplayMismatch { step: 0, expected: log.initial_digest, got: d0 });
    }
    let start = (tip(&env.gripper_tip()), tip(&env.cauter_tip()));
    let mut steps = Vec::with_capacity(log.actions.len());
    let mut outcome = None;
    for (t, (a, expected)) in log.actions.iter().zip(&log.digests).enumerate() {
        let res = env.step(a).map_err(|source| EvalError::Episode { seed: log.episode_seed, source })?;
        let got = env.state().digest();
        if got != *expected {
            return Err(EvalError::ReplayMismatch { step: t + 1, expected: *expected, got });
        }
        steps.push(StepRecord {
            gripper_tip: res.info.gripper_tip,
            cauter_tip: res.info.cauter_tip,
            collisions: res.collisions,
            reward_gripper: res.reward_gripper,
            reward_cauter: res.reward_cauter,
        });
        outcome = res.outcome;
    }
    let outcome = outcome.ok_or_else(|| EvalError::Replay("log ends before the episode does".into()))?;
    Ok(ReplayCheck {
        metrics: EpisodeMetrics::from_trajectory(log.episode_seed, start, &steps, outcome),
        final_digest: env.state().digest(),
    })
}
