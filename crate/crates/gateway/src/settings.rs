//! Layered application configuration: defaults, then a JSON file, then
//! `CHOLEC_*` environment variables, then command-line flags.
//!
//! | Variable | Key |
//! |---|---|
//! | `CHOLEC_SEED` | `seed` |
//! | `CHOLEC_ENV__OBS_MODE` | `env.obs_mode` (`features` or `image`) |
//! | `CHOLEC_ENV__TIME_LIMIT_STEPS` | `env.time_limit_steps` |
//! | `CHOLEC_PPO__LEARNING_RATE` | `ppo.learning_rate` |
//! | `CHOLEC_PPO__N_PARALLEL_ENVS` | `ppo.n_parallel_envs` |
//! | `CHOLEC_SESSION__PORT` | `session.port` |
//! | `CHOLEC_TRAIN__TOTAL_STEPS` | `train.total_steps` |
//! | `CHOLEC_EVAL__EPISODES` | `eval.episodes` |
//!
//! Any key works: `__` separates nesting levels and names are lowercased.
//! Values are parsed as JSON when possible and as strings otherwise.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use cholec_core::env::{EnvConfig, ObsMode};
use cholec_ippo::config::TRAIN_CONFIG_SCHEMA;
use cholec_ippo::{PpoConfig, TrainConfig};
use cholec_nn::Architecture;

pub const APP_CONFIG_SCHEMA: u32 = 1;
pub const ENV_PREFIX: &str = "CHOLEC_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSettings {
    pub port: u16,
    pub tick_rate_hz: u32,
    pub max_session_episodes: Option<u32>,
    pub team: String,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self { port: 8765, tick_rate_hz: 30, max_session_episodes: None, team: "human,policy".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub episodes: usize,
    pub team: String,
    pub record_replays: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { episodes: 100, team: "policy,policy".into(), record_replays: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub total_steps: u64,
    pub checkpoint_every_iterations: u64,
    /// 0 disables periodic evaluation.
    pub eval_every_iterations: u64,
    pub eval_episodes: usize,
    pub eval_seed_base: u64,
    /// Stop once a periodic evaluation reaches this success rate (0..1).
    pub target_success: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            total_steps: 5_000_000,
            checkpoint_every_iterations: 50,
            eval_every_iterations: 0,
            eval_episodes: 100,
            eval_seed_base: 1_000_000,
            target_success: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub architecture: Option<Architecture>,
    pub train: TrainSettings,
    pub eval: EvalSettings,
    pub session: SessionSettings,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            schema_version: APP_CONFIG_SCHEMA,
            seed: 0,
            env: EnvConfig { obs_mode: ObsMode::Features, ..EnvConfig::default() },
            ppo: PpoConfig::default(),
            architecture: None,
            train: TrainSettings::default(),
            eval: EvalSettings::default(),
            session: SessionSettings::default(),
        }
    }
}

fn set_path(root: &mut Value, path: &[String], value: Value, var: &str) -> anyhow::Result<()> {
    let mut cur = root;
    for (i, key) in path.iter().enumerate() {
        let Value::Object(map) = cur else {
            bail!("{var}: {} is not a table", path[..i].join("."));
        };
        if i + 1 == path.len() {
            map.insert(key.clone(), value);
            return Ok(());
        }
        cur = map.entry(key.clone()).or_insert_with(|| Value::Object(Default::default()));
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    Ok(())
}

impl AppConfig {
    /// Reads `path` (if any) and applies `CHOLEC_*` overrides from `vars`.
    pub fn load(path: Option<&Path>, vars: impl IntoIterator<Item = (String, String)>) -> anyhow::Result<Self> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str::<AppConfig>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => AppConfig::default(),
        };
        let mut value = serde_json::to_value(&base)?;
        let mut overrides: Vec<(String, String)> =
            vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.len() > ENV_PREFIX.len()).collect();
        overrides.sort();
        for (var, raw) in &overrides {
            let path: Vec<String> = var[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            set_path(&mut value, &path, v, var)?;
        }
        let cfg: AppConfig = serde_json::from_value(value).context("applying CHOLEC_* overrides")?;
        if cfg.schema_version != APP_CONFIG_SCHEMA {
            bail!("config schema_version {} is not supported (expected {APP_CONFIG_SCHEMA})", cfg.schema_version);
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            schema_version: TRAIN_CONFIG_SCHEMA,
            seed: self.seed,
            env: self.env.clone(),
            ppo: self.ppo.clone(),
            architecture: self.architecture.clone(),
        }
    }
}
