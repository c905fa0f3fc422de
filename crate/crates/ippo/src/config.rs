use serde::{Deserialize, Serialize};

use cholec_core::env::{EnvConfig, ObsMode, FEATURE_LEN};
use cholec_nn::optim::AdamConfig;
use cholec_nn::Architecture;

use crate::error::TrainError;

pub const TRAIN_CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub clip_ratio: f64,
    pub epochs_per_iteration: usize,
    /// Each minibatch is a subset of whole environment lanes.
    pub minibatches_per_epoch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Joint L2 bound over both agents' gradients.
    pub grad_clip_norm: f64,
    /// Environment steps per iteration.
    pub batch_steps: usize,
    pub n_parallel_envs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Both agents optimize the sum of the two rewards.
    pub shared_reward: bool,
    /// Multiplies each agent's loss (gripper, cauter); 0 freezes that agent.
    pub agent_loss_weights: [f64; 2],
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.8,
            learning_rate: 3e-4,
            clip_ratio: 0.1,
            epochs_per_iteration: 4,
            minibatches_per_epoch: 4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            grad_clip_norm: 1.0,
            batch_steps: 2560,
            n_parallel_envs: 16,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            shared_reward: false,
            agent_loss_weights: [1.0, 1.0],
        }
    }
}

impl PpoConfig {
    /// Time steps per lane in one iteration.
    pub fn unroll_length(&self) -> usize {
        self.batch_steps / self.n_parallel_envs
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma must lie in (0, 1] and gae_lambda in [0, 1]");
        }
        if !(self.learning_rate >= 0.0) || !(self.clip_ratio > 0.0) {
            return bad("learning_rate must be >= 0 and clip_ratio > 0");
        }
        if self.epochs_per_iteration == 0 || self.minibatches_per_epoch == 0 || self.n_parallel_envs == 0 || self.batch_steps == 0 {
            return bad("epochs, minibatches, n_parallel_envs and batch_steps must be positive");
        }
        if self.batch_steps % self.n_parallel_envs != 0 {
            return bad("batch_steps must be divisible by n_parallel_envs");
        }
        if self.n_parallel_envs % self.minibatches_per_epoch != 0 {
            return bad("n_parallel_envs must be divisible by minibatches_per_epoch");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        if ![self.entropy_coef, self.value_coef, self.adam_eps].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return bad("coefficients must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !self.agent_loss_weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return bad("agent_loss_weights must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    /// Overrides the network derived from the observation mode.
    pub architecture: Option<Architecture>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schema_version: TRAIN_CONFIG_SCHEMA,
            seed: 0,
            env: EnvConfig { obs_mode: ObsMode::Features, ..EnvConfig::default() },
            ppo: PpoConfig::default(),
            architecture: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.schema_version != TRAIN_CONFIG_SCHEMA {
            return Err(TrainError::Config(format!(
                "schema_version {} is not supported (expected {TRAIN_CONFIG_SCHEMA})",
                self.schema_version
            )));
        }
        self.env.validate()?;
        self.ppo.validate()?;
        let arch = self.architecture();
        arch.validate()?;
        if arch.input.len() != self.observation_len() {
            return Err(TrainError::Config(format!(
                "network input {} does not match observation length {}",
                arch.input.len(),
                self.observation_len()
            )));
        }
        Ok(())
    }

    pub fn observation_len(&self) -> usize {
        match self.env.obs_mode {
            ObsMode::Features => FEATURE_LEN,
            ObsMode::Image => 3 * self.env.image_size[0] as usize * self.env.image_size[1] as usize,
        }
    }

    pub fn architecture(&self) -> Architecture {
        if let Some(a) = &self.architecture {
            return a.clone();
        }
        match self.env.obs_mode {
            ObsMode::Features => Architecture::features(FEATURE_LEN),
            ObsMode::Image => Architecture::image(self.env.image_size[1] as usize, self.env.image_size[0] as usize),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// FNV-1a of the compact JSON form.
    pub fn hash(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        h.write(serde_json::to_string(self).expect("config serializes").as_bytes());
        h.finish()
    }
}
