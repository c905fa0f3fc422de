//! Logical-time session core: merges human inputs with artificial
//! controllers and produces one state frame per tick. Networking lives in
//! `server`; this module never looks at the wall clock.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use cholec_core::env::{AgentAction, CholecEnv, EnvConfig, Outcome, SceneTemplate};
use cholec_eval::controller::{Instrument, Team, TeamSpec};
use cholec_eval::metrics::StepRecord;
use cholec_eval::{EpisodeMetrics, EvalError, ReplayLog};

pub const WIRE_SCHEMA: u32 = 1;
pub const TICK_RATE_HZ: u32 = 30;
/// Upper bound on gallbladder vertices per frame.
pub const MAX_FRAME_VERTICES: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("session config: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] cholec_core::SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub schema_version: u32,
    pub team: TeamSpec,
    pub tick_rate_hz: u32,
    pub port: u16,
    pub env: EnvConfig,
    /// Episodes use seeds `seed`, `seed + 1`, ...
    pub seed: u64,
    /// The service stops accepting resets after this many episodes.
    pub max_session_episodes: Option<u32>,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.schema_version != WIRE_SCHEMA {
            return Err(SessionError::Config(format!("schema_version {} is not supported", self.schema_version)));
        }
        if self.tick_rate_hz != TICK_RATE_HZ {
            return Err(SessionError::Config(format!("tick_rate_hz must be {TICK_RATE_HZ}")));
        }
        if self.max_session_episodes == Some(0) {
            return Err(SessionError::Config("max_session_episodes must be at least 1".into()));
        }
        self.team.validate()?;
        self.env.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Buttons {
    pub switch_instrument: bool,
    pub reset_episode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputMessage {
    pub schema_version: u32,
    pub client_id: String,
    pub instrument: Instrument,
    /// pan, tilt, spin, insertion in [-1, 1]; clamped on arrival.
    pub axes: [f64; 4],
    #[serde(default)]
    pub buttons: Buttons,
    /// Client-side tick counter, echoed in the acknowledgement.
    pub client_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Input(InputMessage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub schema_version: u32,
    pub episode: u32,
    pub episode_seed: u64,
    /// Steps taken in the current episode.
    pub step: u32,
    /// Session-wide tick counter; strictly increasing.
    pub tick: u64,
    pub gripper_pose: [f64; 4],
    pub cauter_pose: [f64; 4],
    pub gripper_tip: [f64; 3],
    pub cauter_tip: [f64; 3],
    pub vertices: Vec<[f32; 3]>,
    pub target_center: [f64; 3],
    pub target_radius: f64,
    pub visible_fraction: f64,
    pub reward_gripper: f64,
    pub reward_cauter: f64,
    pub cumulative_gripper: f64,
    pub cumulative_cauter: f64,
    pub grasp_count: usize,
    pub active_instrument: Option<Instrument>,
    pub paused: bool,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { schema_version: u32, config: Box<SessionConfig> },
    StateFrame(Box<StateFrame>),
    EpisodeSummary { schema_version: u32, episode: u32, metrics: EpisodeMetrics },
    InputAck { schema_version: u32, client_id: String, client_tick: u64 },
    Warning { schema_version: u32, message: String },
}

impl ServerMessage {
    pub fn warning(message: impl Into<String>) -> Self {
        ServerMessage::Warning { schema_version: WIRE_SCHEMA, message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}

/// Evenly spaced vertex subset, at most `MAX_FRAME_VERTICES`.
pub fn decimate(vertices: &[cholec_core::geometry::Vec3]) -> Vec<[f32; 3]> {
    let n = vertices.len();
    let stride = n.div_ceil(MAX_FRAME_VERTICES).max(1);
    vertices.iter().step_by(stride).map(|v| [v.x as f32, v.y as f32, v.z as f32]).collect()
}

pub struct Session {
    config: SessionConfig,
    env: CholecEnv,
    team: Team,
    slots: [Option<[f64; 4]>; 2],
    pending_switch: bool,
    pending_reset: bool,
    obs: Vec<f32>,
    tick: u64,
    episode: u32,
    episode_seed: u64,
    last_rewards: [f64; 2],
    cumulative: [f64; 2],
    start_tips: ([f64; 3], [f64; 3]),
    records: Vec<StepRecord>,
    replay: ReplayLog,
    finished: Vec<ReplayLog>,
}

fn tip3(t: &cholec_core::kinematics::TipTransform) -> [f64; 3] {
    [t.position.x, t.position.y, t.position.z]
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let template = Arc::new(SceneTemplate::build(&config.env)?);
        let team = Team::build(&config.team, &config.env, true)?;
        Self::with_parts(config, template, team)
    }

    /// Uses prebuilt controllers (for instance, in-memory policies).
    pub fn with_parts(config: SessionConfig, template: Arc<SceneTemplate>, team: Team) -> Result<Self, SessionError> {
        config.validate()?;
        let env = CholecEnv::with_template(config.env.clone(), template)?;
        let replay =
            ReplayLog { config: config.env.clone(), episode_seed: config.seed, initial_digest: 0, actions: vec![], digests: vec![] };
        let mut s = Self {
            env,
            team,
            slots: [None, None],
            pending_switch: false,
            pending_reset: false,
            obs: Vec::new(),
            tick: 0,
            episode: 0,
            episode_seed: config.seed,
            last_rewards: [0.0; 2],
            cumulative: [0.0; 2],
            start_tips: ([0.0; 3], [0.0; 3]),
            records: Vec::new(),
            replay,
            finished: Vec::new(),
            config,
        };
        s.start_episode();
        Ok(s)
    }

    fn start_episode(&mut self) {
        self.episode_seed = self.config.seed + u64::from(self.episode);
        self.obs = self.env.reset(self.episode_seed).to_tensor_data();
        self.team.reset(self.episode_seed);
        self.slots = [None, None];
        self.pending_switch = false;
        self.last_rewards = [0.0; 2];
        self.cumulative = [0.0; 2];
        self.start_tips = (tip3(&self.env.gripper_tip()), tip3(&self.env.cauter_tip()));
        self.records.clear();
        self.replay = ReplayLog {
            config: self.config.env.clone(),
            episode_seed: self.episode_seed,
            initial_digest: self.env.state().digest(),
            actions: Vec::new(),
            digests: Vec::new(),
        };
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn env(&self) -> &CholecEnv {
        &self.env
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn episode(&self) -> u32 {
        self.episode
    }

    pub fn active_instrument(&self) -> Option<Instrument> {
        self.config.team.switch_control.then_some(self.team.active)
    }

    /// Replay log of the running episode so far.
    pub fn replay_log(&self) -> &ReplayLog {
        &self.replay
    }

    /// Replay logs of completed episodes, oldest first.
    pub fn finished_replays(&self) -> &[ReplayLog] {
        &self.finished
    }

    fn is_human(&self, i: Instrument) -> bool {
        self.team.controllers[i.index()].is_none()
    }

    /// Stores an input in its instrument's latest-value slot, replacing any
    /// input not yet consumed. Returns a warning for rejected parts.
    pub fn submit(&mut self, msg: &InputMessage) -> Option<String> {
        if msg.schema_version != WIRE_SCHEMA {
            return Some(format!("unsupported schema_version {}", msg.schema_version));
        }
        if !self.is_human(msg.instrument) {
            return Some(format!("{} is not human-controlled in this session", msg.instrument.name()));
        }
        let axes = msg.axes.map(|a| if a.is_finite() { a.clamp(-1.0, 1.0) } else { 0.0 });
        let mut warning = None;
        if self.config.team.switch_control {
            // one operator: the active instrument takes the input
            self.slots[self.team.active.index()] = Some(axes);
        } else {
            self.slots[msg.instrument.index()] = Some(axes);
        }
        if msg.buttons.switch_instrument {
            if self.config.team.switch_control {
                self.pending_switch = true;
            } else {
                warning = Some("switch_instrument needs switch-control mode".to_string());
            }
        }
        if msg.buttons.reset_episode {
            self.pending_reset = true;
        }
        warning
    }

    /// A client driving `instrument` went away; its axes fall back to zero.
    pub fn disconnect(&mut self, instrument: Instrument) -> ServerMessage {
        self.slots[instrument.index()] = None;
        ServerMessage::warning(format!("{} client disconnected; axes set to zero", instrument.name()))
    }

    fn episodes_exhausted(&self) -> bool {
        self.config.max_session_episodes.is_some_and(|m| self.episode + 1 >= m)
    }

    /// Advances one tick: applies a pending reset, or steps the running
    /// episode. Always returns exactly one state frame, followed by an
    /// episode summary when the episode just ended.
    pub fn tick(&mut self) -> Result<Vec<ServerMessage>, SessionError> {
        self.tick += 1;
        let mut out = Vec::with_capacity(2);
        if self.pending_reset {
            self.pending_reset = false;
            if self.env.state().done && self.episodes_exhausted() {
                out.push(ServerMessage::warning("session episode limit reached"));
            } else {
                self.episode += 1;
                self.start_episode();
                out.insert(0, ServerMessage::StateFrame(Box::new(self.frame(true))));
                return Ok(out);
            }
        }
        if self.env.state().done {
            out.insert(0, ServerMessage::StateFrame(Box::new(self.frame(true))));
            return Ok(out);
        }
        if std::mem::take(&mut self.pending_switch) {
            self.team.toggle_active();
        }
        let human =
            [0, 1].map(|k| self.team.controllers[k].is_none().then(|| AgentAction::Continuous(self.slots[k].take().unwrap_or([0.0; 4]))));
        let joint = self.team.act(&self.env, &self.obs, human)?;
        let res = self.env.step(&joint)?;
        self.obs = res.observation.to_tensor_data();
        self.last_rewards = [res.reward_gripper, res.reward_cauter];
        self.cumulative[0] += res.reward_gripper;
        self.cumulative[1] += res.reward_cauter;
        self.records.push(StepRecord {
            gripper_tip: res.info.gripper_tip,
            cauter_tip: res.info.cauter_tip,
            collisions: res.collisions,
            reward_gripper: res.reward_gripper,
            reward_cauter: res.reward_cauter,
        });
        self.replay.actions.push(joint);
        self.replay.digests.push(self.env.state().digest());
        out.push(ServerMessage::StateFrame(Box::new(self.frame(res.done))));
        if let Some(outcome) = res.outcome {
            let metrics = EpisodeMetrics::from_trajectory(self.episode_seed, self.start_tips, &self.records, outcome);
            self.finished.push(self.replay.clone());
            out.push(ServerMessage::EpisodeSummary { schema_version: WIRE_SCHEMA, episode: self.episode, metrics });
        }
        Ok(out)
    }

    pub fn frame(&self, paused: bool) -> StateFrame {
        let st = self.env.state();
        let c = st.target.center_mm;
        StateFrame {
            schema_version: WIRE_SCHEMA,
            episode: self.episode,
            episode_seed: self.episode_seed,
            step: st.step,
            tick: self.tick,
            gripper_pose: st.gripper_pose.as_array(),
            cauter_pose: st.cauter_pose.as_array(),
            gripper_tip: tip3(&self.env.gripper_tip()),
            cauter_tip: tip3(&self.env.cauter_tip()),
            vertices: decimate(&st.body.vertices),
            target_center: [c.x, c.y, c.z],
            target_radius: st.target.radius_mm,
            visible_fraction: st.visibility.visible_fraction,
            reward_gripper: self.last_rewards[0],
            reward_cauter: self.last_rewards[1],
            cumulative_gripper: self.cumulative[0],
            cumulative_cauter: self.cumulative[1],
            grasp_count: st.unbroken_grasps(),
            active_instrument: self.active_instrument(),
            paused,
            outcome: st.outcome,
        }
    }
}
