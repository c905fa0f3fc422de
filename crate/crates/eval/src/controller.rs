//! Per-instrument controllers: frozen policies, scripts, and the human slot
//! filled by a live session.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cholec_core::env::{AgentAction, CholecEnv, EnvConfig, JointAction, ObsMode, FEATURE_LEN};
use cholec_core::kinematics::{apply_discrete, tip_transform, NOOP, NUM_ACTIONS};
use cholec_nn::checkpoint::Checkpoint;
use cholec_nn::dist::{greedy_action, sample_action};
use cholec_nn::{PolicyValueNet, RecurrentState};

use crate::error::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instrument {
    Gripper,
    Cauter,
}

impl Instrument {
    pub const BOTH: [Instrument; 2] = [Instrument::Gripper, Instrument::Cauter];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Gripper => "gripper",
            Instrument::Cauter => "cauter",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Instrument::Gripper => Instrument::Cauter,
            Instrument::Cauter => Instrument::Gripper,
        }
    }
}

impl FromStr for Instrument {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gripper" => Ok(Instrument::Gripper),
            "cauter" => Ok(Instrument::Cauter),
            _ => Err(EvalError::Team(format!("unknown instrument {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "script", rename_all = "snake_case")]
pub enum Script {
    Noop,
    /// Uniform discrete actions.
    Random,
    /// Gripper: a short lift, then hold. Cauter: greedy approach to the target.
    Heuristic,
    /// Plays the actions in order, then no-ops.
    Sequence {
        actions: Vec<AgentAction>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerSpec {
    Policy {
        checkpoint: PathBuf,
        /// Argmax instead of sampling.
        #[serde(default)]
        greedy: bool,
    },
    Human,
    Scripted(Script),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamSpec {
    pub gripper: ControllerSpec,
    pub cauter: ControllerSpec,
    /// A single operator drives both instruments, one at a time; the
    /// inactive one holds still.
    #[serde(default)]
    pub switch_control: bool,
}

impl TeamSpec {
    pub fn controller(&self, i: Instrument) -> &ControllerSpec {
        match i {
            Instrument::Gripper => &self.gripper,
            Instrument::Cauter => &self.cauter,
        }
    }

    pub fn humans(&self) -> Vec<Instrument> {
        Instrument::BOTH.into_iter().filter(|&i| *self.controller(i) == ControllerSpec::Human).collect()
    }

    /// Parses `<gripper>,<cauter>[,switch]` where each side is one of
    /// `policy`, `policy-greedy`, `human`, `noop`, `random`, `heuristic`.
    /// Policies read their weights from the given checkpoint paths.
    pub fn parse(spec: &str, checkpoints: [Option<&Path>; 2]) -> Result<Self, EvalError> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        let switch_control = match parts.as_slice() {
            [_, _] => false,
            [_, _, "switch"] => true,
            _ => return Err(EvalError::Team(format!("expected <gripper>,<cauter>[,switch], got {spec:?}"))),
        };
        let side = |i: Instrument| -> Result<ControllerSpec, EvalError> {
            let ckpt = || {
                checkpoints[i.index()]
                    .map(Path::to_path_buf)
                    .ok_or_else(|| EvalError::Team(format!("{} policy needs --checkpoint-{}", i.name(), i.name())))
            };
            Ok(match parts[i.index()] {
                "policy" => ControllerSpec::Policy { checkpoint: ckpt()?, greedy: false },
                "policy-greedy" => ControllerSpec::Policy { checkpoint: ckpt()?, greedy: true },
                "human" => ControllerSpec::Human,
                "noop" => ControllerSpec::Scripted(Script::Noop),
                "random" => ControllerSpec::Scripted(Script::Random),
                "heuristic" => ControllerSpec::Scripted(Script::Heuristic),
                other => return Err(EvalError::Team(format!("unknown controller {other:?}"))),
            })
        };
        let team = TeamSpec { gripper: side(Instrument::Gripper)?, cauter: side(Instrument::Cauter)?, switch_control };
        team.validate()?;
        Ok(team)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.switch_control && self.humans().len() != 2 {
            return Err(EvalError::Team("switch control needs both instruments human-controlled".into()));
        }
        Ok(())
    }

    /// Short label such as `policy+human` for reports.
    pub fn label(&self) -> String {
        let name = |c: &ControllerSpec| match c {
            ControllerSpec::Policy { greedy: false, .. } => "policy".to_string(),
            ControllerSpec::Policy { greedy: true, .. } => "policy-greedy".to_string(),
            ControllerSpec::Human => "human".to_string(),
            ControllerSpec::Scripted(Script::Noop) => "noop".to_string(),
            ControllerSpec::Scripted(Script::Random) => "random".to_string(),
            ControllerSpec::Scripted(Script::Heuristic) => "heuristic".to_string(),
            ControllerSpec::Scripted(Script::Sequence { .. }) => "sequence".to_string(),
        };
        let mut s = format!("{}+{}", name(&self.gripper), name(&self.cauter));
        if self.switch_control {
            s.push_str("+switch");
        }
        s
    }
}

/// Chooses one instrument's action each step.
pub trait Controller: Send {
    fn reset(&mut self, episode_seed: u64);
    fn act(&mut self, env: &CholecEnv, obs: &[f32]) -> Result<AgentAction, EvalError>;
}

fn lane_rng(episode_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(episode_seed);
    r.set_stream(stream);
    r
}

/// Frozen recurrent policy.
pub struct PolicyController {
    net: Arc<PolicyValueNet<f32>>,
    instrument: Instrument,
    greedy: bool,
    state: RecurrentState<f32>,
    prev: Option<usize>,
    rng: ChaCha8Rng,
}

impl PolicyController {
    pub fn new(net: Arc<PolicyValueNet<f32>>, instrument: Instrument, greedy: bool) -> Self {
        let state = net.zero_state(1);
        Self { net, instrument, greedy, state, prev: None, rng: lane_rng(0, 0) }
    }
}

impl Controller for PolicyController {
    fn reset(&mut self, episode_seed: u64) {
        self.state = self.net.zero_state(1);
        self.prev = None;
        self.rng = lane_rng(episode_seed, 10 + self.instrument.index() as u64);
    }

    fn act(&mut self, _env: &CholecEnv, obs: &[f32]) -> Result<AgentAction, EvalError> {
        let out = self.net.step(obs, &[self.prev], &self.state)?;
        let s = if self.greedy { greedy_action(&out.logits) } else { sample_action(&out.logits, &mut self.rng) };
        self.state = out.state;
        self.prev = Some(s.action);
        Ok(AgentAction::Discrete(s.action))
    }
}

/// Tilt steps of the scripted gripper lift.
pub const HEURISTIC_LIFT_STEPS: u32 = 12;
const TILT_MINUS: usize = 2;

/// The discrete cauter action that brings its tip closest to the target.
pub fn greedy_cauter_action(env: &CholecEnv) -> usize {
    let s = env.state();
    let scene = env.scene();
    (0..NUM_ACTIONS)
        .filter_map(|a| {
            let p = apply_discrete(&s.cauter_pose, a, &scene.limits).ok()?;
            Some(((tip_transform(&scene.cauter_trocar, &p).position - s.target.center_mm).norm(), a))
        })
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map_or(NOOP, |(_, a)| a)
}

pub struct ScriptedController {
    script: Script,
    instrument: Instrument,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl ScriptedController {
    pub fn new(script: Script, instrument: Instrument) -> Self {
        Self { script, instrument, cursor: 0, rng: lane_rng(0, 0) }
    }
}

impl Controller for ScriptedController {
    fn reset(&mut self, episode_seed: u64) {
        self.cursor = 0;
        self.rng = lane_rng(episode_seed, 20 + self.instrument.index() as u64);
    }

    fn act(&mut self, env: &CholecEnv, _obs: &[f32]) -> Result<AgentAction, EvalError> {
        let a = match &self.script {
            Script::Noop => AgentAction::NOOP,
            Script::Random => AgentAction::Discrete(self.rng.gen_range(0..NUM_ACTIONS)),
            Script::Heuristic => match self.instrument {
                Instrument::Gripper if env.state().step < HEURISTIC_LIFT_STEPS => AgentAction::Discrete(TILT_MINUS),
                Instrument::Gripper => AgentAction::NOOP,
                Instrument::Cauter => AgentAction::Discrete(greedy_cauter_action(env)),
            },
            Script::Sequence { actions } => actions.get(self.cursor).copied().unwrap_or(AgentAction::NOOP),
        };
        self.cursor += 1;
        Ok(a)
    }
}

/// Loads `instrument`'s network from a checkpoint and checks it accepts the
/// observations `env` produces.
pub fn load_policy(path: &Path, instrument: Instrument, env: &EnvConfig) -> Result<PolicyValueNet<f32>, EvalError> {
    let ck = Checkpoint::load(path)?;
    let agent = ck
        .agent(instrument.name())
        .ok_or_else(|| EvalError::Architecture { instrument, msg: format!("{} has no {} network", path.display(), instrument.name()) })?;
    let expected = match env.obs_mode {
        ObsMode::Features => FEATURE_LEN,
        ObsMode::Image => 3 * env.image_size[0] as usize * env.image_size[1] as usize,
    };
    if agent.net.arch.input.len() != expected {
        return Err(EvalError::Architecture {
            instrument,
            msg: format!("network input is {} values but {:?} observations have {expected}", agent.net.arch.input.len(), env.obs_mode),
        });
    }
    Ok(agent.net.clone())
}

/// Controllers of both instruments; `None` marks a human slot.
pub struct Team {
    pub spec: TeamSpec,
    pub controllers: [Option<Box<dyn Controller>>; 2],
    /// Instrument driven in switch-control mode.
    pub active: Instrument,
}

impl Team {
    /// Builds the artificial controllers. Human slots are accepted only
    /// when `allow_human` is set (inside a session).
    pub fn build(spec: &TeamSpec, env: &EnvConfig, allow_human: bool) -> Result<Self, EvalError> {
        spec.validate()?;
        let mut controllers: [Option<Box<dyn Controller>>; 2] = [None, None];
        for i in Instrument::BOTH {
            controllers[i.index()] = match spec.controller(i) {
                ControllerSpec::Human if allow_human => None,
                ControllerSpec::Human => return Err(EvalError::HumanOutsideSession(i)),
                ControllerSpec::Policy { checkpoint, greedy } => {
                    Some(Box::new(PolicyController::new(Arc::new(load_policy(checkpoint, i, env)?), i, *greedy)))
                }
                ControllerSpec::Scripted(s) => Some(Box::new(ScriptedController::new(s.clone(), i))),
            };
        }
        Ok(Self { spec: spec.clone(), controllers, active: Instrument::Gripper })
    }

    /// Both instruments driven by in-memory networks.
    pub fn from_policies(nets: [Arc<PolicyValueNet<f32>>; 2], greedy: bool) -> Self {
        let spec = ControllerSpec::Policy { checkpoint: PathBuf::from("<memory>"), greedy };
        let [g, c] = nets;
        Self {
            spec: TeamSpec { gripper: spec.clone(), cauter: spec, switch_control: false },
            controllers: [
                Some(Box::new(PolicyController::new(g, Instrument::Gripper, greedy))),
                Some(Box::new(PolicyController::new(c, Instrument::Cauter, greedy))),
            ],
            active: Instrument::Gripper,
        }
    }

    pub fn from_controllers(spec: TeamSpec, controllers: [Option<Box<dyn Controller>>; 2]) -> Self {
        Self { spec, controllers, active: Instrument::Gripper }
    }

    pub fn reset(&mut self, episode_seed: u64) {
        for c in self.controllers.iter_mut().flatten() {
            c.reset(episode_seed);
        }
        self.active = Instrument::Gripper;
    }

    pub fn toggle_active(&mut self) {
        self.active = self.active.other();
    }

    /// Joint action for this step; `human` supplies the human slots. In
    /// switch-control mode the inactive instrument no-ops.
    pub fn act(&mut self, env: &CholecEnv, obs: &[f32], human: [Option<AgentAction>; 2]) -> Result<JointAction, EvalError> {
        let mut out = [AgentAction::NOOP; 2];
        for i in Instrument::BOTH {
            let k = i.index();
            out[k] = match &mut self.controllers[k] {
                Some(c) => c.act(env, obs)?,
                None => human[k].unwrap_or(AgentAction::Continuous([0.0; 4])),
            };
        }
        if self.spec.switch_control {
            out[self.active.other().index()] = AgentAction::NOOP;
        }
        Ok(JointAction { gripper: out[0], cauter: out[1] })
    }
}
