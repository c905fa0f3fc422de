//! The two-agent cholecystectomy environment.
//!
//! The gripper starts holding the gallbladder neck and must lift it to expose
//! a target on the liver; the cauter must then touch the exposed target. Both
//! agents see the same observation and receive individual rewards. An episode
//! ends in exactly one of three outcomes: the target is reached while visible,
//! every grasp binding breaks, or the time limit runs out.

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{detect_collisions, Capsule, CollisionReport};
use crate::digest::{hash_bytes, Digest};
use crate::error::SimError;
use crate::geometry::Vec3;
use crate::kinematics::{apply_continuous, apply_discrete, tip_transform, ContinuousScale, InstrumentPose, TipTransform};
use crate::occlusion::{occlusion_query, Visibility};
use crate::render::{render, FrameContents, RgbImage};
use crate::scene::{Scene, TargetSphere};
use crate::softbody::{step_physics, update_grasp, DeformableBody, GraspBinding, PhysicsParams};

pub const ENV_CONFIG_SCHEMA: u32 = 1;

/// Simulation step length in seconds.
pub const DT: f64 = 1.0 / 30.0;

/// Length of the feature observation vector.
pub const FEATURE_LEN: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    Image,
    Features,
}

impl std::str::FromStr for ObsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image" => Ok(ObsMode::Image),
            "features" => Ok(ObsMode::Features),
            other => Err(format!("unknown observation mode {other:?} (expected image|features)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    /// per mm of cauter-tip to target distance
    pub distance: f64,
    pub visibility: f64,
    /// per obstructing gallbladder triangle
    pub obstruction: f64,
    /// per grasp binding lost this step
    pub lost_contact: f64,
    /// per mm of gripper insertion
    pub insertion: f64,
    pub collision_gripper_liver: f64,
    pub collision_cauter_liver: f64,
    pub collision_cauter_gallbladder: f64,
    pub collision_instruments: f64,
    pub success: f64,
    pub grasp_lost_terminal: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            distance: 0.002,
            visibility: 0.1,
            obstruction: 0.002,
            lost_contact: 1.0,
            insertion: 0.0005,
            collision_gripper_liver: 0.1,
            collision_cauter_liver: 0.1,
            collision_cauter_gallbladder: 0.1,
            collision_instruments: 0.1,
            success: 10.0,
            grasp_lost_terminal: 10.0,
        }
    }
}

/// Uniform jitter half-widths applied to the start poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JitterConfig {
    pub gripper_angle_deg: f64,
    pub gripper_insertion_mm: f64,
    pub cauter_angle_deg: f64,
    pub cauter_insertion_mm: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self { gripper_angle_deg: 2.0, gripper_insertion_mm: 2.0, cauter_angle_deg: 5.0, cauter_insertion_mm: 5.0 }
    }
}

impl JitterConfig {
    pub fn none() -> Self {
        Self { gripper_angle_deg: 0.0, gripper_insertion_mm: 0.0, cauter_angle_deg: 0.0, cauter_insertion_mm: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub obs_mode: ObsMode,
    pub image_size: [u32; 2],
    pub time_limit_steps: u32,
    pub success_tolerance_mm: f64,
    pub visibility_success_threshold: f64,
    pub weights: RewardWeights,
    pub jitter: JitterConfig,
    pub n_rays: usize,
    pub substeps: u32,
    pub iterations_per_substep: u32,
    pub grasp_break_threshold_mm: f64,
    /// Steps run once per scene to let the gallbladder settle under gravity.
    pub settle_steps: u32,
    /// Per-tick displacement of a fully deflected continuous axis.
    pub continuous_scale: [f64; 4],
    /// Scene file; the procedural scene when absent.
    pub scene_path: Option<PathBuf>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            schema_version: ENV_CONFIG_SCHEMA,
            seed: 0,
            obs_mode: ObsMode::Features,
            image_size: [64, 64],
            time_limit_steps: 1000,
            success_tolerance_mm: 5.0,
            visibility_success_threshold: 0.5,
            weights: RewardWeights::default(),
            jitter: JitterConfig::default(),
            n_rays: 32,
            substeps: 4,
            iterations_per_substep: 4,
            grasp_break_threshold_mm: 5.0,
            settle_steps: 30,
            continuous_scale: [1.0; 4],
            scene_path: None,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.schema_version != ENV_CONFIG_SCHEMA {
            return Err(SimError::Config(format!("schema_version {} unsupported (expected {ENV_CONFIG_SCHEMA})", self.schema_version)));
        }
        if self.time_limit_steps < 1 {
            return bad("time_limit_steps must be >= 1");
        }
        if !(self.success_tolerance_mm > 0.0) {
            return bad("success_tolerance_mm must be > 0");
        }
        if !(0.0..=1.0).contains(&self.visibility_success_threshold) {
            return bad("visibility_success_threshold must lie in [0, 1]");
        }
        let w = &self.weights;
        let all = [
            w.distance,
            w.visibility,
            w.obstruction,
            w.lost_contact,
            w.insertion,
            w.collision_gripper_liver,
            w.collision_cauter_liver,
            w.collision_cauter_gallbladder,
            w.collision_instruments,
            w.success,
            w.grasp_lost_terminal,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return bad("reward weights must be finite");
        }
        let j = &self.jitter;
        if [j.gripper_angle_deg, j.gripper_insertion_mm, j.cauter_angle_deg, j.cauter_insertion_mm]
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return bad("jitter magnitudes must be finite and >= 0");
        }
        if self.n_rays < 1 || self.substeps < 1 || self.iterations_per_substep < 1 {
            return bad("n_rays, substeps and iterations_per_substep must be >= 1");
        }
        if self.image_size[0] < 8 || self.image_size[1] < 8 {
            return bad("image_size must be at least 8x8");
        }
        if !(self.grasp_break_threshold_mm > 0.0) {
            return bad("grasp_break_threshold_mm must be > 0");
        }
        if self.continuous_scale.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("continuous_scale must be finite and >= 0");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: EnvConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hash of the canonical (compact) JSON form.
    pub fn hash(&self) -> u64 {
        hash_bytes(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ReachedGoal,
    RanOutOfTime,
    LostGrasp,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::ReachedGoal, Outcome::LostGrasp, Outcome::RanOutOfTime];

    pub fn index(self) -> usize {
        match self {
            Outcome::ReachedGoal => 0,
            Outcome::LostGrasp => 1,
            Outcome::RanOutOfTime => 2,
        }
    }
}

/// Action of one agent: a discrete id for artificial agents, an axis vector
/// in [-1, 1]^4 (pan, tilt, spin, insertion) for humans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentAction {
    Discrete(usize),
    Continuous([f64; 4]),
}

impl AgentAction {
    pub const NOOP: AgentAction = AgentAction::Discrete(crate::kinematics::NOOP);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    pub gripper: AgentAction,
    pub cauter: AgentAction,
}

impl JointAction {
    pub fn discrete(gripper: usize, cauter: usize) -> Self {
        Self { gripper: AgentAction::Discrete(gripper), cauter: AgentAction::Discrete(cauter) }
    }

    pub fn noop() -> Self {
        Self { gripper: AgentAction::NOOP, cauter: AgentAction::NOOP }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Features(Vec<f32>),
    Image(RgbImage),
}

impl Observation {
    /// Flattened network input: features as-is, images as CHW floats in [0, 1].
    pub fn to_tensor_data(&self) -> Vec<f32> {
        match self {
            Observation::Features(v) => v.clone(),
            Observation::Image(img) => {
                let n = (img.width * img.height) as usize;
                let mut out = vec![0.0f32; 3 * n];
                for (i, px) in img.data.chunks_exact(3).enumerate() {
                    for c in 0..3 {
                        out[c * n + i] = f32::from(px[c]) / 255.0;
                    }
                }
                out
            }
        }
    }
}

/// Ground-truth state of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub body: DeformableBody,
    pub grasp: Vec<GraspBinding>,
    pub target_index: usize,
    pub target: TargetSphere,
    pub gripper_pose: InstrumentPose,
    pub cauter_pose: InstrumentPose,
    pub step: u32,
    pub done: bool,
    pub outcome: Option<Outcome>,
    pub visibility: Visibility,
    pub collisions: CollisionReport,
}

impl WorldState {
    pub fn unbroken_grasps(&self) -> usize {
        self.grasp.iter().filter(|b| !b.broken).count()
    }

    /// 64-bit digest of the canonicalized state.
    pub fn digest(&self) -> u64 {
        let mut d = Digest::new();
        d.u64(u64::from(self.step)).u64(self.target_index as u64);
        for x in self.gripper_pose.as_array().iter().chain(self.cauter_pose.as_array().iter()) {
            d.f64(*x);
        }
        for v in &self.body.vertices {
            d.vec3(v);
        }
        for v in &self.body.velocities {
            d.vec3(v);
        }
        for b in &self.grasp {
            d.u64(u64::from(b.vertex_id)).f64(b.elongation_mm).u64(u64::from(b.broken));
        }
        d.u64(self.outcome.map_or(0, |o| o.index() as u64 + 1));
        d.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step_index: u32,
    pub gripper_tip: [f64; 3],
    pub cauter_tip: [f64; 3],
    pub distance_mm: f64,
    pub visible_fraction: f64,
    pub obstructing_triangles: u32,
    pub grasp_count: usize,
    pub newly_broken: usize,
    pub max_elongation_mm: f64,
    /// Continuous-action components that arrived outside [-1, 1].
    pub clamped_axes: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward_gripper: f64,
    pub reward_cauter: f64,
    pub done: bool,
    /// The episode was cut by the time limit rather than a true terminal.
    pub truncated: bool,
    pub outcome: Option<Outcome>,
    pub collisions: CollisionReport,
    pub info: StepInfo,
}

/// Quantities the rewards depend on for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardTerms {
    pub distance_mm: f64,
    pub visible_fraction: f64,
    pub obstructing_triangles: u32,
    pub newly_broken: usize,
    pub gripper_insertion_mm: f64,
    pub collisions: CollisionReport,
    pub success: bool,
    pub lost_grasp_terminal: bool,
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn reward_cauter(t: &RewardTerms, w: &RewardWeights) -> f64 {
    -w.distance * t.distance_mm
        - w.collision_cauter_liver * flag(t.collisions.cauter_liver.collided)
        - w.collision_cauter_gallbladder * flag(t.collisions.cauter_gallbladder.collided)
        - w.collision_instruments * flag(t.collisions.instrument_instrument.collided)
        + w.success * flag(t.success)
}

pub fn reward_gripper(t: &RewardTerms, w: &RewardWeights) -> f64 {
    w.visibility * t.visible_fraction
        - w.obstruction * f64::from(t.obstructing_triangles)
        - w.lost_contact * t.newly_broken as f64
        - w.insertion * t.gripper_insertion_mm
        - w.collision_gripper_liver * flag(t.collisions.gripper_liver.collided)
        - w.collision_instruments * flag(t.collisions.instrument_instrument.collided)
        + w.success * flag(t.success)
        - w.grasp_lost_terminal * flag(t.lost_grasp_terminal)
}

/// Immutable data shared by every environment built from one configuration.
#[derive(Debug)]
pub struct SceneTemplate {
    pub scene: Scene,
    /// Gallbladder after settling under gravity with the canonical grasp.
    pub settled: DeformableBody,
    pub physics: PhysicsParams,
}

impl SceneTemplate {
    pub fn build(config: &EnvConfig) -> Result<Self, SimError> {
        config.validate()?;
        let scene = match &config.scene_path {
            Some(p) => Scene::load(p)?,
            None => Scene::procedural(),
        };
        scene.validate()?;
        let physics = PhysicsParams {
            iterations_per_substep: config.iterations_per_substep,
            support: Some(scene.liver_surface),
            support_offset_mm: scene.tissue_offset_mm,
            ..PhysicsParams::default()
        };
        let mut settled = scene.gallbladder.clone();
        let tip = tip_transform(&scene.gripper_trocar, &scene.gripper_start);
        let grasp: Vec<GraspBinding> = scene.grasp_vertices.iter().map(|&v| GraspBinding::attach(&settled, v, &tip)).collect();
        for step in 0..config.settle_steps {
            step_physics(&mut settled, &grasp, &tip, DT, config.substeps, &physics)
                .map_err(|d| SimError::Diverged { step, vertex: d.vertex })?;
        }
        Ok(Self { scene, settled, physics })
    }
}

pub struct CholecEnv {
    config: EnvConfig,
    template: Arc<SceneTemplate>,
    state: WorldState,
}

const POS_CENTER: [f64; 3] = [-10.0, 10.0, 0.0];
const POS_SCALE: f64 = 100.0;

fn normalized_pos(p: &Vec3) -> [f32; 3] {
    [0, 1, 2].map(|k| ((p[k] - POS_CENTER[k]) / POS_SCALE).clamp(-1.0, 1.0) as f32)
}

impl CholecEnv {
    pub fn new(config: EnvConfig) -> Result<Self, SimError> {
        let template = Arc::new(SceneTemplate::build(&config)?);
        Self::with_template(config, template)
    }

    /// Builds an environment on an already-settled scene (shared across lanes).
    pub fn with_template(config: EnvConfig, template: Arc<SceneTemplate>) -> Result<Self, SimError> {
        config.validate()?;
        let state = Self::initial_state(&config, &template, 0);
        Ok(Self { config, template, state })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn scene(&self) -> &Scene {
        &self.template.scene
    }

    pub fn template(&self) -> &Arc<SceneTemplate> {
        &self.template
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    fn initial_state(config: &EnvConfig, template: &SceneTemplate, episode_seed: u64) -> WorldState {
        let scene = &template.scene;
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let target_index = rng.gen_range(0..scene.targets.len());
        let j = &config.jitter;
        let mut jitter = |base: &InstrumentPose, ang: f64, mm: f64| {
            let mut u = |m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
            let p = InstrumentPose::new(base.pan_deg + u(ang), base.tilt_deg + u(ang), base.spin_deg + u(ang), base.insertion_mm + u(mm));
            scene.limits.clamp(p)
        };
        let gripper_pose = jitter(&scene.gripper_start, j.gripper_angle_deg, j.gripper_insertion_mm);
        let cauter_pose = jitter(&scene.cauter_start, j.cauter_angle_deg, j.cauter_insertion_mm);
        let body = template.settled.clone();
        let tip = tip_transform(&scene.gripper_trocar, &gripper_pose);
        let grasp = scene.grasp_vertices.iter().map(|&v| GraspBinding::attach(&body, v, &tip)).collect();
        let target = scene.targets[target_index];
        let visibility = occlusion_query(&body.vertices, &body.triangles, &scene.camera.position, &target, config.n_rays);
        let mut state = WorldState {
            body,
            grasp,
            target_index,
            target,
            gripper_pose,
            cauter_pose,
            step: 0,
            done: false,
            outcome: None,
            visibility,
            collisions: CollisionReport::default(),
        };
        state.collisions = Self::collisions_for(scene, &state);
        state
    }

    /// Starts a new episode; the start state depends only on `episode_seed`.
    pub fn reset(&mut self, episode_seed: u64) -> Observation {
        self.state = Self::initial_state(&self.config, &self.template, episode_seed);
        self.observe()
    }

    pub fn gripper_tip(&self) -> TipTransform {
        tip_transform(&self.template.scene.gripper_trocar, &self.state.gripper_pose)
    }

    pub fn cauter_tip(&self) -> TipTransform {
        tip_transform(&self.template.scene.cauter_trocar, &self.state.cauter_pose)
    }

    pub fn distance_to_target(&self) -> f64 {
        (self.cauter_tip().position - self.state.target.center_mm).norm()
    }

    fn capsules(scene: &Scene, state: &WorldState) -> (Capsule, Capsule) {
        let g = tip_transform(&scene.gripper_trocar, &state.gripper_pose);
        let c = tip_transform(&scene.cauter_trocar, &state.cauter_pose);
        (
            Capsule { a: scene.gripper_trocar.pivot_mm, b: g.position, radius: scene.instrument_radius_mm },
            Capsule { a: scene.cauter_trocar.pivot_mm, b: c.position, radius: scene.instrument_radius_mm },
        )
    }

    fn collisions_for(scene: &Scene, state: &WorldState) -> CollisionReport {
        let (g, c) = Self::capsules(scene, state);
        detect_collisions(&state.body, &scene.liver, &g, &c, scene.tissue_offset_mm)
    }

    fn apply_action(&self, pose: &InstrumentPose, action: &AgentAction) -> Result<(InstrumentPose, u32), SimError> {
        let limits = &self.template.scene.limits;
        match action {
            AgentAction::Discrete(a) => Ok((apply_discrete(pose, *a, limits)?, 0)),
            AgentAction::Continuous(axes) => {
                let u = apply_continuous(pose, *axes, &ContinuousScale(self.config.continuous_scale), limits);
                Ok((u.pose, u.clamped_axes))
            }
        }
    }

    /// Advances the episode by one 1/30 s step under `joint`.
    pub fn step(&mut self, joint: &JointAction) -> Result<StepResult, SimError> {
        if self.state.done {
            return Err(SimError::StepAfterDone);
        }
        let (gripper_pose, clamped_g) = self.apply_action(&self.state.gripper_pose, &joint.gripper)?;
        let (cauter_pose, clamped_c) = self.apply_action(&self.state.cauter_pose, &joint.cauter)?;
        let template = Arc::clone(&self.template);
        let scene = &template.scene;
        let cfg = &self.config;
        let st = &mut self.state;
        st.gripper_pose = gripper_pose;
        st.cauter_pose = cauter_pose;
        let gtip = tip_transform(&scene.gripper_trocar, &st.gripper_pose);
        step_physics(&mut st.body, &st.grasp, &gtip, DT, cfg.substeps, &template.physics)
            .map_err(|d| SimError::Diverged { step: st.step, vertex: d.vertex })?;
        let newly_broken = update_grasp(&mut st.grasp, &st.body, &gtip, cfg.grasp_break_threshold_mm, &template.physics);
        st.collisions = Self::collisions_for(scene, st);
        st.visibility = occlusion_query(&st.body.vertices, &st.body.triangles, &scene.camera.position, &st.target, cfg.n_rays);
        st.step += 1;

        let ctip = tip_transform(&scene.cauter_trocar, &st.cauter_pose);
        let distance_mm = (ctip.position - st.target.center_mm).norm();
        let success = distance_mm <= cfg.success_tolerance_mm && st.visibility.visible_fraction >= cfg.visibility_success_threshold;
        let lost = st.grasp.iter().all(|b| b.broken);
        let outcome = if success {
            Some(Outcome::ReachedGoal)
        } else if lost {
            Some(Outcome::LostGrasp)
        } else if st.step >= cfg.time_limit_steps {
            Some(Outcome::RanOutOfTime)
        } else {
            None
        };
        st.done = outcome.is_some();
        st.outcome = outcome;

        let terms = RewardTerms {
            distance_mm,
            visible_fraction: st.visibility.visible_fraction,
            obstructing_triangles: st.visibility.obstructing_triangles,
            newly_broken,
            gripper_insertion_mm: st.gripper_pose.insertion_mm,
            collisions: st.collisions,
            success,
            lost_grasp_terminal: outcome == Some(Outcome::LostGrasp),
        };
        let info = StepInfo {
            step_index: st.step,
            gripper_tip: [gtip.position.x, gtip.position.y, gtip.position.z],
            cauter_tip: [ctip.position.x, ctip.position.y, ctip.position.z],
            distance_mm,
            visible_fraction: st.visibility.visible_fraction,
            obstructing_triangles: st.visibility.obstructing_triangles,
            grasp_count: st.grasp.iter().filter(|b| !b.broken).count(),
            newly_broken,
            max_elongation_mm: st.grasp.iter().filter(|b| !b.broken).map(|b| b.elongation_mm).fold(0.0, f64::max),
            clamped_axes: clamped_g + clamped_c,
        };
        let collisions = st.collisions;
        Ok(StepResult {
            observation: self.observe(),
            reward_gripper: reward_gripper(&terms, &self.config.weights),
            reward_cauter: reward_cauter(&terms, &self.config.weights),
            done: outcome.is_some(),
            truncated: outcome == Some(Outcome::RanOutOfTime),
            outcome,
            collisions,
            info,
        })
    }

    /// The shared observation of the current state.
    pub fn observe(&self) -> Observation {
        match self.config.obs_mode {
            ObsMode::Features => Observation::Features(self.features()),
            ObsMode::Image => {
                let [w, h] = self.config.image_size;
                Observation::Image(self.render(w, h))
            }
        }
    }

    pub fn render(&self, width: u32, height: u32) -> RgbImage {
        let scene = &self.template.scene;
        let (g, c) = Self::capsules(scene, &self.state);
        let frame = FrameContents {
            liver: &scene.liver,
            liver_surface: &scene.liver_surface,
            gallbladder_vertices: &self.state.body.vertices,
            gallbladder_triangles: &self.state.body.triangles,
            gripper: (g.a, g.b),
            cauter: (c.a, c.b),
            instrument_radius: scene.instrument_radius_mm,
            target: self.state.target,
        };
        render(&scene.camera, &frame, width, height)
    }

    /// Feature observation, every component in [-1, 1]:
    /// `[0..4)` gripper pose, `[4..8)` cauter pose (each scaled to its limits),
    /// `[8..11)` gripper tip, `[11..14)` cauter tip, `[14..17)` target centre,
    /// `[17..20)` cauter tip minus target, `20` distance, `21` visible fraction,
    /// `22` obstructing triangles per ray, `23` unbroken grasp share,
    /// `24` step fraction, `25` largest grasp elongation per break threshold.
    pub fn features(&self) -> Vec<f32> {
        let scene = &self.template.scene;
        let st = &self.state;
        let lim = &scene.limits;
        let mut f = Vec::with_capacity(FEATURE_LEN);
        for pose in [&st.gripper_pose, &st.cauter_pose] {
            for (k, x) in pose.as_array().iter().enumerate() {
                let span = lim.upper[k] - lim.lower[k];
                let v = if span > 0.0 { 2.0 * (x - lim.lower[k]) / span - 1.0 } else { 0.0 };
                f.push(v.clamp(-1.0, 1.0) as f32);
            }
        }
        let gtip = self.gripper_tip().position;
        let ctip = self.cauter_tip().position;
        f.extend(normalized_pos(&gtip));
        f.extend(normalized_pos(&ctip));
        f.extend(normalized_pos(&st.target.center_mm));
        let rel = ctip - st.target.center_mm;
        f.extend([0, 1, 2].map(|k| (rel[k] / POS_SCALE).clamp(-1.0, 1.0) as f32));
        f.push((rel.norm() / POS_SCALE).clamp(0.0, 1.0) as f32);
        f.push(st.visibility.visible_fraction as f32);
        f.push((f64::from(st.visibility.obstructing_triangles) / self.config.n_rays as f64).clamp(0.0, 1.0) as f32);
        f.push((st.unbroken_grasps() as f64 / st.grasp.len().max(1) as f64) as f32);
        f.push((f64::from(st.step) / f64::from(self.config.time_limit_steps)).clamp(0.0, 1.0) as f32);
        let max_el = st.grasp.iter().filter(|b| !b.broken).map(|b| b.elongation_mm).fold(0.0, f64::max);
        f.push((max_el / self.config.grasp_break_threshold_mm).clamp(0.0, 1.0) as f32);
        debug_assert_eq!(f.len(), FEATURE_LEN);
        f
    }

    /// Replaces the world state (for constructed test scenes and replays).
    pub fn set_state(&mut self, state: WorldState) {
        self.state = state;
    }
}
