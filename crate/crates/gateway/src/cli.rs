//! `cholec` command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cholec_core::env::{AgentAction, CholecEnv, JointAction, ObsMode, SceneTemplate};
use cholec_core::scene::Scene;
use cholec_eval::controller::Controller;
use cholec_eval::{evaluate, replay, write_report, ControllerSpec, EvalError, ReplayLog, Script, Team, TeamSpec};
use cholec_ippo::verify::{policy_gradcheck, GRADCHECK_EPS, GRADCHECK_TOLERANCE};

use crate::pipeline::{self, TrainPlan};
use crate::server::{serve, AppState, Ticker};
use crate::session::{ServerMessage, Session, SessionConfig, WIRE_SCHEMA};
use crate::settings::AppConfig;

#[derive(Debug, Parser)]
#[command(name = "cholec", version, about = "Cooperative laparoscopic cholecystectomy simulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `image` or `features`.
    #[arg(long, global = true, value_name = "MODE")]
    pub obs_mode: Option<ObsMode>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TeamArgs {
    /// `<gripper>,<cauter>[,switch]` from policy, policy-greedy, human, noop, random, heuristic.
    #[arg(long, value_name = "SPEC")]
    pub team: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub checkpoint_gripper: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub checkpoint_cauter: Option<PathBuf>,
}

impl TeamArgs {
    fn spec(&self, default: &str) -> Result<TeamSpec, EvalError> {
        let spec = self.team.as_deref().unwrap_or(default);
        TeamSpec::parse(spec, [self.checkpoint_gripper.as_deref(), self.checkpoint_cauter.as_deref()])
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train both agents; writes checkpoints, telemetry and evaluations.
    Train {
        /// Environment steps to train for (rounded up to whole iterations).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Evaluate a team and write a report.
    Eval {
        #[arg(long)]
        episodes: Option<usize>,
        #[command(flatten)]
        team: TeamArgs,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
    /// Start the session service.
    Play {
        #[arg(long)]
        port: Option<u16>,
        #[command(flatten)]
        team: TeamArgs,
    },
    /// Re-run a replay log and check its digests.
    Replay {
        file: PathBuf,
        /// Print every state frame as a JSON line.
        #[arg(long)]
        frames: bool,
    },
    /// Finite-difference check of the policy network gradients.
    Gradcheck,
    /// Scene files.
    Scene {
        #[command(subcommand)]
        action: SceneCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum SceneCommand {
    /// Write the built-in procedural scene.
    Dump { path: PathBuf },
    /// Load and validate a scene file.
    Check { path: PathBuf },
}

/// Defaults, then `--config`, then `CHOLEC_*` variables, then flags.
pub fn resolve_config(global: &GlobalArgs, vars: impl IntoIterator<Item = (String, String)>) -> anyhow::Result<AppConfig> {
    let mut cfg = AppConfig::load(global.config.as_deref(), vars)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = global.obs_mode {
        cfg.env.obs_mode = mode;
    }
    Ok(cfg)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let cfg = resolve_config(&cli.global, std::env::vars())?;
    match cli.command {
        Command::Train { steps, out: dir, resume } => run_train(&cfg, steps, &dir, resume.as_deref(), out),
        Command::Eval { episodes, team, out: dir } => run_eval(&cfg, episodes, &team, &dir, out),
        Command::Play { port, team } => run_play(&cfg, port, &team, out),
        Command::Replay { file, frames } => run_replay(&file, frames, out),
        Command::Gradcheck => run_gradcheck(cfg.seed, out),
        Command::Scene { action } => run_scene(action, out),
    }
}

fn run_train(cfg: &AppConfig, steps: Option<u64>, dir: &Path, resume: Option<&Path>, out: &mut dyn Write) -> anyhow::Result<()> {
    let t = &cfg.train;
    let plan = TrainPlan {
        out_dir: dir.to_path_buf(),
        total_steps: steps.unwrap_or(t.total_steps),
        checkpoint_every: t.checkpoint_every_iterations,
        eval_every: t.eval_every_iterations,
        eval_episodes: t.eval_episodes,
        eval_seed_base: t.eval_seed_base,
        target_success: t.target_success,
    };
    let report = pipeline::train(
        cfg.train_config(),
        resume,
        &plan,
        |s| {
            tracing::info!(
                iteration = s.iteration,
                env_steps = s.env_steps,
                episodes = s.episodes,
                reached_goal = s.outcome_fractions[0],
                lost_grasp = s.outcome_fractions[1],
                "iteration"
            )
        },
        |p| tracing::info!(iteration = p.iteration, env_steps = p.env_steps, success = p.success_rate, "evaluation"),
    )?;
    writeln!(out, "iterations {} env_steps {}", report.iterations, report.env_steps)?;
    if let Some(p) = report.evals.last() {
        writeln!(out, "last evaluation: {:.1}% success over {} episodes", 100.0 * p.success_rate, p.episodes)?;
    }
    writeln!(out, "checkpoint {}", report.checkpoint.display())?;
    Ok(())
}

fn run_eval(cfg: &AppConfig, episodes: Option<usize>, team: &TeamArgs, dir: &Path, out: &mut dyn Write) -> anyhow::Result<()> {
    let spec = team.spec(&cfg.eval.team)?;
    let n = episodes.unwrap_or(cfg.eval.episodes);
    let ev = evaluate(&cfg.env, &spec, n, cfg.seed, cfg.eval.record_replays)?;
    let files = write_report(&ev, dir)?;
    writeln!(out, "{}", cholec_eval::Aggregate::TABLE_HEADER)?;
    writeln!(out, "{}", ev.aggregate.table_row(&ev.team))?;
    writeln!(out, "report {}", files.csv.display())?;
    writeln!(out, "summary {}", files.summary.display())?;
    Ok(())
}

fn run_play(cfg: &AppConfig, port: Option<u16>, team: &TeamArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let s = &cfg.session;
    let config = SessionConfig {
        schema_version: WIRE_SCHEMA,
        team: team.spec(&s.team)?,
        tick_rate_hz: s.tick_rate_hz,
        port: port.unwrap_or(s.port),
        env: cfg.env.clone(),
        seed: cfg.seed,
        max_session_episodes: s.max_session_episodes,
    };
    let session = Session::new(config.clone())?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let addr = std::net::SocketAddr::from(([0, 0, 0, 0], config.port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot listen on port {} (in use? pick another with --port)", config.port))?;
        writeln!(out, "session service on http://{}", listener.local_addr()?)?;
        out.flush()?;
        let state = AppState::new(session);
        tokio::select! {
            r = serve(state, listener, Ticker::realtime(config.tick_rate_hz)) => r,
            _ = tokio::signal::ctrl_c() => Ok(()),
        }
    })
}

/// Feeds recorded actions back in order.
struct Playback {
    actions: Vec<AgentAction>,
    next: usize,
}

impl Controller for Playback {
    fn reset(&mut self, _episode_seed: u64) {
        self.next = 0;
    }

    fn act(&mut self, _env: &CholecEnv, _obs: &[f32]) -> Result<AgentAction, EvalError> {
        let a = self.actions.get(self.next).copied().ok_or_else(|| EvalError::Replay("replay ran past its last action".into()))?;
        self.next += 1;
        Ok(a)
    }
}

/// Re-runs `log` through a session, returning every frame it emits.
pub fn replay_frames(log: &ReplayLog) -> anyhow::Result<(Vec<ServerMessage>, ReplayLog)> {
    let playback = |f: fn(&JointAction) -> AgentAction| -> Box<dyn Controller> {
        Box::new(Playback { actions: log.actions.iter().map(f).collect(), next: 0 })
    };
    let placeholder = ControllerSpec::Scripted(Script::Noop);
    let spec = TeamSpec { gripper: placeholder.clone(), cauter: placeholder, switch_control: false };
    let team = Team::from_controllers(spec.clone(), [Some(playback(|j| j.gripper)), Some(playback(|j| j.cauter))]);
    let config = SessionConfig {
        schema_version: WIRE_SCHEMA,
        team: spec,
        tick_rate_hz: crate::session::TICK_RATE_HZ,
        port: 0,
        env: log.config.clone(),
        seed: log.episode_seed,
        max_session_episodes: Some(1),
    };
    let template = Arc::new(SceneTemplate::build(&log.config)?);
    let mut session = Session::with_parts(config, template, team)?;
    let mut frames = vec![ServerMessage::StateFrame(Box::new(session.frame(false)))];
    for _ in 0..log.actions.len() {
        frames.extend(session.tick()?);
    }
    let rerun = session.finished_replays().first().cloned().unwrap_or_else(|| session.replay_log().clone());
    Ok((frames, rerun))
}

fn run_replay(file: &Path, frames: bool, out: &mut dyn Write) -> anyhow::Result<()> {
    let log = ReplayLog::load(file)?;
    let check = replay(&log)?;
    if frames {
        let (msgs, rerun) = replay_frames(&log)?;
        if rerun.digests != log.digests {
            bail!("session re-run diverged from {}", file.display());
        }
        for m in msgs {
            writeln!(out, "{}", m.to_json())?;
        }
    }
    let m = &check.metrics;
    writeln!(out, "replay ok: {} steps, outcome {:?}, final digest {:016x}", m.steps, m.outcome, check.final_digest)?;
    Ok(())
}

fn run_gradcheck(seed: u64, out: &mut dyn Write) -> anyhow::Result<()> {
    let r = policy_gradcheck(seed)?;
    writeln!(
        out,
        "gradcheck: {} parameters, eps {GRADCHECK_EPS:e}, max relative error {:.3e} (parameter {}), max absolute error {:.3e}",
        r.n_params, r.max_relative_error, r.worst_index, r.max_abs_error
    )?;
    if r.max_relative_error >= GRADCHECK_TOLERANCE {
        bail!("max relative error {:.3e} exceeds {GRADCHECK_TOLERANCE:e}", r.max_relative_error);
    }
    Ok(())
}

fn run_scene(action: SceneCommand, out: &mut dyn Write) -> anyhow::Result<()> {
    match action {
        SceneCommand::Dump { path } => {
            Scene::procedural().save(&path)?;
            writeln!(out, "wrote {}", path.display())?;
        }
        SceneCommand::Check { path } => {
            let scene = Scene::load(&path)?;
            scene.validate()?;
            writeln!(
                out,
                "{}: {} vertices, {} triangles, {} fixed, {} grasp vertices, {} targets",
                path.display(),
                scene.gallbladder.vertices.len(),
                scene.gallbladder.triangles.len(),
                scene.attachment_patch.len(),
                scene.grasp_vertices.len(),
                scene.targets.len()
            )?;
        }
    }
    Ok(())
}
