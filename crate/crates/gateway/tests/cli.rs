use std::fs;
use std::path::Path;

use clap::Parser;

use cholec_core::env::{ObsMode, FEATURE_LEN};
use cholec_eval::ReplayLog;
use cholec_gateway::cli::{replay_frames, resolve_config, run, Cli, GlobalArgs};
use cholec_gateway::pipeline::{outcome_fractions_between, TrainPlan, CHECKPOINT_FILE, EVALS_FILE, TELEMETRY_FILE};
use cholec_gateway::session::ServerMessage;
use cholec_gateway::settings::AppConfig;
use cholec_nn::checkpoint::Checkpoint;
use cholec_nn::Architecture;

fn cli(args: &[&str]) -> anyhow::Result<String> {
    let parsed = Cli::try_parse_from(std::iter::once("cholec").chain(args.iter().copied()))?;
    let mut out = Vec::new();
    run(parsed, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn small_config(dir: &Path) -> String {
    let mut cfg = AppConfig::default();
    cfg.env.time_limit_steps = 40;
    cfg.ppo.batch_steps = 96;
    cfg.ppo.n_parallel_envs = 4;
    cfg.ppo.epochs_per_iteration = 2;
    cfg.ppo.minibatches_per_epoch = 2;
    cfg.architecture = Some(Architecture::features_small(FEATURE_LEN));
    cfg.train.eval_every_iterations = 1;
    cfg.train.eval_episodes = 2;
    cfg.train.checkpoint_every_iterations = 1;
    let path = dir.join("small.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn settings_precedence_is_defaults_file_env_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"seed": 5, "session": {"port": 9000}, "train": {"total_steps": 100}}"#).unwrap();
    let global = GlobalArgs { config: Some(path.clone()), seed: None, obs_mode: None };

    let cfg = resolve_config(&global, []).unwrap();
    assert_eq!((cfg.seed, cfg.session.port, cfg.train.total_steps), (5, 9000, 100));
    assert_eq!(cfg.ppo.batch_steps, 2560);

    let vars = [
        ("CHOLEC_SEED".to_string(), "6".to_string()),
        ("CHOLEC_SESSION__PORT".to_string(), "9001".to_string()),
        ("CHOLEC_ENV__OBS_MODE".to_string(), "image".to_string()),
        ("CHOLEC_EVAL__TEAM".to_string(), "heuristic,noop".to_string()),
        ("UNRELATED".to_string(), "x".to_string()),
    ];
    let cfg = resolve_config(&global, vars.clone()).unwrap();
    assert_eq!((cfg.seed, cfg.session.port, cfg.env.obs_mode), (6, 9001, ObsMode::Image));
    assert_eq!(cfg.eval.team, "heuristic,noop");

    let flags = GlobalArgs { seed: Some(7), obs_mode: Some(ObsMode::Features), ..global };
    let cfg = resolve_config(&flags, vars).unwrap();
    assert_eq!((cfg.seed, cfg.env.obs_mode), (7, ObsMode::Features));
}

#[test]
fn bad_configuration_is_reported() {
    let none = GlobalArgs::default();
    let e = resolve_config(&none, [("CHOLEC_PPO__NOT_A_KEY".into(), "1".into())]).unwrap_err();
    assert!(format!("{e:#}").contains("not_a_key"), "{e:#}");
    let e = resolve_config(&none, [("CHOLEC_SEED".into(), "minus one".into())]).unwrap_err();
    assert!(format!("{e:#}").contains("CHOLEC_"), "{e:#}");

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, "{ nope").unwrap();
    let e = cli(&["--config", p.to_str().unwrap(), "gradcheck"]).unwrap_err();
    assert!(format!("{e:#}").contains("bad.json"));
    assert!(cli(&["--config", "/does/not/exist.json", "gradcheck"]).is_err());
    fs::write(&p, r#"{"schema_version": 2}"#).unwrap();
    assert!(cli(&["--config", p.to_str().unwrap(), "gradcheck"]).is_err());
}

#[test]
fn unknown_flags_are_rejected() {
    let e = Cli::try_parse_from(["cholec", "eval", "--bogus"]).unwrap_err();
    assert!(e.to_string().contains("--bogus"));
    assert!(Cli::try_parse_from(["cholec", "--obs-mode", "sonar", "gradcheck"]).is_err());
    assert!(Cli::try_parse_from(["cholec", "launch"]).is_err());
}

#[test]
fn gradcheck_command_passes() {
    let out = cli(&["gradcheck"]).unwrap();
    assert!(out.contains("max relative error"), "{out}");
}

#[test]
fn train_zero_steps_writes_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    cli(&["--seed", "4", "train", "--steps", "0", "--out", out.to_str().unwrap()]).unwrap();
    let ck = Checkpoint::load(&out.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.step, 0);
    assert_eq!(ck.agents.len(), 2);
    assert_eq!(ck.agents[0].net.arch, Architecture::features(FEATURE_LEN));
    let telemetry = fs::read_to_string(out.join(TELEMETRY_FILE)).unwrap();
    assert_eq!(telemetry.lines().count(), 1);
}

#[test]
fn training_resumes_into_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let straight = dir.path().join("straight");
    let split = dir.path().join("split");
    cli(&["--config", &cfg, "train", "--steps", "192", "--out", straight.to_str().unwrap()]).unwrap();
    cli(&["--config", &cfg, "train", "--steps", "96", "--out", split.to_str().unwrap()]).unwrap();
    let ck = split.join(CHECKPOINT_FILE);
    let resume = dir.path().join("resume.ckpt");
    fs::copy(&ck, &resume).unwrap();
    cli(&["--config", &cfg, "train", "--steps", "192", "--out", split.to_str().unwrap(), "--resume", resume.to_str().unwrap()]).unwrap();

    let a = Checkpoint::load(&straight.join(CHECKPOINT_FILE)).unwrap();
    let b = Checkpoint::load(&ck).unwrap();
    assert_eq!(a.step, 192);
    assert_eq!(a, b);
    assert_eq!(fs::read(straight.join(TELEMETRY_FILE)).unwrap(), fs::read(split.join(TELEMETRY_FILE)).unwrap());
    assert_eq!(fs::read(straight.join(EVALS_FILE)).unwrap(), fs::read(split.join(EVALS_FILE)).unwrap());
    assert_eq!(fs::read_to_string(split.join(EVALS_FILE)).unwrap().lines().count(), 3);
}

#[test]
fn trained_checkpoint_drives_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run_dir = dir.path().join("run");
    cli(&["--config", &cfg, "train", "--steps", "96", "--out", run_dir.to_str().unwrap()]).unwrap();
    let ck = run_dir.join(CHECKPOINT_FILE);
    let reports = dir.path().join("reports");
    let out = cli(&[
        "--config",
        &cfg,
        "eval",
        "--episodes",
        "2",
        "--team",
        "policy,policy-greedy",
        "--checkpoint-gripper",
        ck.to_str().unwrap(),
        "--checkpoint-cauter",
        ck.to_str().unwrap(),
        "--out",
        reports.to_str().unwrap(),
    ])
    .unwrap();
    assert!(out.contains("policy+policy-greedy"), "{out}");

    // a features checkpoint cannot drive an image-mode evaluation
    let e = cli(&[
        "--config",
        &cfg,
        "--obs-mode",
        "image",
        "eval",
        "--episodes",
        "1",
        "--team",
        "policy,noop",
        "--checkpoint-gripper",
        ck.to_str().unwrap(),
        "--out",
        reports.to_str().unwrap(),
    ]);
    assert!(e.is_err());
    // policy without a checkpoint
    let e = cli(&["eval", "--team", "noop,policy", "--out", reports.to_str().unwrap()]).unwrap_err();
    assert!(format!("{e:#}").contains("--checkpoint-cauter"));
}

#[test]
fn eval_reports_are_byte_identical_and_replays_check_out() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        cli(&["--seed", "7", "eval", "--episodes", "1", "--team", "heuristic,random", "--out", d.to_str().unwrap()]).unwrap();
    }
    let ra = read_dir_bytes(&a);
    assert_eq!(ra, read_dir_bytes(&b));
    let replay = ra.iter().find(|(n, _)| n.starts_with("replay_")).unwrap();
    let path = a.join(&replay.0);
    let out = cli(&["replay", path.to_str().unwrap()]).unwrap();
    assert!(out.starts_with("replay ok"), "{out}");
    let frames = cli(&["replay", "--frames", path.to_str().unwrap()]).unwrap();
    let log = ReplayLog::load(&path).unwrap();
    // initial frame, one per step, and the summary
    assert_eq!(frames.lines().count(), log.actions.len() + 3);

    let (msgs, rerun) = replay_frames(&log).unwrap();
    assert_eq!(rerun.digests, log.digests);
    assert!(matches!(msgs.last(), Some(ServerMessage::EpisodeSummary { .. })));

    // a tampered digest is caught
    let text = fs::read_to_string(&path).unwrap();
    let d = format!("{:016x}", log.digests[0]);
    fs::write(&path, text.replacen(&d, "0000000000000000", 1)).unwrap();
    assert!(cli(&["replay", path.to_str().unwrap()]).is_err());
}

#[test]
fn scene_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("scene.json");
    cli(&["scene", "dump", p.to_str().unwrap()]).unwrap();
    let out = cli(&["scene", "check", p.to_str().unwrap()]).unwrap();
    assert!(out.contains("triangles"));
    fs::write(&p, "{}").unwrap();
    assert!(cli(&["scene", "check", p.to_str().unwrap()]).is_err());
}

#[test]
fn play_reports_a_port_in_use() {
    let taken = std::net::TcpListener::bind("0.0.0.0:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let e = cli(&["play", "--port", &port, "--team", "human,noop"]).unwrap_err();
    assert!(format!("{e:#}").contains("cannot listen"), "{e:#}");
}

#[test]
fn outcome_windows_weight_by_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = small_config(dir.path());
    let cfg = AppConfig::load(Some(Path::new(&cfg_path)), []).unwrap();
    let plan = TrainPlan {
        out_dir: dir.path().join("run"),
        total_steps: 288,
        checkpoint_every: 0,
        eval_every: 0,
        eval_episodes: 0,
        eval_seed_base: 0,
        target_success: None,
    };
    let report = cholec_gateway::pipeline::train(cfg.train_config(), None, &plan, |_| {}, |_| {}).unwrap();
    assert_eq!(report.stats.len(), 3);
    assert!(report.evals.is_empty());
    let mut rdr = csv::Reader::from_path(plan.out_dir.join(TELEMETRY_FILE)).unwrap();
    assert_eq!(rdr.records().count(), 3);

    let counts = report.stats.iter().fold([0u32; 3], |mut acc, s| {
        for k in 0..3 {
            acc[k] += s.outcome_counts[k];
        }
        acc
    });
    let total: u32 = counts.iter().sum();
    match outcome_fractions_between(&report.stats, 0, 288) {
        Some(f) => {
            for k in 0..3 {
                assert_eq!(f[k], counts[k] as f64 / total as f64);
            }
        }
        None => assert_eq!(total, 0),
    }
    assert_eq!(outcome_fractions_between(&report.stats, 288, 1000), None);
    assert_eq!(outcome_fractions_between(&[], 0, 100), None);
}
