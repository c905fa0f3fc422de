use std::sync::Arc;

use cholec_core::env::{AgentAction, CholecEnv, EnvConfig, JointAction, SceneTemplate};
use cholec_eval::{run_episode, run_episode_in, ControllerSpec, Instrument, Script, Team, TeamSpec};
use cholec_gateway::session::{
    Buttons, ClientMessage, InputMessage, ServerMessage, Session, SessionConfig, MAX_FRAME_VERTICES, WIRE_SCHEMA,
};
use cholec_nn::{Architecture, PolicyValueNet};

fn env() -> EnvConfig {
    EnvConfig { time_limit_steps: 60, ..EnvConfig::default() }
}

fn config(team: &str) -> SessionConfig {
    SessionConfig {
        schema_version: WIRE_SCHEMA,
        team: TeamSpec::parse(team, [None, None]).unwrap(),
        tick_rate_hz: 30,
        port: 0,
        env: env(),
        seed: 3,
        max_session_episodes: None,
    }
}

fn input(instrument: Instrument, axes: [f64; 4], tick: u64) -> InputMessage {
    InputMessage { schema_version: WIRE_SCHEMA, client_id: "test".into(), instrument, axes, buttons: Buttons::default(), client_tick: tick }
}

fn frames(msgs: &[ServerMessage]) -> usize {
    msgs.iter().filter(|m| matches!(m, ServerMessage::StateFrame(_))).count()
}

#[test]
fn latest_input_wins_within_a_tick() {
    let mut s = Session::new(config("human,noop")).unwrap();
    assert!(s.submit(&input(Instrument::Gripper, [1.0, 0.0, 0.0, 0.0], 1)).is_none());
    assert!(s.submit(&input(Instrument::Gripper, [0.0, 0.0, 0.0, 0.5], 2)).is_none());
    s.tick().unwrap();
    assert_eq!(s.replay_log().actions[0].gripper, AgentAction::Continuous([0.0, 0.0, 0.0, 0.5]));
    // the slot was consumed
    s.tick().unwrap();
    assert_eq!(s.replay_log().actions[1].gripper, AgentAction::Continuous([0.0; 4]));
}

#[test]
fn missing_input_is_zero_axes() {
    let mut s = Session::new(config("human,human")).unwrap();
    s.tick().unwrap();
    let a = s.replay_log().actions[0];
    assert_eq!(a.gripper, AgentAction::Continuous([0.0; 4]));
    assert_eq!(a.cauter, AgentAction::Continuous([0.0; 4]));
}

#[test]
fn out_of_range_axes_are_clamped() {
    let mut s = Session::new(config("human,noop")).unwrap();
    s.submit(&input(Instrument::Gripper, [3.0, -7.0, f64::NAN, 0.25], 0));
    s.tick().unwrap();
    assert_eq!(s.replay_log().actions[0].gripper, AgentAction::Continuous([1.0, -1.0, 0.0, 0.25]));
}

#[test]
fn input_for_an_automated_instrument_is_refused() {
    let mut s = Session::new(config("human,heuristic")).unwrap();
    let w = s.submit(&input(Instrument::Cauter, [1.0; 4], 0));
    assert!(w.unwrap().contains("cauter"));
    let w = s.submit(&InputMessage { schema_version: 9, ..input(Instrument::Gripper, [0.0; 4], 0) });
    assert!(w.unwrap().contains("schema_version"));
}

#[test]
fn one_frame_per_tick_with_increasing_tick() {
    let mut s = Session::new(config("heuristic,heuristic")).unwrap();
    let mut last = 0;
    for _ in 0..80 {
        let msgs = s.tick().unwrap();
        assert_eq!(frames(&msgs), 1);
        let ServerMessage::StateFrame(f) = &msgs[0] else { panic!("frame first") };
        assert!(f.tick > last);
        assert!(f.vertices.len() <= MAX_FRAME_VERTICES);
        last = f.tick;
    }
}

#[test]
fn switch_toggles_the_active_instrument_and_idles_the_other() {
    let mut s = Session::new(config("human,human,switch")).unwrap();
    assert_eq!(s.active_instrument(), Some(Instrument::Gripper));
    s.submit(&input(Instrument::Gripper, [0.0, 0.0, 0.0, 1.0], 0));
    s.tick().unwrap();
    let a = s.replay_log().actions[0];
    assert_eq!(a.gripper, AgentAction::Continuous([0.0, 0.0, 0.0, 1.0]));
    assert_eq!(a.cauter, AgentAction::NOOP);

    let press =
        InputMessage { buttons: Buttons { switch_instrument: true, reset_episode: false }, ..input(Instrument::Gripper, [0.0; 4], 1) };
    s.submit(&press);
    s.tick().unwrap();
    assert_eq!(s.active_instrument(), Some(Instrument::Cauter));
    assert_eq!(s.replay_log().actions[1].gripper, AgentAction::NOOP);

    // one operator: input goes to whichever instrument is active
    s.submit(&input(Instrument::Gripper, [0.5, 0.0, 0.0, 0.0], 2));
    s.tick().unwrap();
    let a = s.replay_log().actions[2];
    assert_eq!(a.cauter, AgentAction::Continuous([0.5, 0.0, 0.0, 0.0]));
    assert_eq!(a.gripper, AgentAction::NOOP);
}

#[test]
fn switch_outside_switch_mode_warns() {
    let mut s = Session::new(config("human,noop")).unwrap();
    let press =
        InputMessage { buttons: Buttons { switch_instrument: true, reset_episode: false }, ..input(Instrument::Gripper, [0.0; 4], 0) };
    assert!(s.submit(&press).is_some());
    assert_eq!(s.active_instrument(), None);
}

#[test]
fn episode_end_pauses_then_reset_starts_the_next_seed() {
    let mut s = Session::new(config("human,noop")).unwrap();
    let mut summaries = 0;
    for _ in 0..60 {
        for m in s.tick().unwrap() {
            if let ServerMessage::EpisodeSummary { metrics, .. } = m {
                assert_eq!(metrics.steps, 60);
                assert_eq!(metrics.episode_seed, 3);
                summaries += 1;
            }
        }
    }
    assert_eq!(summaries, 1);
    assert!(s.env().state().done);
    let msgs = s.tick().unwrap();
    let ServerMessage::StateFrame(f) = &msgs[0] else { panic!() };
    assert!(f.paused);
    assert_eq!(f.step, 60);
    assert_eq!(s.finished_replays().len(), 1);

    let reset =
        InputMessage { buttons: Buttons { switch_instrument: false, reset_episode: true }, ..input(Instrument::Gripper, [0.0; 4], 0) };
    s.submit(&reset);
    let msgs = s.tick().unwrap();
    let ServerMessage::StateFrame(f) = &msgs[0] else { panic!() };
    assert_eq!((f.episode, f.episode_seed, f.step), (1, 4, 0));
}

#[test]
fn episode_limit_refuses_further_resets() {
    let mut cfg = config("human,noop");
    cfg.max_session_episodes = Some(1);
    let mut s = Session::new(cfg).unwrap();
    for _ in 0..60 {
        s.tick().unwrap();
    }
    let reset =
        InputMessage { buttons: Buttons { switch_instrument: false, reset_episode: true }, ..input(Instrument::Gripper, [0.0; 4], 0) };
    s.submit(&reset);
    let msgs = s.tick().unwrap();
    assert!(msgs.iter().any(|m| matches!(m, ServerMessage::Warning { .. })));
    assert_eq!(s.episode(), 0);
}

#[test]
fn disconnect_clears_the_slot() {
    let mut s = Session::new(config("human,noop")).unwrap();
    s.submit(&input(Instrument::Gripper, [1.0; 4], 0));
    assert!(matches!(s.disconnect(Instrument::Gripper), ServerMessage::Warning { .. }));
    s.tick().unwrap();
    assert_eq!(s.replay_log().actions[0].gripper, AgentAction::Continuous([0.0; 4]));
}

#[test]
fn scripted_session_matches_headless_episode() {
    let spec = TeamSpec::parse("heuristic,random", [None, None]).unwrap();
    let headless = run_episode(&env(), &spec, 3, true).unwrap();
    let log = headless.replay.unwrap();
    let mut s = Session::new(config("heuristic,random")).unwrap();
    for _ in 0..log.actions.len() {
        s.tick().unwrap();
    }
    let live = &s.finished_replays()[0];
    assert_eq!(live.initial_digest, log.initial_digest);
    assert_eq!(live.actions, log.actions);
    assert_eq!(live.digests, log.digests);
}

#[test]
fn policy_session_matches_headless_episode() {
    let arch = Architecture::features_small(cholec_core::env::FEATURE_LEN);
    let nets = [
        Arc::new(PolicyValueNet::<f32>::new(arch.clone(), "gripper", 1).unwrap()),
        Arc::new(PolicyValueNet::<f32>::new(arch, "cauter", 2).unwrap()),
    ];
    let template = Arc::new(SceneTemplate::build(&env()).unwrap());
    let mut env_h = CholecEnv::with_template(env(), template.clone()).unwrap();
    let mut team = Team::from_policies(nets.clone(), false);
    let headless = run_episode_in(&mut env_h, &mut team, 3, true).unwrap().replay.unwrap();

    let mut cfg = config("noop,noop");
    let p = ControllerSpec::Policy { checkpoint: "<memory>".into(), greedy: false };
    cfg.team = TeamSpec { gripper: p.clone(), cauter: p, switch_control: false };
    let mut s = Session::with_parts(cfg, template, Team::from_policies(nets, false)).unwrap();
    for _ in 0..headless.actions.len() {
        s.tick().unwrap();
    }
    assert_eq!(s.finished_replays()[0].digests, headless.digests);
}

#[test]
fn human_axes_match_headless_continuous_run() {
    let axes: Vec<[f64; 4]> = (0..40).map(|t| [((t as f64) * 0.3).sin(), 0.5, -0.2, if t < 20 { 1.0 } else { -1.0 }]).collect();
    let mut s = Session::new(config("human,noop")).unwrap();
    for (t, a) in axes.iter().enumerate() {
        s.submit(&input(Instrument::Gripper, *a, t as u64));
        s.tick().unwrap();
    }
    let mut e = CholecEnv::new(env()).unwrap();
    e.reset(3);
    let mut digests = Vec::new();
    for a in &axes {
        if e.state().done {
            break;
        }
        e.step(&JointAction { gripper: AgentAction::Continuous(*a), cauter: AgentAction::NOOP }).unwrap();
        digests.push(e.state().digest());
    }
    let live = s.finished_replays().first().cloned().unwrap_or_else(|| s.replay_log().clone());
    assert_eq!(live.digests, digests);
}

#[test]
fn wire_messages_carry_type_and_schema() {
    let msg = ClientMessage::Input(input(Instrument::Cauter, [0.1, 0.2, 0.3, 0.4], 5));
    let v: serde_json::Value = serde_json::to_value(&msg).unwrap();
    assert_eq!(v["type"], "input");
    assert_eq!(v["schema_version"], WIRE_SCHEMA);
    assert_eq!(v["instrument"], "cauter");
    let back: ClientMessage = serde_json::from_value(v).unwrap();
    assert_eq!(back, msg);

    let mut s = Session::new(config("human,noop")).unwrap();
    for m in s.tick().unwrap() {
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["type"], "state_frame");
        assert_eq!(v["schema_version"], WIRE_SCHEMA);
        assert_eq!(serde_json::from_value::<ServerMessage>(v).unwrap(), m);
    }
}

#[test]
fn invalid_session_configs_are_rejected() {
    let mut c = config("human,noop");
    c.tick_rate_hz = 60;
    assert!(Session::new(c).is_err());
    let mut c = config("human,noop");
    c.max_session_episodes = Some(0);
    assert!(Session::new(c).is_err());
    let mut c = config("noop,noop");
    c.team = TeamSpec { gripper: ControllerSpec::Human, cauter: ControllerSpec::Scripted(Script::Noop), switch_control: true };
    assert!(Session::new(c).is_err());
}
