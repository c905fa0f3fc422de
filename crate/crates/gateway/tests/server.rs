use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use futures::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;

use cholec_core::env::{AgentAction, CholecEnv, EnvConfig, JointAction};
use cholec_eval::{Instrument, TeamSpec};
use cholec_gateway::server::{router, serve, AppState, Ticker};
use cholec_gateway::session::{Buttons, ClientMessage, InputMessage, ServerMessage, Session, SessionConfig, WIRE_SCHEMA};

fn config(team: &str) -> SessionConfig {
    SessionConfig {
        schema_version: WIRE_SCHEMA,
        team: TeamSpec::parse(team, [None, None]).unwrap(),
        tick_rate_hz: 30,
        port: 0,
        env: EnvConfig { time_limit_steps: 200, ..EnvConfig::default() },
        seed: 11,
        max_session_episodes: None,
    }
}

async fn get_json(state: &AppState, uri: &str) -> serde_json::Value {
    let resp = router(state.clone()).oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    serde_json::from_slice(&bytes).unwrap()
}

#[tokio::test]
async fn health_and_config_endpoints() {
    let cfg = config("human,heuristic");
    let state = AppState::new(Session::new(cfg.clone()).unwrap());
    let h = get_json(&state, "/health").await;
    assert_eq!(h["status"], "ok");
    assert_eq!(h["schema_version"], WIRE_SCHEMA);
    assert_eq!(h["tick"], 0);
    assert_eq!(h["clients"], 0);
    state.tick().unwrap();
    state.tick().unwrap();
    assert_eq!(get_json(&state, "/health").await["tick"], 2);

    let c = get_json(&state, "/config").await;
    assert_eq!(serde_json::from_value::<SessionConfig>(c).unwrap(), cfg);

    let resp = router(state).oneshot(Request::get("/nope").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn next_msg(ws: &mut Ws) -> ServerMessage {
    loop {
        let m = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.expect("server went quiet").unwrap().unwrap();
        if let Message::Text(t) = m {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn start(team: &str) -> (AppState, mpsc::Sender<()>, String) {
    let state = AppState::new(Session::new(config(team)).unwrap());
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel(1);
    tokio::spawn(serve(state.clone(), listener, Ticker::Manual(rx)));
    (state, tx, format!("ws://{addr}/session"))
}

/// Waits for an acknowledgement of `tick`, skipping broadcast frames.
async fn await_ack(ws: &mut Ws, tick: u64) {
    loop {
        if let ServerMessage::InputAck { client_tick, .. } = next_msg(ws).await {
            if client_tick == tick {
                return;
            }
        }
    }
}

async fn await_frame(ws: &mut Ws, tick: u64) {
    loop {
        if let ServerMessage::StateFrame(f) = next_msg(ws).await {
            if f.tick == tick {
                return;
            }
        }
    }
}

fn input(axes: [f64; 4], tick: u64) -> String {
    serde_json::to_string(&ClientMessage::Input(InputMessage {
        schema_version: WIRE_SCHEMA,
        client_id: "synthetic".into(),
        instrument: Instrument::Gripper,
        axes,
        buttons: Buttons::default(),
        client_tick: tick,
    }))
    .unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn websocket_inputs_reproduce_the_headless_run() {
    let (state, ticks, url) = start("human,noop").await;
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    assert!(matches!(next_msg(&mut ws).await, ServerMessage::Hello { .. }));

    let axes: Vec<[f64; 4]> = (0..60).map(|t| [0.4 * ((t as f64) * 0.2).cos(), -0.3, 0.0, if t < 25 { 0.8 } else { -0.6 }]).collect();
    for (t, a) in axes.iter().enumerate() {
        let t = t as u64;
        ws.send(Message::Text(input(*a, t).into())).await.unwrap();
        await_ack(&mut ws, t).await;
        ticks.send(()).await.unwrap();
        await_frame(&mut ws, t + 1).await;
    }
    let live = state.session().lock().unwrap().replay_log().clone();

    let mut env = CholecEnv::new(config("human,noop").env).unwrap();
    env.reset(11);
    assert_eq!(live.initial_digest, env.state().digest());
    let mut digests = Vec::new();
    for a in &axes {
        env.step(&JointAction { gripper: AgentAction::Continuous(*a), cauter: AgentAction::NOOP }).unwrap();
        digests.push(env.state().digest());
    }
    assert_eq!(live.digests, digests);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_messages_and_disconnects_produce_warnings() {
    let (state, ticks, url) = start("human,noop").await;
    let (mut a, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    let (mut b, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    next_msg(&mut a).await;
    next_msg(&mut b).await;

    a.send(Message::Text("{\"type\":\"dance\"}".into())).await.unwrap();
    loop {
        if let ServerMessage::Warning { message, .. } = next_msg(&mut a).await {
            assert!(message.contains("unreadable"));
            break;
        }
    }

    a.send(Message::Text(input([1.0; 4], 0).into())).await.unwrap();
    await_ack(&mut a, 0).await;
    a.close(None).await.unwrap();
    loop {
        if let ServerMessage::Warning { message, .. } = next_msg(&mut b).await {
            assert!(message.contains("disconnected"));
            break;
        }
    }
    ticks.send(()).await.unwrap();
    await_frame(&mut b, 1).await;
    let action = state.session().lock().unwrap().replay_log().actions[0];
    assert_eq!(action.gripper, AgentAction::Continuous([0.0; 4]));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn clock_ticker_advances_without_clients() {
    let state = AppState::new(Session::new(config("heuristic,heuristic")).unwrap());
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let task = tokio::spawn(serve(state.clone(), listener, Ticker::Clock(Duration::from_millis(2))));
    tokio::time::sleep(Duration::from_millis(200)).await;
    task.abort();
    assert!(state.session().lock().unwrap().tick_count() > 5);
}
