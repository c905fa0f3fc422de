//! HTTP and websocket front end around one `Session`.
//!
//! Readers deposit inputs into the session's latest-value slots; a single
//! tick task advances the simulation and broadcasts frames. Slow clients
//! lose frames instead of stalling the loop.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};

use crate::session::{ClientMessage, ServerMessage, Session, SessionConfig, WIRE_SCHEMA};

#[derive(Clone)]
pub struct AppState {
    session: Arc<Mutex<Session>>,
    frames: broadcast::Sender<String>,
    clients: Arc<AtomicUsize>,
    config: Arc<SessionConfig>,
}

impl AppState {
    pub fn new(session: Session) -> Self {
        let config = Arc::new(session.config().clone());
        let (frames, _) = broadcast::channel(64);
        Self { session: Arc::new(Mutex::new(session)), frames, clients: Arc::new(AtomicUsize::new(0)), config }
    }

    pub fn session(&self) -> &Arc<Mutex<Session>> {
        &self.session
    }

    /// Runs one tick and broadcasts its messages.
    pub fn tick(&self) -> anyhow::Result<()> {
        let msgs = self.session.lock().expect("session lock").tick()?;
        for m in msgs {
            // no receivers is fine
            let _ = self.frames.send(m.to_json());
        }
        Ok(())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new().route("/health", get(health)).route("/config", get(config)).route("/session", get(session_ws)).with_state(state)
}

async fn health(State(s): State<AppState>) -> impl IntoResponse {
    let (tick, episode) = {
        let sess = s.session.lock().expect("session lock");
        (sess.tick_count(), sess.episode())
    };
    Json(serde_json::json!({
        "status": "ok",
        "schema_version": WIRE_SCHEMA,
        "tick": tick,
        "episode": episode,
        "clients": s.clients.load(Ordering::Relaxed),
    }))
}

async fn config(State(s): State<AppState>) -> impl IntoResponse {
    Json((*s.config).clone())
}

async fn session_ws(ws: WebSocketUpgrade, State(s): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, s))
}

async fn client(socket: WebSocket, s: AppState) {
    s.clients.fetch_add(1, Ordering::Relaxed);
    let (mut sink, mut stream) = socket.split();
    let mut frames = s.frames.subscribe();
    let (direct_tx, mut direct_rx) = mpsc::unbounded_channel::<String>();
    let hello = ServerMessage::Hello { schema_version: WIRE_SCHEMA, config: Box::new((*s.config).clone()) };
    let _ = direct_tx.send(hello.to_json());

    let writer = tokio::spawn(async move {
        loop {
            let text = tokio::select! {
                Some(t) = direct_rx.recv() => t,
                r = frames.recv() => match r {
                    Ok(t) => t,
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        tracing::debug!(dropped = n, "slow client dropped frames");
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                else => break,
            };
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });

    let mut driven = Vec::new();
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        match serde_json::from_str::<ClientMessage>(&text) {
            Ok(ClientMessage::Input(input)) => {
                let warning = s.session.lock().expect("session lock").submit(&input);
                if !driven.contains(&input.instrument) {
                    driven.push(input.instrument);
                }
                let ack = ServerMessage::InputAck {
                    schema_version: WIRE_SCHEMA,
                    client_id: input.client_id.clone(),
                    client_tick: input.client_tick,
                };
                let _ = direct_tx.send(ack.to_json());
                if let Some(w) = warning {
                    let _ = direct_tx.send(ServerMessage::warning(w).to_json());
                }
            }
            Err(e) => {
                let _ = direct_tx.send(ServerMessage::warning(format!("unreadable message: {e}")).to_json());
            }
        }
    }
    for i in driven {
        let w = s.session.lock().expect("session lock").disconnect(i);
        let _ = s.frames.send(w.to_json());
    }
    drop(direct_tx);
    writer.abort();
    s.clients.fetch_sub(1, Ordering::Relaxed);
}

/// Where ticks come from: the 30 Hz clock, or an external trigger.
pub enum Ticker {
    Clock(Duration),
    Manual(mpsc::Receiver<()>),
}

impl Ticker {
    pub fn realtime(rate_hz: u32) -> Self {
        Ticker::Clock(Duration::from_secs_f64(1.0 / f64::from(rate_hz)))
    }
}

/// Ticks the session until the ticker ends or a tick fails.
pub async fn run_ticks(state: AppState, ticker: Ticker) -> anyhow::Result<()> {
    match ticker {
        Ticker::Clock(period) => {
            let mut iv = tokio::time::interval(period);
            iv.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                iv.tick().await;
                state.tick()?;
            }
        }
        Ticker::Manual(mut rx) => {
            while rx.recv().await.is_some() {
                state.tick()?;
            }
            Ok(())
        }
    }
}

/// Serves on `listener` until the tick loop ends.
pub async fn serve(state: AppState, listener: TcpListener, ticker: Ticker) -> anyhow::Result<()> {
    let app = router(state.clone());
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    let ticks = run_ticks(state, ticker).await;
    server.abort();
    ticks
}
