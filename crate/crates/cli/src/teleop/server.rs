//! WebSocket front end. One task owns the session and paces it to wall-clock time;
//! connection tasks talk to it only through queues.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio::time::{interval, MissedTickBehavior};

use super::session::TeleopSession;
use super::wire::{parse_inbound, TeleopMessage};

/// Outbound frames queued per client before state snapshots start being dropped.
const CLIENT_QUEUE: usize = 16;

pub const WS_PATH: &str = "/ws";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    pub broadcast_hz: f64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { broadcast_hz: 20.0 }
    }
}

enum Event {
    Join { id: u64, tx: mpsc::Sender<Arc<str>> },
    Leave { id: u64 },
    Inbound { id: u64, msg: TeleopMessage },
}

#[derive(Clone)]
struct AppState {
    events: mpsc::UnboundedSender<Event>,
    next_id: Arc<AtomicU64>,
}

/// Serves `session` on `listener` until the listener fails.
pub async fn serve(listener: TcpListener, session: TeleopSession, options: ServeOptions) -> std::io::Result<()> {
    let (events, rx) = mpsc::unbounded_channel();
    tokio::spawn(session_loop(session, rx, options));
    let state = AppState {
        events,
        next_id: Arc::new(AtomicU64::new(0)),
    };
    let app = Router::new().route(WS_PATH, get(upgrade)).with_state(state);
    axum::serve(listener, app).await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: AppState) {
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let (out_tx, mut out_rx) = mpsc::channel::<Arc<str>>(CLIENT_QUEUE);
    if state.events.send(Event::Join { id, tx: out_tx.clone() }).is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(text) = out_rx.recv().await {
            if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(frame)) = stream.next().await {
        let reply = match frame {
            Message::Text(text) => match parse_inbound(text.as_str()) {
                Ok(msg) => {
                    let _ = state.events.send(Event::Inbound { id, msg });
                    None
                }
                Err(e) => Some(e),
            },
            Message::Binary(_) => Some("binary frames are not supported".to_string()),
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => None,
        };
        if let Some(msg) = reply {
            let _ = out_tx.try_send(TeleopMessage::error(msg).to_json().into());
        }
    }
    let _ = state.events.send(Event::Leave { id });
    writer.abort();
}

struct Client {
    id: u64,
    tx: mpsc::Sender<Arc<str>>,
}

fn send(client: &Client, msg: &TeleopMessage) {
    // A full queue means a slow reader; it misses this frame.
    let _ = client.tx.try_send(msg.to_json().into());
}

async fn session_loop(mut session: TeleopSession, mut events: mpsc::UnboundedReceiver<Event>, options: ServeOptions) {
    // Clients in connection order; the first one holds command authority.
    let mut clients: Vec<Client> = Vec::new();
    let mut pending: Vec<(u64, TeleopMessage)> = Vec::new();
    let mut control = interval(Duration::from_secs_f64(session.dt()));
    control.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut broadcast = interval(Duration::from_secs_f64(1.0 / options.broadcast_hz));
    broadcast.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let clips = TeleopMessage::Clips {
        ids: session.clip_ids().to_vec(),
    };
    loop {
        tokio::select! {
            ev = events.recv() => match ev {
                None => break,
                Some(Event::Join { id, tx }) => {
                    let client = Client { id, tx };
                    send(&client, &clips);
                    clients.push(client);
                    log::info!("teleop client {id} connected ({} total)", clients.len());
                }
                Some(Event::Leave { id }) => {
                    clients.retain(|c| c.id != id);
                    pending.retain(|(from, _)| *from != id);
                    log::info!("teleop client {id} left ({} remaining)", clients.len());
                }
                Some(Event::Inbound { id, msg }) => {
                    if clients.first().is_some_and(|c| c.id == id) {
                        pending.push((id, msg));
                    } else if let Some(c) = clients.iter().find(|c| c.id == id) {
                        send(c, &TeleopMessage::error("read-only connection: another client holds command authority"));
                    }
                }
            },
            _ = control.tick() => {
                for (id, msg) in pending.drain(..) {
                    if let Err(e) = session.apply(&msg) {
                        if let Some(c) = clients.iter().find(|c| c.id == id) {
                            send(c, &TeleopMessage::error(e));
                        }
                    }
                }
                if let Some(err) = session.step() {
                    log::warn!("teleop: {err}");
                    let msg = TeleopMessage::error(err);
                    clients.iter().for_each(|c| send(c, &msg));
                }
            }
            _ = broadcast.tick() => {
                if !clients.is_empty() {
                    let text: Arc<str> = TeleopMessage::State(session.snapshot()).to_json().into();
                    for c in &clients {
                        let _ = c.tx.try_send(text.clone());
                    }
                }
            }
        }
    }
}
