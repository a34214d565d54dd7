//! Websocket host for a live session. A single task owns the session and
//! runs the tick loop; client messages reach it through one ordered queue.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::{interval_at, Instant, MissedTickBehavior};

use crate::session::Session;
use crate::wire::{ClientMessage, ServerMessage, StateFrame};
use crate::Result;

/// Frames a client may have in flight before heatmaps are withheld.
pub const OUTBOX_CAPACITY: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Full,
    /// Heatmap dropped, scalars kept.
    Telemetry,
    Dropped,
}

/// Per-client frame queue. Once the queue is half full the client only gets
/// scalar telemetry; a full queue drops the frame.
#[derive(Debug, Clone)]
pub struct Outbox {
    tx: mpsc::Sender<Arc<StateFrame>>,
    capacity: usize,
}

impl Outbox {
    pub fn new(capacity: usize) -> (Self, mpsc::Receiver<Arc<StateFrame>>) {
        let (tx, rx) = mpsc::channel(capacity);
        (Self { tx, capacity }, rx)
    }

    pub fn offer(&self, frame: &Arc<StateFrame>) -> Delivery {
        let (item, kind) = if self.tx.capacity() * 2 > self.capacity {
            (frame.clone(), Delivery::Full)
        } else {
            (Arc::new(frame.telemetry()), Delivery::Telemetry)
        };
        match self.tx.try_send(item) {
            Ok(()) => kind,
            Err(_) => Delivery::Dropped,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.tx.is_closed()
    }
}

enum Inbound {
    Message(ClientMessage, oneshot::Sender<ServerMessage>),
    Join(u64, Outbox),
}

#[derive(Clone)]
struct AppState {
    inbound: mpsc::Sender<Inbound>,
    next_client: Arc<std::sync::atomic::AtomicU64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    /// Simulated seconds per wall-clock second.
    pub realtime_factor: f64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { realtime_factor: 1.0 }
    }
}

/// A running server.
pub struct Server {
    pub addr: SocketAddr,
    pub http: JoinHandle<()>,
    /// Finishes when the session reaches its horizon, returning the session.
    pub ticker: JoinHandle<Result<Session>>,
}

/// Bind `port` (0 picks a free one) and start serving `session` at `/ws`.
pub async fn serve(session: Session, port: u16, options: ServeOptions) -> Result<Server> {
    let listener = TcpListener::bind(("127.0.0.1", port)).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = mpsc::channel(1024);
    let state = AppState { inbound: tx, next_client: Arc::default() };
    let app = Router::new().route("/ws", get(upgrade)).with_state(state);
    let http = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            log::error!("server stopped: {e}");
        }
    });
    let ticker = tokio::spawn(run_session(session, rx, options));
    log::info!("session listening on ws://{addr}/ws");
    Ok(Server { addr, http, ticker })
}

async fn run_session(mut session: Session, mut inbound: mpsc::Receiver<Inbound>, options: ServeOptions) -> Result<Session> {
    let mut clients: Vec<(u64, Outbox)> = Vec::new();
    let mut period = Duration::from_secs_f64(session.tick_period(options.realtime_factor));
    let mut ticks = interval_at(Instant::now() + period, period);
    ticks.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            biased;
            msg = inbound.recv() => match msg {
                Some(Inbound::Join(id, outbox)) => {
                    log::info!("session {}: client {id} joined", session.id());
                    clients.push((id, outbox));
                }
                Some(Inbound::Message(m, reply)) => {
                    let response = match m {
                        ClientMessage::Sketch(s) => session.ingest_sketch(&s),
                        ClientMessage::Control(c) => session.control(c),
                    };
                    let new_period = Duration::from_secs_f64(session.tick_period(options.realtime_factor));
                    if new_period != period {
                        period = new_period;
                        ticks = interval_at(Instant::now() + period, period);
                        ticks.set_missed_tick_behavior(MissedTickBehavior::Delay);
                    }
                    let _ = reply.send(response);
                }
                None => return Ok(session),
            },
            _ = ticks.tick(), if !session.paused() => {
                let Some(frame) = session.tick()? else {
                    log::info!("session {}: horizon reached", session.id());
                    return Ok(session);
                };
                let frame = Arc::new(frame);
                clients.retain(|(id, outbox)| {
                    if outbox.is_closed() {
                        log::info!("session {}: client {id} left", session.id());
                        return false;
                    }
                    if outbox.offer(&frame) == Delivery::Dropped {
                        log::debug!("client {id} is behind, frame {} dropped", frame.t);
                    }
                    true
                });
            }
        }
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(socket: WebSocket, state: AppState) {
    let id = state.next_client.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let (outbox, mut frames) = Outbox::new(OUTBOX_CAPACITY);
    if state.inbound.send(Inbound::Join(id, outbox)).await.is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    // Replies are never dropped, so they get their own unbounded queue.
    let (reply_tx, mut replies) = mpsc::unbounded_channel::<ServerMessage>();
    let writer = tokio::spawn(async move {
        let mut last_t = 0;
        loop {
            let msg = tokio::select! {
                biased;
                r = replies.recv() => match r {
                    Some(r) => r,
                    None => break,
                },
                f = frames.recv() => match f {
                    Some(f) => {
                        last_t = f.t;
                        ServerMessage::State((*f).clone())
                    }
                    // The session dropped its end of the queue: horizon reached.
                    None => ServerMessage::Done { t: last_t },
                },
            };
            let done = matches!(msg, ServerMessage::Done { .. });
            if sink.send(Message::Text(msg.to_json().into())).await.is_err() || done {
                break;
            }
        }
        let _ = sink.close().await;
    });

    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match serde_json::from_str::<ClientMessage>(&text) {
            Ok(m) => {
                let (tx, rx) = oneshot::channel();
                if state.inbound.send(Inbound::Message(m, tx)).await.is_err() {
                    ServerMessage::nack(None, "session closed")
                } else {
                    rx.await.unwrap_or_else(|_| ServerMessage::nack(None, "session closed"))
                }
            }
            Err(e) => ServerMessage::nack(None, format!("malformed message: {e}")),
        };
        if reply_tx.send(reply).is_err() {
            break;
        }
    }
    drop(reply_tx);
    let _ = writer.await;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::Heatmap;

    fn frame(t: u64) -> Arc<StateFrame> {
        Arc::new(StateFrame {
            t,
            time: t as f64 * 0.1,
            heat: Some(Heatmap { rows: 1, cols: 1, values: vec![1.0] }),
            mmse: [0.0, 0.0],
            map: [0.0, 0.0],
            truth: None,
            operators: Vec::new(),
        })
    }

    #[test]
    fn slow_client_loses_heatmaps_before_frames() {
        let (outbox, mut rx) = Outbox::new(8);
        let kinds: Vec<Delivery> = (1..=10).map(|t| outbox.offer(&frame(t))).collect();
        use Delivery::*;
        assert_eq!(kinds, [Full, Full, Full, Full, Telemetry, Telemetry, Telemetry, Telemetry, Dropped, Dropped]);
        let mut received = Vec::new();
        while let Ok(f) = rx.try_recv() {
            received.push((f.t, f.heat.is_some()));
        }
        assert_eq!(received.len(), 8);
        assert!(received.windows(2).all(|w| w[0].0 < w[1].0));
        assert_eq!(outbox.offer(&frame(11)), Full);
    }

    #[test]
    fn keeping_up_always_gets_heatmaps() {
        let (outbox, mut rx) = Outbox::new(4);
        for t in 1..=100 {
            assert_eq!(outbox.offer(&frame(t)), Delivery::Full);
            assert!(rx.try_recv().unwrap().heat.is_some());
        }
    }
}
