use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use sketchfuse_core::sim::ScenarioConfig;
use sketchfuse_service::server::{serve, ServeOptions, Server};
use sketchfuse_service::wire::{Ack, ServerMessage, StateFrame};
use sketchfuse_service::{Session, SessionOptions};

type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start(horizon: u64, realtime_factor: f64) -> Server {
    let mut config = ScenarioConfig::reference();
    config.horizon = horizon;
    let session = Session::new(1, config, SessionOptions { heat_factor: 2, ..SessionOptions::default() }).unwrap();
    serve(session, 0, ServeOptions { realtime_factor }).await.unwrap()
}

async fn connect(server: &Server) -> Client {
    connect_async(format!("ws://{}/ws", server.addr)).await.unwrap().0
}

async fn next(client: &mut Client) -> ServerMessage {
    loop {
        let msg = timeout(Duration::from_secs(10), client.next()).await.expect("server went quiet").unwrap().unwrap();
        if let Message::Text(text) = msg {
            return serde_json::from_str(&text).unwrap();
        }
    }
}

/// Next non-frame message, collecting frames seen on the way.
async fn reply(client: &mut Client, frames: &mut Vec<StateFrame>) -> ServerMessage {
    loop {
        match next(client).await {
            ServerMessage::State(f) => frames.push(f),
            other => return other,
        }
    }
}

async fn send(client: &mut Client, json: &str) {
    client.send(Message::Text(json.into())).await.unwrap();
}

#[tokio::test]
async fn frames_are_ordered_and_carry_a_normalised_heatmap() {
    let server = start(40, 50.0).await;
    let mut client = connect(&server).await;
    let mut frames = Vec::new();
    let done = reply(&mut client, &mut frames).await;
    let ServerMessage::Done { t } = done else { panic!("{done:?}") };
    assert_eq!(t, 40);
    assert!(!frames.is_empty());
    assert!(frames.windows(2).all(|w| w[0].t < w[1].t));
    for f in &frames {
        let heat = f.heat.as_ref().expect("a fast client gets heatmaps");
        assert_eq!((heat.rows, heat.cols), (10, 10));
        assert!((heat.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(f.truth.is_some());
    }
    server.ticker.await.unwrap().unwrap();
}

#[tokio::test]
async fn sketches_are_acknowledged_with_their_size() {
    let server = start(1000, 20.0).await;
    let mut client = connect(&server).await;
    let mut frames = Vec::new();

    send(&mut client, r#"{"type":"sketch","operator_id":0,"frame":"world","vertices":[[-1,-1],[11,-1],[11,11],[-1,11]]}"#).await;
    match reply(&mut client, &mut frames).await {
        ServerMessage::Ack(Ack::Sketch { operator_id: 0, m: 400, tick }) => assert!(tick >= 1),
        other => panic!("{other:?}"),
    }

    send(&mut client, r#"{"type":"sketch","operator_id":1,"frame":"world","vertices":[[40,40],[41,40],[41,41]]}"#).await;
    match reply(&mut client, &mut frames).await {
        ServerMessage::Nack(n) => assert!(n.reason.contains("no particle"), "{}", n.reason),
        other => panic!("{other:?}"),
    }

    send(&mut client, r#"{"type":"sketch","operator_id":1,"frame":"px","sensor_id":2,"vertices":[[0,0],[640,0],[640,480],[0,480]]}"#).await;
    assert!(matches!(reply(&mut client, &mut frames).await, ServerMessage::Ack(Ack::Sketch { operator_id: 1, .. })));

    send(&mut client, r#"{"type":"sketch","operator_id":0,"frame":"world","t":0,"vertices":[[0,0],[5,0],[5,5]]}"#).await;
    let stale = reply(&mut client, &mut frames).await;
    let current = frames.last().map_or(0, |f| f.t);
    if current >= 2 {
        assert!(matches!(stale, ServerMessage::Nack(_)), "{stale:?}");
    }

    send(&mut client, "{not json").await;
    match reply(&mut client, &mut frames).await {
        ServerMessage::Nack(n) => assert!(n.reason.starts_with("malformed"), "{}", n.reason),
        other => panic!("{other:?}"),
    }
    server.ticker.abort();
}

#[tokio::test]
async fn pause_resume_and_speed() {
    let server = start(10_000, 10.0).await;
    let mut client = connect(&server).await;
    let mut frames = Vec::new();
    // Let a few frames through.
    while frames.len() < 3 {
        if let ServerMessage::State(f) = next(&mut client).await {
            frames.push(f);
        }
    }

    send(&mut client, r#"{"type":"control","action":"pause"}"#).await;
    let ServerMessage::Ack(Ack::Control { paused: true, t: paused_at, .. }) = reply(&mut client, &mut frames).await else { panic!() };
    // Frames already queued before the pause may still arrive; none after it.
    while let Ok(Some(Ok(Message::Text(text)))) = timeout(Duration::from_millis(150), client.next()).await {
        let ServerMessage::State(f) = serde_json::from_str(&text).unwrap() else { panic!("{text}") };
        assert!(f.t <= paused_at, "frame {} arrived after pausing at {paused_at}", f.t);
    }

    send(&mut client, r#"{"type":"control","action":"speed","factor":3}"#).await;
    let ServerMessage::Ack(Ack::Control { paused: true, speed, t }) = reply(&mut client, &mut frames).await else { panic!() };
    assert_eq!((speed, t), (3.0, paused_at));

    send(&mut client, r#"{"type":"control","action":"resume"}"#).await;
    assert!(matches!(reply(&mut client, &mut frames).await, ServerMessage::Ack(Ack::Control { paused: false, .. })));
    let ServerMessage::State(f) = next(&mut client).await else { panic!() };
    assert_eq!(f.t, paused_at + 1);

    send(&mut client, r#"{"type":"control","action":"speed","factor":-1}"#).await;
    assert!(matches!(reply(&mut client, &mut frames).await, ServerMessage::Nack(_)));
    server.ticker.abort();
}

#[tokio::test]
async fn a_stalled_client_does_not_hold_up_others() {
    let server = start(300, 200.0).await;
    // Connected but never reads.
    let _stalled = connect(&server).await;
    let mut client = connect(&server).await;
    let mut frames = Vec::new();
    let ServerMessage::Done { t } = reply(&mut client, &mut frames).await else { panic!() };
    assert_eq!(t, 300);
    assert!(frames.windows(2).all(|w| w[0].t < w[1].t));
    let session = server.ticker.await.unwrap().unwrap();
    assert_eq!(session.t(), 300);
}
