//! JSON messages exchanged with console clients. Every message is a single
//! websocket text frame carrying an object with a `type` tag.

use serde::{Deserialize, Serialize};
use sketchfuse_core::{CameraPose, Frame};

/// A drawn polygon. Pixel-frame vertices need the camera that took the
/// image, either by sensor id or as an explicit pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchMessage {
    /// Tick the operator was looking at. Absent means "now".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<u64>,
    pub operator_id: u32,
    pub frame: Frame,
    pub vertices: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<CameraPose>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum Control {
    Pause,
    Resume,
    /// Multiplies the tick rate; 2 means twice as fast.
    Speed {
        factor: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Sketch(SketchMessage),
    Control(Control),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "of", rename_all = "lowercase")]
pub enum Ack {
    Sketch {
        operator_id: u32,
        /// Number of enclosed particles.
        m: usize,
        /// Tick that will consume the sketch.
        tick: u64,
    },
    Control {
        paused: bool,
        speed: f64,
        t: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nack {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_id: Option<u32>,
    pub reason: String,
}

/// Belief mass per heatmap cell, row-major with row 0 at the lowest y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorTelemetry {
    pub operator_id: u32,
    pub alpha: f64,
    pub beta: f64,
    pub mean: f64,
    /// Enclosed mass of the sketch consumed this tick, if any.
    pub q_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub t: u64,
    /// Simulated time in seconds.
    pub time: f64,
    /// Dropped for clients that fall behind.
    pub heat: Option<Heatmap>,
    pub mmse: [f64; 2],
    pub map: [f64; 2],
    pub truth: Option<[f64; 2]>,
    pub operators: Vec<OperatorTelemetry>,
}

impl StateFrame {
    /// Copy without the heatmap.
    pub fn telemetry(&self) -> Self {
        Self { heat: None, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Ack(Ack),
    Nack(Nack),
    State(StateFrame),
    /// The scenario horizon was reached; no more frames follow.
    Done {
        t: u64,
    },
}

impl ServerMessage {
    pub fn nack(operator_id: Option<u32>, reason: impl Into<String>) -> Self {
        ServerMessage::Nack(Nack { operator_id, reason: reason.into() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }
}
