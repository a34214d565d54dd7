//! One live tracking session: the tracker, the simulated world feeding it,
//! and the queue of operator sketches waiting for the next tick.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use sketchfuse_core::sim::{build_tracker, RunMode, ScenarioConfig, Simulator};
use sketchfuse_core::tracker::Estimates;
use sketchfuse_core::{
    polygon_mask, project_to_ground, Error as CoreError, Frame, OperatorId, ParticleGrid, Polygon, SketchObservation, Tracker,
};

use crate::heat::heatmap;
use crate::wire::{Ack, Control, OperatorTelemetry, ServerMessage, SketchMessage, StateFrame};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    #[default]
    Headless,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionOptions {
    pub mode: SessionMode,
    /// Heatmap pooling factor.
    pub heat_factor: usize,
    /// Feed the configured simulated operators' sketches alongside the
    /// console's.
    pub synthetic_sketches: bool,
    /// Include the simulated truth in frames.
    pub show_truth: bool,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self { mode: SessionMode::Live, heat_factor: 1, synthetic_sketches: false, show_truth: true }
    }
}

pub struct Session {
    id: u64,
    options: SessionOptions,
    config: ScenarioConfig,
    grid: ParticleGrid,
    tracker: Tracker,
    sim: Simulator,
    pending: BTreeMap<u32, VecDeque<SketchObservation>>,
    paused: bool,
    speed: f64,
}

impl Session {
    pub fn new(id: u64, config: ScenarioConfig, options: SessionOptions) -> Result<Self> {
        config.validate()?;
        let grid = config.build_grid()?;
        let tracker = build_tracker(&config, &grid, RunMode::Fused)?;
        let sim = Simulator::new(&config)?;
        let pending = config.operators.iter().map(|o| (o.id, VecDeque::new())).collect();
        Ok(Self { id, options, config, grid, tracker, sim, pending, paused: false, speed: 1.0 })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn mode(&self) -> SessionMode {
        self.options.mode
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn grid(&self) -> &ParticleGrid {
        &self.grid
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    /// Last completed tick; 0 before the first.
    pub fn t(&self) -> u64 {
        self.tracker.belief().t()
    }

    pub fn finished(&self) -> bool {
        self.t() >= self.config.horizon
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// Sketches waiting for `operator_id`.
    pub fn queued(&self, operator_id: u32) -> usize {
        self.pending.get(&operator_id).map_or(0, VecDeque::len)
    }

    /// Wall-clock seconds between ticks.
    pub fn tick_period(&self, realtime_factor: f64) -> f64 {
        self.config.t_s / (realtime_factor * self.speed)
    }

    fn resolve(&self, msg: &SketchMessage) -> std::result::Result<Polygon, String> {
        let points: Vec<Point2<f64>> = msg.vertices.iter().map(|v| Point2::new(v[0], v[1])).collect();
        match msg.frame {
            Frame::World => Polygon::new(points, Frame::World).map_err(|e| e.to_string()),
            Frame::Pixel => {
                let pose = match (&msg.pose, msg.sensor_id) {
                    (Some(pose), _) => pose.clone(),
                    (None, Some(id)) => match self.config.sensors.iter().find(|s| s.id == id) {
                        Some(s) => s.pose().map_err(|e| e.to_string())?,
                        None => return Err(format!("unknown sensor {id}")),
                    },
                    (None, None) => return Err("pixel-frame sketch needs a sensor_id or pose".into()),
                };
                project_to_ground(&points, &pose).map_err(|e| e.to_string())
            }
        }
    }

    /// Resolve a sketch to a particle mask and queue it. Each operator's
    /// sketches are consumed one per tick in arrival order.
    pub fn ingest_sketch(&mut self, msg: &SketchMessage) -> ServerMessage {
        let op = Some(msg.operator_id);
        if !self.pending.contains_key(&msg.operator_id) {
            return ServerMessage::nack(op, format!("unknown operator {}", msg.operator_id));
        }
        if let Some(t) = msg.t {
            if t + 1 < self.t() {
                return ServerMessage::nack(op, format!("stale sketch for t={t}, current tick is {}", self.t()));
            }
        }
        if self.finished() {
            return ServerMessage::nack(op, "session finished");
        }
        let polygon = match self.resolve(msg) {
            Ok(p) => p,
            Err(reason) => return ServerMessage::nack(op, reason),
        };
        let mask = match polygon_mask(&self.grid, &polygon) {
            Ok(m) => m,
            Err(CoreError::EmptySketch) => return ServerMessage::nack(op, CoreError::EmptySketch.to_string()),
            Err(e) => return ServerMessage::nack(op, e.to_string()),
        };
        let m = mask.count();
        let queue = self.pending.get_mut(&msg.operator_id).expect("checked above");
        let tick = self.tracker.next_t() + queue.len() as u64;
        queue.push_back(SketchObservation { operator_id: OperatorId(msg.operator_id), polygon: Some(polygon), mask, t: tick });
        ServerMessage::Ack(Ack::Sketch { operator_id: msg.operator_id, m, tick })
    }

    pub fn control(&mut self, c: Control) -> ServerMessage {
        match c {
            Control::Pause => self.paused = true,
            Control::Resume => self.paused = false,
            Control::Speed { factor } => {
                if !(factor > 0.0 && factor.is_finite()) {
                    return ServerMessage::nack(None, format!("speed factor must be positive, got {factor}"));
                }
                self.speed = factor;
            }
        }
        ServerMessage::Ack(Ack::Control { paused: self.paused, speed: self.speed, t: self.t() })
    }

    /// Advance one step and return the state frame, or `None` past the
    /// horizon. Ignores the pause flag; callers decide when to tick.
    pub fn tick(&mut self) -> Result<Option<StateFrame>> {
        if self.finished() {
            return Ok(None);
        }
        let mut bundle = self.sim.advance(&self.grid, self.options.synthetic_sketches)?;
        for s in bundle.sketches.drain(..) {
            if let Some(q) = self.pending.get_mut(&s.operator_id.0) {
                q.push_back(s);
            }
        }
        for queue in self.pending.values_mut() {
            if let Some(mut s) = queue.pop_front() {
                s.t = bundle.t;
                bundle.sketches.push(s);
            }
        }
        let out = self.tracker.step(&bundle)?;
        let operators = self
            .tracker
            .reliabilities()
            .values()
            .map(|r| OperatorTelemetry {
                operator_id: r.operator_id.0,
                alpha: r.alpha,
                beta: r.beta,
                mean: r.mean(),
                q_s: out.learning.iter().find(|l| l.operator_id == r.operator_id.0).map(|l| l.q_s),
            })
            .collect();
        Ok(Some(self.frame(&out.estimates, operators)))
    }

    fn frame(&self, estimates: &Estimates, operators: Vec<OperatorTelemetry>) -> StateFrame {
        let belief = self.tracker.belief();
        let truth = self.sim.truth().position;
        StateFrame {
            t: belief.t(),
            time: belief.t() as f64 * self.config.t_s,
            heat: Some(heatmap(&self.grid, belief, self.options.heat_factor)),
            mmse: estimates.mmse,
            map: estimates.map,
            truth: self.options.show_truth.then_some([truth.x, truth.y]),
            operators,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sketchfuse_core::sim::ScenarioConfig;

    fn session() -> Session {
        let mut config = ScenarioConfig::reference();
        config.horizon = 30;
        Session::new(1, config, SessionOptions::default()).unwrap()
    }

    fn world_square(operator_id: u32, x: [f64; 2], y: [f64; 2], t: Option<u64>) -> SketchMessage {
        SketchMessage {
            t,
            operator_id,
            frame: Frame::World,
            vertices: vec![[x[0], y[0]], [x[1], y[0]], [x[1], y[1]], [x[0], y[1]]],
            sensor_id: None,
            pose: None,
        }
    }

    #[test]
    fn whole_area_sketch_encloses_every_particle() {
        let mut s = session();
        let ack = s.ingest_sketch(&world_square(0, [-1.0, 11.0], [-1.0, 11.0], None));
        assert_eq!(ack, ServerMessage::Ack(Ack::Sketch { operator_id: 0, m: 400, tick: 1 }));
    }

    #[test]
    fn whole_screen_pixel_sketch_covers_its_footprint() {
        let mut s = session();
        let msg = SketchMessage {
            t: None,
            operator_id: 1,
            frame: Frame::Pixel,
            vertices: vec![[0.0, 0.0], [640.0, 0.0], [640.0, 480.0], [0.0, 480.0]],
            sensor_id: Some(2),
            pose: None,
        };
        let ServerMessage::Ack(Ack::Sketch { m, .. }) = s.ingest_sketch(&msg) else { panic!("expected ack") };
        let pose = s.config().sensors[2].pose().unwrap();
        let expected = s
            .grid()
            .positions()
            .iter()
            .filter(|p| {
                let px = pose.project_to_image(&nalgebra::Point3::new(p.x, p.y, 0.0)).unwrap();
                (0.0..=640.0).contains(&px.x) && (0.0..=480.0).contains(&px.y)
            })
            .count();
        assert!(expected > 0 && expected < 400);
        assert_eq!(m, expected);
    }

    #[test]
    fn off_grid_sketch_is_refused() {
        let mut s = session();
        match s.ingest_sketch(&world_square(0, [20.0, 21.0], [20.0, 21.0], None)) {
            ServerMessage::Nack(n) => assert!(n.reason.contains("no particle"), "{}", n.reason),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.queued(0), 0);
    }

    #[test]
    fn unknown_operator_and_missing_pose_are_refused() {
        let mut s = session();
        assert!(matches!(s.ingest_sketch(&world_square(7, [0.0, 5.0], [0.0, 5.0], None)), ServerMessage::Nack(_)));
        let mut px = world_square(0, [0.0, 5.0], [0.0, 5.0], None);
        px.frame = Frame::Pixel;
        assert!(matches!(s.ingest_sketch(&px), ServerMessage::Nack(_)));
    }

    #[test]
    fn stale_sketches_are_rejected() {
        let mut s = session();
        for _ in 0..5 {
            s.tick().unwrap();
        }
        assert!(matches!(s.ingest_sketch(&world_square(0, [0.0, 5.0], [0.0, 5.0], Some(3))), ServerMessage::Nack(_)));
        for t in [4, 5, 6] {
            assert!(matches!(s.ingest_sketch(&world_square(0, [0.0, 5.0], [0.0, 5.0], Some(t))), ServerMessage::Ack(_)), "t={t}");
        }
    }

    #[test]
    fn queued_sketches_are_consumed_one_per_tick() {
        let mut s = session();
        s.tick().unwrap();
        let acks: Vec<_> = (0..3).map(|_| s.ingest_sketch(&world_square(1, [0.0, 5.0], [0.0, 5.0], None))).collect();
        let ticks: Vec<u64> = acks
            .iter()
            .map(|a| match a {
                ServerMessage::Ack(Ack::Sketch { tick, .. }) => *tick,
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(ticks, [2, 3, 4]);
        for t in 2..=4 {
            let f = s.tick().unwrap().unwrap();
            assert_eq!(f.t, t);
            let op1 = f.operators.iter().find(|o| o.operator_id == 1).unwrap();
            assert!(op1.q_s.is_some(), "tick {t} should learn from one sketch");
            assert!(f.operators.iter().find(|o| o.operator_id == 0).unwrap().q_s.is_none());
            assert_eq!(s.queued(1), (4 - t) as usize);
        }
        assert!(s.tick().unwrap().unwrap().operators.iter().all(|o| o.q_s.is_none()));
    }

    #[test]
    fn frames_advance_and_stop_at_the_horizon() {
        let mut s = session();
        let mut last = 0;
        while let Some(f) = s.tick().unwrap() {
            assert_eq!(f.t, last + 1);
            let heat = f.heat.as_ref().unwrap();
            assert!((heat.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            last = f.t;
        }
        assert_eq!(last, 30);
        assert!(s.finished());
        assert!(matches!(s.ingest_sketch(&world_square(0, [0.0, 5.0], [0.0, 5.0], None)), ServerMessage::Nack(_)));
    }

    #[test]
    fn controls() {
        let mut s = session();
        assert_eq!(s.control(Control::Pause), ServerMessage::Ack(Ack::Control { paused: true, speed: 1.0, t: 0 }));
        assert!(s.paused());
        assert_eq!(s.control(Control::Speed { factor: 2.0 }), ServerMessage::Ack(Ack::Control { paused: true, speed: 2.0, t: 0 }));
        assert!((s.tick_period(1.0) - 0.05).abs() < 1e-15);
        assert!(matches!(s.control(Control::Speed { factor: 0.0 }), ServerMessage::Nack(_)));
        assert!(matches!(s.control(Control::Resume), ServerMessage::Ack(Ack::Control { paused: false, .. })));
    }
}
