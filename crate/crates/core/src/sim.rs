//! Synthetic scenarios: ground truth, simulated sensors and operators, and
//! side-by-side runs of the autonomous-only and fused trackers.
//!
//! Every entity draws from its own ChaCha stream under the scenario seed
//! (truth on stream 0, sensor `k` on `1 + k`, operator `j` on `1000 + j`),
//! so both modes see exactly the same truth and observations.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Point2, Point3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grid, Bounds, CameraPose, Frame, Intrinsics, ParticleGrid, Polygon};
use crate::human::{OperatorId, ReliabilityState, SketchObservation};
use crate::learning::{LearningOptions, LearningRecord};
use crate::motion::{step_std, KernelOptions, VelocityMode};
use crate::sensors::{RangeObservation, SensorId};
use crate::tracker::{Belief, FusionWeights, ObservationBundle, SourceId, Tracker, TrackerOptions};

const OPERATOR_STREAM_BASE: u64 = 1000;
const FALSE_SKETCH_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub id: u32,
    /// Ground-plane position the sensor hovers over.
    pub position: [f64; 2],
    pub altitude: f64,
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub intrinsics: Intrinsics,
    pub sigma_d: f64,
    pub p_d: f64,
}

impl SensorConfig {
    pub fn pose(&self) -> Result<CameraPose> {
        CameraPose::new(Point3::new(self.position[0], self.position[1], self.altitude), self.yaw, self.intrinsics.matrix())
    }
}

fn default_sides() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub id: u32,
    /// `(alpha, beta)` of the initial reliability.
    pub prior: [f64; 2],
    pub sketch_radius: f64,
    pub center_error_std: f64,
    pub p_enclose: f64,
    /// Steps between sketches.
    pub cadence: u64,
    /// First sketch at `t = offset` (or `cadence` when zero).
    #[serde(default)]
    pub offset: u64,
    /// Vertex count of the polygon approximating the disc.
    #[serde(default = "default_sides")]
    pub sides: usize,
}

impl OperatorConfig {
    pub fn fires_at(&self, t: u64) -> bool {
        let first = if self.offset == 0 { self.cadence } else { self.offset };
        t >= first && (t - first).is_multiple_of(self.cadence)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Sensor,
    Operator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightOverride {
    pub kind: SourceKind,
    pub id: u32,
    pub weight: f64,
}

/// Which trackers a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// Range sensors only.
    Autonomous,
    /// Range sensors and operator sketches.
    Fused,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Autonomous => "autonomous",
            RunMode::Fused => "fused",
        }
    }
}

fn default_modes() -> Vec<RunMode> {
    vec![RunMode::Autonomous, RunMode::Fused]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub horizon: u64,
    pub t_s: f64,
    pub sigma_p: f64,
    pub v0: [f64; 2],
    /// Where the target starts; the filter is told this position.
    pub start: [f64; 2],
    #[serde(default)]
    pub velocity_mode: VelocityMode,
    /// Kernel entries below this are dropped.
    #[serde(default)]
    pub prune_below: f64,
    pub grid: GridConfig,
    #[serde(default)]
    pub sensors: Vec<SensorConfig>,
    #[serde(default)]
    pub operators: Vec<OperatorConfig>,
    #[serde(default)]
    pub learning: LearningOptions,
    /// Replaces the count-based weight rule when non-empty.
    #[serde(default)]
    pub weights: Vec<WeightOverride>,
    #[serde(default = "default_modes")]
    pub modes: Vec<RunMode>,
}

impl ScenarioConfig {
    /// Three UAVs at 10, 9, and 8 m over a 10 m square with 400 particles,
    /// and two operators with large (2.5 m) and small (1.0 m) sketches.
    pub fn reference() -> Self {
        let sensor = |id: u32, position: [f64; 2], altitude: f64| SensorConfig {
            id,
            position,
            altitude,
            yaw: 0.0,
            intrinsics: Intrinsics::default(),
            sigma_d: 0.05,
            p_d: 0.95,
        };
        let operator = |id: u32, radius: f64, offset: u64| OperatorConfig {
            id,
            prior: [2.0, 2.0],
            sketch_radius: radius,
            center_error_std: 0.2,
            p_enclose: 1.0,
            cadence: 15,
            offset,
            sides: default_sides(),
        };
        Self {
            seed: 7,
            horizon: 150,
            t_s: 0.1,
            sigma_p: 0.5,
            v0: [1.0, 1.0],
            start: [2.25, 2.25],
            velocity_mode: VelocityMode::Fixed,
            prune_below: 0.0,
            grid: GridConfig { x: [0.0, 10.0], y: [0.0, 10.0], rows: 20, cols: 20 },
            sensors: vec![sensor(0, [2.0, 8.0], 10.0), sensor(1, [8.0, 8.0], 9.0), sensor(2, [5.0, 2.0], 8.0)],
            operators: vec![operator(0, 2.5, 0), operator(1, 1.0, 0)],
            learning: LearningOptions::default(),
            weights: Vec::new(),
            modes: default_modes(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "reference" | "paper_vi" | "paper-vi" => Some(Self::reference()),
            _ => None,
        }
    }

    /// Parse TOML. Syntax and type errors carry a line and column.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    Error::Config(format!("line {line}, column {col}: {msg}"))
                }
                None => Error::Config(msg),
            }
        })?;
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(anchor(text, &msg)),
            other => Error::Config(anchor(text, &other.to_string())),
        })?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` must be positive, got {v}")))
            }
        };
        let probability = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` must lie in [0, 1], got {v}")))
            }
        };
        positive("t_s", self.t_s)?;
        if !(self.sigma_p >= 0.0 && self.sigma_p.is_finite()) {
            return Err(Error::Config(format!("`sigma_p` must be nonnegative, got {}", self.sigma_p)));
        }
        if !(self.prune_below >= 0.0 && self.prune_below < 1.0) {
            return Err(Error::Config(format!("`prune_below` must lie in [0, 1), got {}", self.prune_below)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("`horizon` must be at least 1".into()));
        }
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return Err(Error::Config("`rows` and `cols` must be at least 1".into()));
        }
        let bounds = self.bounds()?;
        if !bounds.contains(&Point2::from(self.start)) {
            return Err(Error::Config(format!("`start` {:?} lies outside the grid", self.start)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.sensors {
            if !seen.insert((0, s.id)) {
                return Err(Error::Config(format!("duplicate sensor id {}", s.id)));
            }
            positive("altitude", s.altitude)?;
            positive("sigma_d", s.sigma_d)?;
            probability("p_d", s.p_d)?;
            s.pose().map_err(|e| Error::Config(format!("sensor {}: {e}", s.id)))?;
        }
        for o in &self.operators {
            if !seen.insert((1, o.id)) {
                return Err(Error::Config(format!("duplicate operator id {}", o.id)));
            }
            ReliabilityState::new(OperatorId(o.id), o.prior[0], o.prior[1])
                .map_err(|e| Error::Config(format!("`prior` of operator {}: {e}", o.id)))?;
            positive("sketch_radius", o.sketch_radius)?;
            if !(o.center_error_std >= 0.0 && o.center_error_std.is_finite()) {
                return Err(Error::Config(format!("`center_error_std` must be nonnegative, got {}", o.center_error_std)));
            }
            probability("p_enclose", o.p_enclose)?;
            if o.cadence == 0 {
                return Err(Error::Config("`cadence` must be at least 1".into()));
            }
            if o.sides < 3 {
                return Err(Error::Config(format!("`sides` must be at least 3, got {}", o.sides)));
            }
        }
        if self.sensors.is_empty() && self.operators.is_empty() {
            return Err(Error::Config("no sensors or operators configured".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("`modes` is empty".into()));
        }
        if self.modes.contains(&RunMode::Autonomous) && self.sensors.is_empty() {
            return Err(Error::Config("autonomous mode needs at least one sensor".into()));
        }
        for w in &self.weights {
            probability("weight", w.weight)?;
        }
        if let Some(lambda) = self.learning.forgetting {
            if !(lambda > 0.0 && lambda <= 1.0) {
                return Err(Error::Config(format!("`forgetting` must lie in (0, 1], got {lambda}")));
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.grid.x, self.grid.y).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build_grid(&self) -> Result<ParticleGrid> {
        build_grid(self.bounds()?, self.grid.rows, self.grid.cols)
    }

    pub fn sensor_ids(&self) -> Vec<SensorId> {
        self.sensors.iter().map(|s| SensorId(s.id)).collect()
    }

    pub fn operator_ids(&self) -> Vec<OperatorId> {
        self.operators.iter().map(|o| OperatorId(o.id)).collect()
    }

    /// Fusion weights for the given mode: the manual table if one is
    /// configured, otherwise the count rule over the sources the mode uses.
    pub fn fusion_weights(&self, mode: RunMode) -> Result<FusionWeights> {
        let sensors = self.sensor_ids();
        let operators = match mode {
            RunMode::Autonomous => Vec::new(),
            RunMode::Fused => self.operator_ids(),
        };
        if self.weights.is_empty() {
            return FusionWeights::by_count(&sensors, &operators);
        }
        let mut table = BTreeMap::new();
        for w in &self.weights {
            let id = match w.kind {
                SourceKind::Sensor => SourceId::Sensor(SensorId(w.id)),
                SourceKind::Operator => SourceId::Operator(OperatorId(w.id)),
            };
            let used = match id {
                SourceId::Sensor(s) => sensors.contains(&s),
                SourceId::Operator(o) => operators.contains(&o),
            };
            if used {
                table.insert(id, w.weight);
            }
        }
        for id in sensors.iter().map(|s| SourceId::Sensor(*s)).chain(operators.iter().map(|o| SourceId::Operator(*o))) {
            if !table.contains_key(&id) {
                return Err(Error::Config(format!("no weight configured for {id}")));
            }
        }
        FusionWeights::manual(table)
    }

    fn tracker_options(&self) -> TrackerOptions {
        TrackerOptions {
            sigma_p: self.sigma_p,
            t_s: self.t_s,
            v0: Vector2::from(self.v0),
            velocity_mode: self.velocity_mode,
            kernel: KernelOptions { prune_below: self.prune_below },
            learning: self.learning,
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Prefix a validation message with the line of the first key it names.
fn anchor(text: &str, msg: &str) -> String {
    let key = msg.split('`').nth(1);
    if let Some(key) = key {
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim_start();
            if trimmed.starts_with(key) && trimmed[key.len()..].trim_start().starts_with('=') {
                return format!("line {}: {msg}", i + 1);
            }
        }
    }
    msg.to_string()
}

/// True target state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub position: Point2<f64>,
    pub velocity: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TruthTrace {
    /// Entry `k` is the state at `t = k`; entry 0 is the start.
    pub states: Vec<TruthState>,
}

/// Reflect `x` into `[lo, hi]`, returning whether the direction flipped.
fn reflect(mut x: f64, lo: f64, hi: f64) -> (f64, bool) {
    let mut flipped = false;
    let width = hi - lo;
    if width <= 0.0 {
        return (lo, false);
    }
    while x < lo || x > hi {
        if x < lo {
            x = 2.0 * lo - x;
        } else {
            x = 2.0 * hi - x;
        }
        flipped = !flipped;
    }
    (x, flipped)
}

/// Advance the truth one step: move with the current velocity plus
/// position noise, then random-walk the velocity. The target bounces off the
/// workspace edges.
pub fn step_truth<R: Rng + ?Sized>(state: &TruthState, config: &ScenarioConfig, bounds: &Bounds, rng: &mut R) -> TruthState {
    let pos_std = step_std(config.sigma_p, config.t_s);
    let vel_std = (config.t_s * config.sigma_p * config.sigma_p).sqrt();
    let mut noise = |std: f64| -> Vector2<f64> {
        if std == 0.0 {
            return Vector2::zeros();
        }
        let n = Normal::new(0.0, std).expect("finite std");
        Vector2::new(n.sample(rng), n.sample(rng))
    };
    let moved = state.position + state.velocity * config.t_s + noise(pos_std);
    let mut velocity = state.velocity + noise(vel_std);
    let (x, fx) = reflect(moved.x, bounds.x[0], bounds.x[1]);
    let (y, fy) = reflect(moved.y, bounds.y[0], bounds.y[1]);
    if fx {
        velocity.x = -velocity.x;
    }
    if fy {
        velocity.y = -velocity.y;
    }
    TruthState { position: Point2::new(x, y), velocity }
}

/// Simulated range report: detected with probability `p_d`, and then the
/// true 3D distance plus Gaussian noise.
pub fn synth_range<R: Rng + ?Sized>(truth: &Point2<f64>, sensor: &SensorConfig, rng: &mut R) -> Result<RangeObservation> {
    let pose = sensor.pose()?;
    let c = pose.position();
    let true_range = ((c.x - truth.x).powi(2) + (c.y - truth.y).powi(2) + c.z * c.z).sqrt();
    let detected = rng.random_bool(sensor.p_d);
    let noise = Normal::new(0.0, sensor.sigma_d).map_err(|e| Error::param("sigma_d", e.to_string()))?.sample(rng);
    let range = if detected { (true_range + noise).max(0.0) } else { 0.0 };
    Ok(RangeObservation { sensor_id: SensorId(sensor.id), range, detected, pose, sigma_d: sensor.sigma_d })
}

/// Simulated operator sketch at step `t`, or `None` off-cadence or when the
/// disc misses every particle.
///
/// With probability `p_enclose` the disc is centred at the truth plus
/// Gaussian error, pulled in if needed so the polygon still encloses the
/// truth. Otherwise the error is redrawn until the truth is outside.
pub fn synth_sketch<R: Rng + ?Sized>(
    truth: &Point2<f64>,
    operator: &OperatorConfig,
    grid: &ParticleGrid,
    t: u64,
    rng: &mut R,
) -> Result<Option<SketchObservation>> {
    if !operator.fires_at(t) {
        return Ok(None);
    }
    let radius = operator.sketch_radius;
    // Inradius of the regular polygon, shrunk slightly so the truth is strictly inside.
    let safe = 0.95 * radius * (std::f64::consts::PI / operator.sides as f64).cos();
    let draw = |rng: &mut R| -> Vector2<f64> {
        if operator.center_error_std == 0.0 {
            return Vector2::zeros();
        }
        let n = Normal::new(0.0, operator.center_error_std).expect("finite std");
        Vector2::new(n.sample(rng), n.sample(rng))
    };
    let enclose = rng.random_bool(operator.p_enclose);
    let offset = if enclose {
        let e = draw(rng);
        if e.norm() > safe {
            e * (safe / e.norm())
        } else {
            e
        }
    } else {
        let mut found = None;
        for _ in 0..FALSE_SKETCH_ATTEMPTS {
            let e = draw(rng);
            if e.norm() > radius {
                found = Some(e);
                break;
            }
        }
        found.unwrap_or_else(|| {
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            Vector2::new(angle.cos(), angle.sin()) * (1.5 * radius)
        })
    };
    let polygon = Polygon::regular(truth + offset, radius, operator.sides, Frame::World)?;
    match SketchObservation::from_polygon(OperatorId(operator.id), grid, polygon, t) {
        Ok(s) => Ok(Some(s)),
        Err(Error::EmptySketch) => {
            log::info!("operator {} sketch at t={t} encloses no particle, skipped", operator.id);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Truth and every observation for one seed, shared by all modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub truth: TruthTrace,
    /// `bundles[k]` holds the observations at `t = k + 1`.
    pub bundles: Vec<ObservationBundle>,
}

pub fn entity_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Step-by-step source of truth and observations, one RNG stream per entity.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: ScenarioConfig,
    bounds: Bounds,
    state: TruthState,
    t: u64,
    truth_rng: ChaCha8Rng,
    sensor_rngs: Vec<ChaCha8Rng>,
    operator_rngs: Vec<ChaCha8Rng>,
}

impl Simulator {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        let seed = config.seed;
        Ok(Self {
            bounds: config.bounds()?,
            state: TruthState { position: Point2::from(config.start), velocity: Vector2::from(config.v0) },
            t: 0,
            truth_rng: entity_rng(seed, 0),
            sensor_rngs: (0..config.sensors.len()).map(|k| entity_rng(seed, 1 + k as u64)).collect(),
            operator_rngs: (0..config.operators.len()).map(|j| entity_rng(seed, OPERATOR_STREAM_BASE + j as u64)).collect(),
            config: config.clone(),
        })
    }

    pub fn truth(&self) -> &TruthState {
        &self.state
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Move the target one step and observe it. Operator sketches are
    /// included only when `with_sketches` is set, but their streams advance
    /// either way.
    pub fn advance(&mut self, grid: &ParticleGrid, with_sketches: bool) -> Result<ObservationBundle> {
        self.t += 1;
        let t = self.t;
        self.state = step_truth(&self.state, &self.config, &self.bounds, &mut self.truth_rng);
        let mut ranges = Vec::with_capacity(self.config.sensors.len());
        for (sensor, rng) in self.config.sensors.iter().zip(self.sensor_rngs.iter_mut()) {
            ranges.push(synth_range(&self.state.position, sensor, rng)?);
        }
        let mut sketches = Vec::new();
        for (op, rng) in self.config.operators.iter().zip(self.operator_rngs.iter_mut()) {
            if let Some(s) = synth_sketch(&self.state.position, op, grid, t, rng)? {
                if with_sketches {
                    sketches.push(s);
                }
            }
        }
        Ok(ObservationBundle { t, ranges, sketches })
    }
}

pub fn generate(config: &ScenarioConfig, grid: &ParticleGrid) -> Result<SyntheticData> {
    let mut sim = Simulator::new(config)?;
    let mut truth = TruthTrace { states: vec![*sim.truth()] };
    let mut bundles = Vec::with_capacity(config.horizon as usize);
    for _ in 0..config.horizon {
        bundles.push(sim.advance(grid, true)?);
        truth.states.push(*sim.truth());
    }
    Ok(SyntheticData { truth, bundles })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorStep {
    pub operator_id: u32,
    pub alpha: f64,
    pub beta: f64,
    /// Enclosed mass when this operator sketched at this step.
    pub q_s: Option<f64>,
}

/// One row of the step trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub truth_x: f64,
    pub truth_y: f64,
    pub mmse_x: f64,
    pub mmse_y: f64,
    pub map_x: f64,
    pub map_y: f64,
    pub error: f64,
    pub rmse_running: f64,
    pub operators: Vec<OperatorStep>,
    /// Sum of the belief weights after the update.
    pub belief_total: f64,
    pub min_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilitySummary {
    pub operator_id: u32,
    pub alpha: f64,
    pub beta: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: RunMode,
    pub seed: u64,
    /// Root mean squared MMSE position error over the horizon.
    pub rmse: f64,
    pub map_rmse: f64,
    pub final_error: f64,
    pub sketches: usize,
    pub undetected: usize,
    pub degenerate_steps: usize,
    pub reliabilities: Vec<ReliabilitySummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeRun {
    pub mode: RunMode,
    pub steps: Vec<StepRecord>,
    pub learning: Vec<LearningRecord>,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub truth: TruthTrace,
    pub runs: Vec<ModeRun>,
}

impl ScenarioOutput {
    pub fn run(&self, mode: RunMode) -> Option<&ModeRun> {
        self.runs.iter().find(|r| r.mode == mode)
    }
}

/// A tracker for `mode` starting from a point mass at the known start.
pub fn build_tracker(config: &ScenarioConfig, grid: &ParticleGrid, mode: RunMode) -> Result<Tracker> {
    let start = grid.nearest(&Point2::from(config.start));
    let initial = Belief::point_mass(grid.len(), start);
    let operators: Vec<ReliabilityState> = match mode {
        RunMode::Autonomous => Vec::new(),
        RunMode::Fused => {
            config.operators.iter().map(|o| ReliabilityState::new(OperatorId(o.id), o.prior[0], o.prior[1])).collect::<Result<_>>()?
        }
    };
    Tracker::new(grid.clone(), initial, operators, config.fusion_weights(mode)?, config.tracker_options())
}

/// Run one tracker over pre-generated data. `on_step` sees every posterior.
pub fn run_mode(
    config: &ScenarioConfig,
    grid: &ParticleGrid,
    data: &SyntheticData,
    mode: RunMode,
    mut on_step: impl FnMut(&Belief),
) -> Result<ModeRun> {
    let mut tracker = build_tracker(config, grid, mode)?;

    let mut steps = Vec::with_capacity(data.bundles.len());
    let mut learning = Vec::new();
    let (mut sq_sum, mut map_sq_sum) = (0.0, 0.0);
    let (mut sketches, mut undetected, mut degenerate_steps) = (0, 0, 0);
    for (k, bundle) in data.bundles.iter().enumerate() {
        let bundle = match mode {
            RunMode::Autonomous => ObservationBundle { t: bundle.t, ranges: bundle.ranges.clone(), sketches: Vec::new() },
            RunMode::Fused => bundle.clone(),
        };
        let out = tracker.step(&bundle)?;
        on_step(&out.belief);
        let truth = data.truth.states[k + 1].position;
        let err = ((out.estimates.mmse[0] - truth.x).powi(2) + (out.estimates.mmse[1] - truth.y).powi(2)).sqrt();
        let map_err_sq = (out.estimates.map[0] - truth.x).powi(2) + (out.estimates.map[1] - truth.y).powi(2);
        sq_sum += err * err;
        map_sq_sum += map_err_sq;
        sketches += bundle.sketches.len();
        undetected += out.flags.undetected.len();
        degenerate_steps += usize::from(out.flags.degenerate);
        let ops = tracker
            .reliabilities()
            .values()
            .map(|r| OperatorStep {
                operator_id: r.operator_id.0,
                alpha: r.alpha,
                beta: r.beta,
                q_s: out.learning.iter().find(|l| l.operator_id == r.operator_id.0).map(|l| l.q_s),
            })
            .collect();
        steps.push(StepRecord {
            t: bundle.t,
            truth_x: truth.x,
            truth_y: truth.y,
            mmse_x: out.estimates.mmse[0],
            mmse_y: out.estimates.mmse[1],
            map_x: out.estimates.map[0],
            map_y: out.estimates.map[1],
            error: err,
            rmse_running: (sq_sum / (k + 1) as f64).sqrt(),
            operators: ops,
            belief_total: out.belief.total(),
            min_weight: out.belief.weights().iter().cloned().fold(f64::INFINITY, f64::min),
        });
        learning.extend(out.learning);
    }
    let n = data.bundles.len().max(1) as f64;
    let metrics = RunMetrics {
        mode,
        seed: config.seed,
        rmse: (sq_sum / n).sqrt(),
        map_rmse: (map_sq_sum / n).sqrt(),
        final_error: steps.last().map_or(0.0, |s| s.error),
        sketches,
        undetected,
        degenerate_steps,
        reliabilities: tracker
            .reliabilities()
            .values()
            .map(|r| ReliabilitySummary { operator_id: r.operator_id.0, alpha: r.alpha, beta: r.beta, mean: r.mean() })
            .collect(),
    };
    Ok(ModeRun { mode, steps, learning, metrics })
}

/// Generate the data for `config.seed` and run every configured mode on it.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutput> {
    config.validate()?;
    let grid = config.build_grid()?;
    let data = generate(config, &grid)?;
    let runs = config.modes.iter().map(|m| run_mode(config, &grid, &data, *m, |_| {})).collect::<Result<_>>()?;
    Ok(ScenarioOutput { truth: data.truth, runs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: RunMode,
    pub runs: usize,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub min_rmse: f64,
    pub max_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub seeds: Vec<u64>,
    pub modes: Vec<ModeSummary>,
    /// Share of seeds where fused RMSE is below autonomous RMSE, when both ran.
    pub fused_better_fraction: Option<f64>,
    pub runs: Vec<RunMetrics>,
}

/// Run `config` once per seed, spread over the available cores.
pub fn run_batch(config: &ScenarioConfig, seeds: &[u64]) -> Result<BatchSummary> {
    config.validate()?;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len().max(1));
    let chunk = seeds.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<Vec<RunMetrics>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|seed| {
                            let cfg = ScenarioConfig { seed: *seed, ..config.clone() };
                            run_scenario(&cfg).map(|o| o.runs.into_iter().map(|r| r.metrics).collect())
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("batch worker panicked")).collect()
    });
    let mut per_seed = Vec::with_capacity(seeds.len());
    for r in results {
        per_seed.extend(r?);
    }

    let mut modes = Vec::new();
    for mode in &config.modes {
        let rmse: Vec<f64> = per_seed.iter().flatten().filter(|m| m.mode == *mode).map(|m| m.rmse).collect();
        let n = rmse.len() as f64;
        let mean = rmse.iter().sum::<f64>() / n;
        let var = rmse.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        modes.push(ModeSummary {
            mode: *mode,
            runs: rmse.len(),
            mean_rmse: mean,
            std_rmse: var.sqrt(),
            min_rmse: rmse.iter().cloned().fold(f64::INFINITY, f64::min),
            max_rmse: rmse.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    let fused_better_fraction = if config.modes.contains(&RunMode::Autonomous) && config.modes.contains(&RunMode::Fused) {
        let wins = per_seed
            .iter()
            .filter(|runs| {
                let get = |m| runs.iter().find(|r| r.mode == m).map(|r| r.rmse);
                matches!((get(RunMode::Fused), get(RunMode::Autonomous)), (Some(f), Some(a)) if f < a)
            })
            .count();
        Some(wins as f64 / per_seed.len() as f64)
    } else {
        None
    };
    Ok(BatchSummary { seeds: seeds.to_vec(), modes, fused_better_fraction, runs: per_seed.into_iter().flatten().collect() })
}

/// Write the step trace as CSV: estimates, truth, running RMSE, and
/// `op<id>_alpha`, `op<id>_beta`, `op<id>_qs` per operator (`qs` is empty
/// on steps without a sketch).
pub fn write_step_csv<W: Write>(out: W, steps: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let ops: Vec<u32> = steps.first().map(|s| s.operators.iter().map(|o| o.operator_id).collect()).unwrap_or_default();
    let mut header: Vec<String> =
        ["t", "truth_x", "truth_y", "mmse_x", "mmse_y", "map_x", "map_y", "rmse_running"].iter().map(|s| s.to_string()).collect();
    for id in &ops {
        header.extend([format!("op{id}_alpha"), format!("op{id}_beta"), format!("op{id}_qs")]);
    }
    w.write_record(&header).map_err(csv_err)?;
    for s in steps {
        let mut row = vec![
            s.t.to_string(),
            s.truth_x.to_string(),
            s.truth_y.to_string(),
            s.mmse_x.to_string(),
            s.mmse_y.to_string(),
            s.map_x.to_string(),
            s.map_y.to_string(),
            s.rmse_running.to_string(),
        ];
        for o in &s.operators {
            row.extend([o.alpha.to_string(), o.beta.to_string(), o.q_s.map(|q| q.to_string()).unwrap_or_default()]);
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}
