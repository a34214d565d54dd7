//! Forward filtering over the particle grid with weighted source fusion.
//!
//! One step is: predict through the transition kernel, evaluate every
//! source's likelihood, pool them as a weighted product in log space, apply
//! Bayes' rule, read out estimates, then update each reporting operator's
//! reliability against the new posterior.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ParticleGrid;
use crate::human::{marginal_sketch_log_likelihood, OperatorId, ReliabilityState, SketchObservation};
use crate::learning::{update_reliability, LearningOptions, LearningRecord};
use crate::motion::{build_kernel_with, predict, KernelOptions, TransitionKernel, VelocityMode, VelocityState, MMSE_DIFF_SMOOTHING};
use crate::sensors::{range_log_likelihood, RangeObservation, SensorId};

/// Normalised weights over the particles.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    weights: Vec<f64>,
    t: u64,
}

impl Belief {
    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0 / n as f64; n], t: 0 }
    }

    pub fn point_mass(n: usize, i: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[i] = 1.0;
        Self { weights, t: 0 }
    }

    /// Normalises `weights`, which must be finite, nonnegative, and not all zero.
    pub fn from_weights(mut weights: Vec<f64>, t: u64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::param("belief", "no particles"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::param("belief", "weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::param("belief", format!("weights sum to {total}")));
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        Ok(Self { weights, t })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn with_t(mut self, t: u64) -> Self {
        self.t = t;
        self
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Identifies one evidence source. Sensors order before operators, which
/// fixes the accumulation order in [`fuse_log`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "id")]
pub enum SourceId {
    Sensor(SensorId),
    Operator(OperatorId),
}

impl std::fmt::Display for SourceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceId::Sensor(s) => s.fmt(f),
            SourceId::Operator(o) => o.fmt(f),
        }
    }
}

/// Per-sensor and per-operator weights for `n` sensors and `m` operators:
/// `n / (n^2 + m^2)` and `m / (n^2 + m^2)`. Two sensors and one operator give
/// `(2/5, 2/5, 1/5)`.
pub fn assign_weights(n_sensors: usize, m_operators: usize) -> Result<(f64, f64)> {
    if n_sensors == 0 && m_operators == 0 {
        return Err(Error::NoSources);
    }
    let (n, m) = (n_sensors as f64, m_operators as f64);
    let d = n * n + m * m;
    Ok((n / d, m / d))
}

/// Trust weight for every source; sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    weights: BTreeMap<SourceId, f64>,
}

impl FusionWeights {
    pub fn by_count(sensors: &[SensorId], operators: &[OperatorId]) -> Result<Self> {
        let (ws, wh) = assign_weights(sensors.len(), operators.len())?;
        let mut weights = BTreeMap::new();
        for s in sensors {
            weights.insert(SourceId::Sensor(*s), ws);
        }
        for o in operators {
            weights.insert(SourceId::Operator(*o), wh);
        }
        if weights.len() != sensors.len() + operators.len() {
            return Err(Error::DuplicateSource("in weight assignment".into()));
        }
        Self::normalised(weights)
    }

    /// Explicit weights, rescaled to sum to one. Each must lie in `[0, 1]`.
    pub fn manual(weights: BTreeMap<SourceId, f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::NoSources);
        }
        if let Some((k, w)) = weights.iter().find(|(_, w)| !(**w >= 0.0 && **w <= 1.0)) {
            return Err(Error::param("weight", format!("{k}: {w} is outside [0, 1]")));
        }
        Self::normalised(weights)
    }

    fn normalised(mut weights: BTreeMap<SourceId, f64>) -> Result<Self> {
        let total: f64 = weights.values().sum();
        if !(total > 0.0) {
            return Err(Error::param("weight", "weights sum to zero"));
        }
        for w in weights.values_mut() {
            *w /= total;
        }
        Ok(Self { weights })
    }

    pub fn get(&self, source: SourceId) -> Result<f64> {
        self.weights.get(&source).copied().ok_or_else(|| Error::UnknownSource(source.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SourceId, &f64)> {
        self.weights.iter()
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }
}

/// One source's log likelihood over the particles.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceLikelihood {
    /// Raw range log-likelihood; raised to the sensor weight during fusion.
    Range { sensor: SensorId, log_values: Vec<f64> },
    /// Reliability-marginalised sketch log-likelihood, which already carries
    /// the operator weight. Used as is.
    Sketch { operator: OperatorId, log_values: Vec<f64> },
}

impl SourceLikelihood {
    pub fn source(&self) -> SourceId {
        match self {
            SourceLikelihood::Range { sensor, .. } => SourceId::Sensor(*sensor),
            SourceLikelihood::Sketch { operator, .. } => SourceId::Operator(*operator),
        }
    }

    pub fn log_values(&self) -> &[f64] {
        match self {
            SourceLikelihood::Range { log_values, .. } | SourceLikelihood::Sketch { log_values, .. } => log_values,
        }
    }
}

/// Weighted product of source likelihoods, in log space.
///
/// Sources are accumulated in [`SourceId`] order so the result does not
/// depend on the order they were passed in.
pub fn fuse_log(sources: &[SourceLikelihood], weights: &FusionWeights) -> Result<Vec<f64>> {
    let Some(first) = sources.first() else {
        return Err(Error::NoSources);
    };
    let n = first.log_values().len();
    let mut ordered: Vec<&SourceLikelihood> = sources.iter().collect();
    ordered.sort_by_key(|s| s.source());
    for pair in ordered.windows(2) {
        if pair[0].source() == pair[1].source() {
            return Err(Error::DuplicateSource(pair[0].source().to_string()));
        }
    }
    let mut acc = vec![0.0; n];
    for src in ordered {
        let values = src.log_values();
        if values.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: values.len() });
        }
        match src {
            SourceLikelihood::Range { sensor, .. } => {
                let w = weights.get(SourceId::Sensor(*sensor))?;
                for (a, v) in acc.iter_mut().zip(values) {
                    *a += w * v;
                }
            }
            SourceLikelihood::Sketch { .. } => {
                for (a, v) in acc.iter_mut().zip(values) {
                    *a += v;
                }
            }
        }
    }
    if !acc.iter().any(|v| v.is_finite()) {
        return Err(Error::DegenerateLikelihood);
    }
    Ok(acc)
}

/// [`fuse_log`] mapped back to linear space, scaled so the largest entry is one.
pub fn fuse(sources: &[SourceLikelihood], weights: &FusionWeights) -> Result<Vec<f64>> {
    let acc = fuse_log(sources, weights)?;
    let max = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(acc.into_iter().map(|v| (v - max).exp()).collect())
}

/// Bayes' rule: `q_i ∝ exp(fused_log_i) * predicted_i`.
pub fn update(predicted: &Belief, fused_log: &[f64]) -> Result<Belief> {
    if fused_log.len() != predicted.len() {
        return Err(Error::DimensionMismatch { expected: predicted.len(), got: fused_log.len() });
    }
    let log_post: Vec<f64> =
        predicted.weights().iter().zip(fused_log).map(|(q, l)| if *q > 0.0 { q.ln() + l } else { f64::NEG_INFINITY }).collect();
    let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateLikelihood);
    }
    Belief::from_weights(log_post.into_iter().map(|v| (v - max).exp()).collect(), predicted.t())
}

/// Posterior-mean position.
pub fn mmse_estimate(belief: &Belief, grid: &ParticleGrid) -> Point2<f64> {
    let mut acc = Vector2::zeros();
    for (q, p) in belief.weights().iter().zip(grid.positions()) {
        acc += p.coords * *q;
    }
    Point2::from(acc)
}

/// Index of the heaviest particle, lowest index on ties.
pub fn map_index(belief: &Belief) -> usize {
    let mut best = 0;
    for (i, w) in belief.weights().iter().enumerate() {
        if *w > belief.weights()[best] {
            best = i;
        }
    }
    best
}

pub fn map_estimate(belief: &Belief, grid: &ParticleGrid) -> Point2<f64> {
    grid.position(map_index(belief))
}

/// Everything observed at one time step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationBundle {
    pub t: u64,
    pub ranges: Vec<RangeObservation>,
    pub sketches: Vec<SketchObservation>,
}

impl ObservationBundle {
    pub fn empty(t: u64) -> Self {
        Self { t, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.ranges {
            if !seen.insert(SourceId::Sensor(r.sensor_id)) {
                return Err(Error::DuplicateSource(r.sensor_id.to_string()));
            }
        }
        for s in &self.sketches {
            if s.t != self.t {
                return Err(Error::TimeMismatch { expected: self.t, got: s.t });
            }
            if !seen.insert(SourceId::Operator(s.operator_id)) {
                return Err(Error::DuplicateSource(s.operator_id.to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub mmse: [f64; 2],
    pub map: [f64; 2],
    pub map_index: usize,
}

impl Estimates {
    pub fn of(belief: &Belief, grid: &ParticleGrid) -> Self {
        let mmse = mmse_estimate(belief, grid);
        let idx = map_index(belief);
        let map = grid.position(idx);
        Self { mmse: [mmse.x, mmse.y], map: [map.x, map.y], map_index: idx }
    }
}

/// Conditions the step survived but that a caller may want to surface.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepFlags {
    /// Sensors that reported a non-detection and were left out of fusion.
    pub undetected: Vec<SensorId>,
    /// Whole-grid sketches: fused and learned from, but uninformative for the target.
    pub zero_information: Vec<OperatorId>,
    /// The fused likelihood vanished on the prediction; the prediction was kept.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub belief: Belief,
    pub reliabilities: BTreeMap<OperatorId, ReliabilityState>,
    pub estimates: Estimates,
    pub learning: Vec<LearningRecord>,
    pub flags: StepFlags,
}

/// Per-source likelihoods for one bundle. Non-detections are skipped and reported.
pub fn source_likelihoods(
    grid: &ParticleGrid,
    bundle: &ObservationBundle,
    reliabilities: &BTreeMap<OperatorId, ReliabilityState>,
    weights: &FusionWeights,
) -> Result<(Vec<SourceLikelihood>, StepFlags)> {
    let mut flags = StepFlags::default();
    let mut sources = Vec::with_capacity(bundle.ranges.len() + bundle.sketches.len());
    for obs in &bundle.ranges {
        let l = range_log_likelihood(grid, obs)?;
        if l.informative {
            sources.push(SourceLikelihood::Range { sensor: obs.sensor_id, log_values: l.values });
        } else {
            flags.undetected.push(obs.sensor_id);
        }
    }
    for sketch in &bundle.sketches {
        if sketch.mask.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: sketch.mask.len() });
        }
        let rel = reliabilities.get(&sketch.operator_id).ok_or_else(|| Error::UnknownSource(sketch.operator_id.to_string()))?;
        let w = weights.get(SourceId::Operator(sketch.operator_id))?;
        if sketch.is_zero_information() {
            log::warn!("{} sketched the whole grid at t={}", sketch.operator_id, sketch.t);
            flags.zero_information.push(sketch.operator_id);
        }
        sources
            .push(SourceLikelihood::Sketch { operator: sketch.operator_id, log_values: marginal_sketch_log_likelihood(sketch, rel, w)? });
    }
    Ok((sources, flags))
}

/// One full filtering and learning cycle.
#[allow(clippy::too_many_arguments)]
pub fn joint_step(
    grid: &ParticleGrid,
    belief: &Belief,
    kernel: &TransitionKernel,
    bundle: &ObservationBundle,
    reliabilities: &BTreeMap<OperatorId, ReliabilityState>,
    weights: &FusionWeights,
    learning: &LearningOptions,
) -> Result<StepOutput> {
    if bundle.t != belief.t() + 1 {
        return Err(Error::TimeMismatch { expected: belief.t() + 1, got: bundle.t });
    }
    bundle.validate()?;
    let predicted = predict(belief, kernel)?;
    let (sources, mut flags) = source_likelihoods(grid, bundle, reliabilities, weights)?;

    let posterior = if sources.is_empty() {
        predicted
    } else {
        match fuse_log(&sources, weights).and_then(|fused| update(&predicted, &fused)) {
            Ok(p) => p,
            Err(Error::DegenerateLikelihood) => {
                log::warn!("t={}: degenerate fused likelihood, keeping the prediction", bundle.t);
                flags.degenerate = true;
                predicted
            }
            Err(e) => return Err(e),
        }
    };

    let mut next_rel = reliabilities.clone();
    let mut records = Vec::with_capacity(bundle.sketches.len());
    let mut sketches: Vec<&SketchObservation> = bundle.sketches.iter().collect();
    sketches.sort_by_key(|s| s.operator_id);
    for sketch in sketches {
        let rel = &reliabilities[&sketch.operator_id];
        let w = weights.get(SourceId::Operator(sketch.operator_id))?;
        let u = update_reliability(rel, sketch, &posterior, w, learning)?;
        next_rel.insert(sketch.operator_id, u.state);
        records.push(u.record);
    }

    Ok(StepOutput { estimates: Estimates::of(&posterior, grid), belief: posterior, reliabilities: next_rel, learning: records, flags })
}

/// Filter-side motion and learning settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerOptions {
    pub sigma_p: f64,
    pub t_s: f64,
    pub v0: Vector2<f64>,
    pub velocity_mode: VelocityMode,
    pub kernel: KernelOptions,
    pub learning: LearningOptions,
}

/// Stateful wrapper around [`joint_step`] that owns the belief, the
/// reliabilities, and the transition kernel.
#[derive(Debug, Clone)]
pub struct Tracker {
    grid: ParticleGrid,
    kernel: TransitionKernel,
    belief: Belief,
    reliabilities: BTreeMap<OperatorId, ReliabilityState>,
    weights: FusionWeights,
    options: TrackerOptions,
    velocity: Vector2<f64>,
    last_mmse: Option<Point2<f64>>,
}

impl Tracker {
    pub fn new(
        grid: ParticleGrid,
        initial: Belief,
        reliabilities: impl IntoIterator<Item = ReliabilityState>,
        weights: FusionWeights,
        options: TrackerOptions,
    ) -> Result<Self> {
        if initial.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: initial.len() });
        }
        let kernel = build_kernel_with(&grid, &VelocityState::new(options.v0), options.sigma_p, options.t_s, options.kernel)?;
        let reliabilities = reliabilities.into_iter().map(|r| (r.operator_id, r)).collect();
        let last_mmse = Some(mmse_estimate(&initial, &grid));
        Ok(Self { grid, kernel, belief: initial, reliabilities, weights, velocity: options.v0, options, last_mmse })
    }

    pub fn grid(&self) -> &ParticleGrid {
        &self.grid
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    pub fn weights(&self) -> &FusionWeights {
        &self.weights
    }

    pub fn reliabilities(&self) -> &BTreeMap<OperatorId, ReliabilityState> {
        &self.reliabilities
    }

    /// Velocity currently fed to the kernel.
    pub fn velocity(&self) -> Vector2<f64> {
        self.velocity
    }

    /// The next time index the tracker expects.
    pub fn next_t(&self) -> u64 {
        self.belief.t() + 1
    }

    pub fn step(&mut self, bundle: &ObservationBundle) -> Result<StepOutput> {
        let out = joint_step(&self.grid, &self.belief, &self.kernel, bundle, &self.reliabilities, &self.weights, &self.options.learning)?;
        self.belief = out.belief.clone();
        self.reliabilities = out.reliabilities.clone();
        if self.options.velocity_mode == VelocityMode::MmseDiff {
            let mmse = Point2::from(out.estimates.mmse);
            if let Some(prev) = self.last_mmse {
                let observed = (mmse - prev) / self.options.t_s;
                self.velocity = self.velocity * MMSE_DIFF_SMOOTHING + observed * (1.0 - MMSE_DIFF_SMOOTHING);
                self.kernel = build_kernel_with(
                    &self.grid,
                    &VelocityState { v: self.velocity, v0: self.options.v0 },
                    self.options.sigma_p,
                    self.options.t_s,
                    self.options.kernel,
                )?;
            }
            self.last_mmse = Some(mmse);
        }
        Ok(out)
    }
}
