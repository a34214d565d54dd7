//! Sweeps that compare the tracker against the naive reference
//! computations in `sketchfuse-oracle`.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{Point2, Point3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchfuse_oracle as oracle;

use crate::error::Result;
use crate::grid::{build_grid, Bounds, CameraPose, Intrinsics, ParticleMask};
use crate::human::{marginal_log_pair, OperatorId, ReliabilityState, SketchObservation};
use crate::learning::{fit_beta_from_moments, posterior_mixture, update_reliability, weighted_moments, LearningOptions};
use crate::motion::{KernelOptions, VelocityMode};
use crate::sensors::{RangeObservation, SensorId};
use crate::tracker::{Belief, FusionWeights, ObservationBundle, Tracker, TrackerOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub failures: Vec<String>,
    pub elapsed: Duration,
}

impl CheckReport {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self { name, cases: 0, max_error: 0.0, tolerance, failures: Vec::new(), elapsed: Duration::ZERO }
    }

    fn record(&mut self, error: f64, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if error > self.max_error || error.is_nan() {
            self.max_error = error;
        }
        if !(error < self.tolerance) {
            self.failures.push(format!("{} (error {error:e})", describe()));
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.cases > 0
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} ({} cases, max error {:.3e}, tolerance {:.0e}, {:.2?})",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.cases,
            self.max_error,
            self.tolerance,
            self.elapsed
        )
    }
}

fn timed(mut report: CheckReport, start: Instant) -> CheckReport {
    report.elapsed = start.elapsed();
    report
}

/// Closed-form marginal sketch likelihood against quadrature of the
/// reliability integral, for every combination of
/// `alpha, beta in {0.5, 1, 2, 8}`, `M in {1, 5, 50}`,
/// `w in {0.2, 0.5, 1}`, inside and outside.
pub fn quadrature_sweep() -> CheckReport {
    let start = Instant::now();
    let mut report = CheckReport::new("marginal likelihood vs quadrature", 1e-6);
    let shapes = [0.5, 1.0, 2.0, 8.0];
    for &alpha in &shapes {
        for &beta in &shapes {
            for enclosed in [1u32, 5, 50] {
                for weight in [0.2, 0.5, 1.0] {
                    let rel = ReliabilityState::new(OperatorId(0), alpha, beta).expect("positive shapes");
                    let (inside, outside) = marginal_log_pair(&rel, weight, enclosed as usize).expect("valid case");
                    for (is_inside, closed) in [(true, inside.exp()), (false, outside.exp())] {
                        let err = match oracle::sketch_marginal_by_quadrature(alpha, beta, weight, enclosed, is_inside, 1e-12) {
                            Ok(reference) => ((closed - reference) / reference).abs(),
                            Err(_) => f64::INFINITY,
                        };
                        report.record(err, || format!("alpha={alpha} beta={beta} M={enclosed} w={weight} inside={is_inside}"));
                    }
                }
            }
        }
    }
    timed(report, start)
}

/// Filtering marginals from [`Tracker`] against path enumeration, with the
/// oracle computing its own likelihoods and reliability updates, on small
/// random problems.
pub fn forward_filter_sweep(seed: u64, cases: usize) -> CheckReport {
    let start = Instant::now();
    let mut report = CheckReport::new("forward filter vs path enumeration", 1e-10);
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(case as u64));
        match forward_case(&mut rng) {
            Ok(errors) => {
                for (t, err) in errors.into_iter().enumerate() {
                    report.record(err, || format!("case {case} step {}", t + 1));
                }
            }
            Err(e) => report.record(f64::INFINITY, || format!("case {case}: {e}")),
        }
    }
    timed(report, start)
}

fn forward_case(rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let rows = rng.random_range(1..=4usize);
    let cols = rng.random_range(2..=(16 / rows).min(4));
    let grid = build_grid(Bounds::new([0.0, cols as f64], [0.0, rows as f64])?, rows, cols)?;
    let n = grid.len();
    let t_s = 1.0;
    let sigma_p = rng.random_range(0.4..1.5);
    let v = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let prior: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let horizon = rng.random_range(1..=4u64);

    let n_sensors = rng.random_range(0..=2usize);
    let n_ops = if n_sensors == 0 { rng.random_range(1..=2usize) } else { rng.random_range(0..=2usize) };
    let poses: Vec<CameraPose> = (0..n_sensors)
        .map(|_| {
            let p = Point3::new(rng.random_range(0.0..cols as f64), rng.random_range(0.0..rows as f64), rng.random_range(2.0..6.0));
            CameraPose::new(p, 0.0, Intrinsics::default().matrix())
        })
        .collect::<Result<_>>()?;
    let priors: Vec<(f64, f64)> = (0..n_ops).map(|_| (rng.random_range(1.0..5.0), rng.random_range(1.0..5.0))).collect();

    let sensor_ids: Vec<SensorId> = (0..n_sensors as u32).map(SensorId).collect();
    let op_ids: Vec<OperatorId> = (0..n_ops as u32).map(OperatorId).collect();
    let rels: Vec<ReliabilityState> =
        priors.iter().zip(&op_ids).map(|((a, b), id)| ReliabilityState::new(*id, *a, *b)).collect::<Result<_>>()?;
    let options = TrackerOptions {
        sigma_p,
        t_s,
        v0: v,
        velocity_mode: VelocityMode::Fixed,
        kernel: KernelOptions::default(),
        learning: LearningOptions::default(),
    };
    let mut tracker =
        Tracker::new(grid.clone(), Belief::from_weights(prior.clone(), 0)?, rels, FusionWeights::by_count(&sensor_ids, &op_ids)?, options)?;

    // Oracle state.
    let positions: Vec<[f64; 2]> = grid.positions().iter().map(|p| [p.x, p.y]).collect();
    let transition = oracle::dense_gaussian_kernel(&positions, [v.x, v.y], t_s, t_s * t_s / 2.0 * sigma_p * sigma_p);
    let denom = (n_sensors * n_sensors + n_ops * n_ops) as f64;
    let (w_sensor, w_op) = (n_sensors as f64 / denom, n_ops as f64 / denom);
    let mut oracle_rel = priors.clone();
    let mut likelihoods: Vec<Vec<f64>> = Vec::new();
    let mut errors = Vec::new();

    for t in 1..=horizon {
        let mut bundle = ObservationBundle::empty(t);
        let mut lik = vec![1.0; n];
        for (k, pose) in poses.iter().enumerate() {
            let detected = rng.random_bool(0.85);
            let sigma_d = rng.random_range(0.5..2.0);
            let target = Point2::new(rng.random_range(0.0..cols as f64), rng.random_range(0.0..rows as f64));
            let c = pose.position();
            let range = ((c.x - target.x).powi(2) + (c.y - target.y).powi(2) + c.z * c.z).sqrt() + rng.random_range(-0.5..0.5);
            bundle.ranges.push(RangeObservation { sensor_id: SensorId(k as u32), range, detected, pose: pose.clone(), sigma_d });
            if detected {
                for (i, p) in positions.iter().enumerate() {
                    let r = ((c.x - p[0]).powi(2) + (c.y - p[1]).powi(2) + c.z * c.z).sqrt();
                    lik[i] *= oracle::gaussian_pdf(range, r, sigma_d).powf(w_sensor);
                }
            }
        }
        let mut masks = Vec::new();
        for (j, (a, b)) in oracle_rel.iter().enumerate() {
            if n < 2 || !rng.random_bool(0.6) {
                continue;
            }
            let mut bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            let pick = rng.random_range(0..n);
            bits[pick] = true;
            bits[(pick + 1) % n] = false;
            let m = bits.iter().filter(|b| **b).count() as u32;
            for (i, inside) in bits.iter().enumerate() {
                lik[i] *= oracle::sketch_marginal_by_quadrature(*a, *b, w_op, m, *inside, 1e-14)
                    .map_err(|e| crate::error::Error::param("quadrature", format!("{e:?}")))?;
            }
            bundle.sketches.push(SketchObservation::from_mask(OperatorId(j as u32), ParticleMask::from_bits(bits.clone())?, t));
            masks.push((j, bits, m));
        }
        likelihoods.push(lik);
        let reference = oracle::forward_by_enumeration(&prior, &transition, &likelihoods);
        for (j, bits, m) in masks {
            let q: f64 = bits.iter().zip(&reference).filter(|(b, _)| **b).map(|(_, p)| p).sum();
            let (a, b) = oracle_rel[j];
            oracle_rel[j] = oracle::reference_reliability_update(a, b, w_op, m, q);
        }

        let out = tracker.step(&bundle)?;
        let err = out.belief.weights().iter().zip(&reference).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        errors.push(err);
    }
    Ok(errors)
}

/// Collapse cases (`q_s` exactly 1 or 0) and the moment-fit round trip.
pub fn collapse_sweep(seed: u64) -> CheckReport {
    let start = Instant::now();
    let mut report = CheckReport::new("moment matching collapse and round trip", 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 60;
    for case in 0..200 {
        let alpha = rng.random_range(0.2..20.0);
        let beta = rng.random_range(0.2..20.0);
        let weight = rng.random_range(0.01..1.0);
        let enclosed = rng.random_range(1..n);
        let rel = ReliabilityState::new(OperatorId(0), alpha, beta).expect("positive");
        let bits: Vec<bool> = (0..n).map(|i| i < enclosed).collect();
        let sketch = SketchObservation::from_mask(OperatorId(0), ParticleMask::from_bits(bits).expect("nonempty"), 1);
        let m = enclosed as f64;
        for (inside, expected) in [(true, (weight + alpha, weight * (m - 1.0) + beta)), (false, (alpha, weight * m + beta))] {
            let posterior = Belief::point_mass(n, if inside { 0 } else { n - 1 });
            let err = match update_reliability(&rel, &sketch, &posterior, weight, &LearningOptions::default()) {
                Ok(u) => (u.state.alpha - expected.0).abs().max((u.state.beta - expected.1).abs()),
                Err(_) => f64::INFINITY,
            };
            report.record(err, || format!("case {case} q_s={}", if inside { 1 } else { 0 }));
        }
    }
    for case in 0..1000 {
        let alpha = rng.random_range(0.1..50.0);
        let beta = rng.random_range(0.1..50.0);
        let (mean, var) = oracle::beta_moments(alpha, beta);
        let err = match fit_beta_from_moments(mean, var) {
            Ok(p) => (p.alpha - alpha).abs().max((p.beta - beta).abs()),
            Err(_) => f64::INFINITY,
        };
        report.record(err, || format!("round trip {case}: alpha={alpha} beta={beta}"));
    }
    timed(report, start)
}

/// Mixture mean from [`weighted_moments`] against the hand-written formula
/// `(q (w + alpha) + (1 - q) alpha) / (w M + alpha + beta)`.
pub fn mixture_mean_sweep(seed: u64) -> CheckReport {
    let start = Instant::now();
    let mut report = CheckReport::new("mixture mean vs hand formula", 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..1000 {
        let alpha = rng.random_range(0.1..30.0);
        let beta = rng.random_range(0.1..30.0);
        let weight = rng.random_range(0.0..=1.0);
        let enclosed = rng.random_range(1..500usize);
        let q = rng.random_range(0.0..=1.0);
        let rel = ReliabilityState::new(OperatorId(0), alpha, beta).expect("positive");
        let hand = (q * (weight + alpha) + (1.0 - q) * alpha) / (weight * enclosed as f64 + alpha + beta);
        let err = match posterior_mixture(&rel, weight, enclosed, q) {
            Ok(mix) => (weighted_moments(&mix).0 - hand).abs(),
            Err(_) => f64::INFINITY,
        };
        report.record(err, || format!("case {case}"));
    }
    timed(report, start)
}

/// Every sweep the `verify` command runs.
pub fn run_all(seed: u64) -> Vec<CheckReport> {
    vec![quadrature_sweep(), forward_filter_sweep(seed, 20), collapse_sweep(seed), mixture_mean_sweep(seed)]
}
