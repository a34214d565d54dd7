//! Exit criteria. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Point3, Vector2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sketchfuse_core::grid::{build_grid, Bounds, CameraPose, Intrinsics, ParticleMask};
use sketchfuse_core::human::{OperatorId, ReliabilityState, SketchObservation};
use sketchfuse_core::learning::LearningOptions;
use sketchfuse_core::motion::{build_kernel, VelocityMode, VelocityState};
use sketchfuse_core::sensors::{RangeObservation, SensorId};
use sketchfuse_core::sim::{generate, run_batch, run_mode, run_scenario, RunMode, ScenarioConfig};
use sketchfuse_core::tracker::{
    fuse_log, joint_step, source_likelihoods, update, Belief, FusionWeights, ObservationBundle, SourceLikelihood,
};
use sketchfuse_core::verify;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn sweep(name: &'static str, report: verify::CheckReport, limit_secs: f64) -> Outcome {
    let mut detail = format!(
        "{} cases, max error {:.2e} (tol {:.0e}), {:.2?} (limit {limit_secs} s)",
        report.cases, report.max_error, report.tolerance, report.elapsed
    );
    if let Some(first) = report.failures.first() {
        detail.push_str(&format!("; first failure: {first}"));
    }
    Outcome { name, passed: report.passed() && within(report.elapsed, limit_secs), detail }
}

fn quadrature() -> Outcome {
    sweep("sketch marginal matches quadrature", verify::quadrature_sweep(), 5.0)
}

fn forward_filter() -> Outcome {
    sweep("forward filter matches path enumeration", verify::forward_filter_sweep(2024, 20), 2.0)
}

fn collapse() -> Outcome {
    sweep("moment matching collapse and round trip", verify::collapse_sweep(99), 1.0)
}

fn mixture_mean() -> Outcome {
    sweep("mixture mean matches hand formula", verify::mixture_mean_sweep(5), f64::INFINITY)
}

fn conservation() -> Outcome {
    let config = ScenarioConfig::reference();
    let grid = config.build_grid().unwrap();
    let data = generate(&config, &grid).unwrap();
    let mut worst = 0.0f64;
    let mut negative = 0usize;
    let mut steps = 0usize;
    for mode in [RunMode::Autonomous, RunMode::Fused] {
        run_mode(&config, &grid, &data, mode, |b| {
            steps += 1;
            worst = worst.max((b.weights().iter().sum::<f64>() - 1.0).abs());
            negative += b.weights().iter().filter(|w| **w < 0.0).count();
        })
        .unwrap();
    }
    Outcome {
        name: "belief stays normalised and nonnegative",
        passed: worst < 1e-12 && negative == 0 && steps > 0,
        detail: format!("{steps} steps, max |sum - 1| {worst:.2e} (tol 1e-12), {negative} negative weights"),
    }
}

fn fused_beats_autonomous() -> Outcome {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..50).collect();
    let summary = run_batch(&ScenarioConfig::reference(), &seeds).unwrap();
    let elapsed = start.elapsed();
    let frac = summary.fused_better_fraction.unwrap();
    let adaptive = ScenarioConfig { velocity_mode: VelocityMode::MmseDiff, ..ScenarioConfig::reference() };
    let adaptive_frac = run_batch(&adaptive, &seeds).unwrap().fused_better_fraction.unwrap();
    let mean = |m: RunMode| summary.modes.iter().find(|s| s.mode == m).unwrap().mean_rmse;
    Outcome {
        name: "fused RMSE below autonomous RMSE",
        passed: frac >= 0.9 && within(elapsed, 60.0),
        detail: format!(
            "fused better in {:.0}% of 50 runs (need 90%); mean RMSE fused {:.3} m, autonomous {:.3} m; {elapsed:.2?} (limit 60 s); with velocity feedback {:.0}%",
            frac * 100.0,
            mean(RunMode::Fused),
            mean(RunMode::Autonomous),
            adaptive_frac * 100.0
        ),
    }
}

fn small_sketches_more_reliable() -> Outcome {
    let start = Instant::now();
    let mut base = ScenarioConfig::reference();
    base.modes = vec![RunMode::Fused];
    let (large, small) = (base.operators[0].clone(), base.operators[1].clone());
    assert_eq!((large.sketch_radius, small.sketch_radius), (2.5, 1.0));
    assert_eq!((large.center_error_std, large.p_enclose), (small.center_error_std, small.p_enclose));
    let mut wins = 0;
    let mut complete = 0;
    for seed in 0..100 {
        let out = run_scenario(&ScenarioConfig { seed, ..base.clone() }).unwrap();
        let learning = &out.run(RunMode::Fused).unwrap().learning;
        let tenth = |id: u32| learning.iter().filter(|l| l.operator_id == id).nth(9).map(|l| l.mean_after);
        if let (Some(l), Some(s)) = (tenth(large.id), tenth(small.id)) {
            complete += 1;
            if s > l {
                wins += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        name: "small sketches earn more reliability than large",
        passed: wins >= 95 && complete == 100 && within(elapsed, 30.0),
        detail: format!("small ahead after 10 sketches in {wins}/100 runs (need 95, {complete} complete); {elapsed:.2?} (limit 30 s)"),
    }
}

fn median_small_sketch_mass(velocity_mode: VelocityMode) -> (f64, usize) {
    let mut config = ScenarioConfig::reference();
    config.modes = vec![RunMode::Fused];
    config.velocity_mode = velocity_mode;
    config.operators.retain(|o| o.sketch_radius == 1.0);
    let mut qs = Vec::new();
    for seed in 0..20 {
        let out = run_scenario(&ScenarioConfig { seed, ..config.clone() }).unwrap();
        qs.extend(out.run(RunMode::Fused).unwrap().learning.iter().filter(|l| l.t > 20).map(|l| l.q_s));
    }
    qs.sort_by(f64::total_cmp);
    (if qs.is_empty() { f64::NAN } else { qs[qs.len() / 2] }, qs.len())
}

// Runs with velocity feedback. The fixed-velocity kernel trails the target on
// this grid; its figure is reported alongside.
fn enclosed_mass_magnitude() -> Outcome {
    let (median, count) = median_small_sketch_mass(VelocityMode::MmseDiff);
    let (fixed, _) = median_small_sketch_mass(VelocityMode::Fixed);
    Outcome {
        name: "enclosed mass of accurate small sketches",
        passed: median >= 0.99,
        detail: format!(
            "median q_s {median:.6} over {count} sketches after t = 20 (need >= 0.99); fixed-velocity kernel gives {fixed:.3e}"
        ),
    }
}

fn random_bundle(rng: &mut ChaCha8Rng, n: usize, t: u64, sensors: usize, operators: usize) -> ObservationBundle {
    let mut bundle = ObservationBundle::empty(t);
    for k in 0..sensors {
        let pose = CameraPose::new(
            Point3::new(rng.random_range(0.0..6.0), rng.random_range(0.0..6.0), rng.random_range(5.0..10.0)),
            0.0,
            Intrinsics::default().matrix(),
        )
        .unwrap();
        bundle.ranges.push(RangeObservation {
            sensor_id: SensorId(k as u32),
            range: rng.random_range(5.0..12.0),
            detected: rng.random_bool(0.9),
            pose,
            sigma_d: rng.random_range(0.3..2.0),
        });
    }
    for j in 0..operators {
        let mut bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        bits[rng.random_range(0..n)] = true;
        bundle.sketches.push(SketchObservation::from_mask(OperatorId(j as u32), ParticleMask::from_bits(bits).unwrap(), t));
    }
    bundle
}

fn order_and_scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let grid = build_grid(Bounds::new([0.0, 6.0], [0.0, 6.0]).unwrap(), 6, 6).unwrap();
    let n = grid.len();
    let kernel = build_kernel(&grid, &VelocityState::new(Vector2::new(0.5, -0.3)), 1.0, 1.0).unwrap();
    let (mut order_mismatch, mut worst_scale) = (0usize, 0.0f64);
    for step in 0..100 {
        let (ns, no) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let sensors: Vec<SensorId> = (0..ns as u32).map(SensorId).collect();
        let ops: Vec<OperatorId> = (0..no as u32).map(OperatorId).collect();
        let weights = FusionWeights::by_count(&sensors, &ops).unwrap();
        let rels = ops
            .iter()
            .map(|id| (*id, ReliabilityState::new(*id, rng.random_range(0.5..8.0), rng.random_range(0.5..8.0)).unwrap()))
            .collect();
        let prior = Belief::from_weights((0..n).map(|_| rng.random_range(0.01..1.0)).collect(), step).unwrap();
        let bundle = random_bundle(&mut rng, n, step + 1, ns, no);

        let mut permuted = bundle.clone();
        permuted.ranges.shuffle(&mut rng);
        permuted.sketches.shuffle(&mut rng);
        let a = joint_step(&grid, &prior, &kernel, &bundle, &rels, &weights, &LearningOptions::default()).unwrap();
        let b = joint_step(&grid, &prior, &kernel, &permuted, &rels, &weights, &LearningOptions::default()).unwrap();
        if a.belief.weights() != b.belief.weights() || a.reliabilities != b.reliabilities {
            order_mismatch += 1;
        }

        let predicted = sketchfuse_core::motion::predict(&prior, &kernel).unwrap();
        let (sources, _) = source_likelihoods(&grid, &bundle, &rels, &weights).unwrap();
        let base = update(&predicted, &fuse_log(&sources, &weights).unwrap()).unwrap();
        let pick = rng.random_range(0..sources.len());
        let mut scaled = sources.clone();
        match &mut scaled[pick] {
            SourceLikelihood::Range { log_values, .. } | SourceLikelihood::Sketch { log_values, .. } => {
                for v in log_values.iter_mut() {
                    *v += 1e3f64.ln();
                }
            }
        }
        let other = update(&predicted, &fuse_log(&scaled, &weights).unwrap()).unwrap();
        let diff = base.weights().iter().zip(other.weights()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst_scale = worst_scale.max(diff);
    }
    Outcome {
        name: "posterior invariant to source order and likelihood scale",
        passed: order_mismatch == 0 && worst_scale < 1e-12,
        detail: format!("{order_mismatch}/100 permuted steps differ bitwise; max scale difference {worst_scale:.2e} (tol 1e-12)"),
    }
}

fn main() -> ExitCode {
    let checks: [fn() -> Outcome; 9] = [
        quadrature,
        forward_filter,
        collapse,
        mixture_mean,
        conservation,
        fused_beats_autonomous,
        small_sketches_more_reliable,
        enclosed_mass_magnitude,
        order_and_scale_invariance,
    ];
    let mut failed = 0;
    for (i, check) in checks.iter().enumerate() {
        let o = check();
        println!("[{}] {}: {}: {}", i + 1, if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {}/{} passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
