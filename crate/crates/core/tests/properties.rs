use nalgebra::{Point2, Point3, Vector2};
use proptest::prelude::*;

use sketchfuse_core::grid::{build_grid, polygon_mask, Bounds, CameraPose, Frame, Intrinsics, ParticleGrid, Polygon};
use sketchfuse_core::human::{marginal_sketch_likelihood, OperatorId, ReliabilityState, SketchObservation};
use sketchfuse_core::learning::{enclosed_mass, update_reliability, LearningOptions, VarianceMode};
use sketchfuse_core::motion::{build_kernel, predict, VelocityState};
use sketchfuse_core::tracker::{fuse_log, update, Belief, FusionWeights, SourceLikelihood};
use sketchfuse_core::SensorId;

fn grid() -> ParticleGrid {
    build_grid(Bounds::new([0.0, 10.0], [0.0, 10.0]).unwrap(), 20, 20).unwrap()
}

fn weights_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_ignores_vertex_order(cx in 1.0f64..9.0, cy in 1.0f64..9.0, r in 0.3f64..4.0, sides in 3usize..40) {
        let g = grid();
        let poly = Polygon::regular(Point2::new(cx, cy), r, sides, Frame::World).unwrap();
        let a = polygon_mask(&g, &poly);
        let b = polygon_mask(&g, &poly.reversed());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mask_is_translation_equivariant(cx in 1.0f64..9.0, cy in 1.0f64..9.0, r in 0.3f64..4.0, k in -6i32..6, l in -6i32..6) {
        // Shifts by whole multiples of 0.5 m stay exactly representable.
        let (dx, dy) = (k as f64 * 0.5, l as f64 * 0.5);
        let g = grid();
        let poly = Polygon::regular(Point2::new(cx, cy), r, 16, Frame::World).unwrap();
        let moved = Polygon::new(poly.vertices().iter().map(|p| Point2::new(p.x + dx, p.y + dy)).collect(), Frame::World).unwrap();
        prop_assert_eq!(polygon_mask(&g, &poly), polygon_mask(&g.translated(dx, dy), &moved));
    }

    #[test]
    fn projection_round_trip(x in -20.0f64..20.0, y in -20.0f64..20.0, z in 2.0f64..50.0, yaw in 0.0f64..std::f64::consts::TAU, u in 0.0f64..640.0, v in 0.0f64..480.0) {
        let pose = CameraPose::new(Point3::new(x, y, z), yaw, Intrinsics::default().matrix()).unwrap();
        let ground = pose.back_project(&Point2::new(u, v)).unwrap();
        let px = pose.project_to_image(&Point3::new(ground.x, ground.y, 0.0)).unwrap();
        prop_assert!((px.x - u).abs() < 1e-9 && (px.y - v).abs() < 1e-9, "{:?} vs ({}, {})", px, u, v);
    }

    #[test]
    fn kernel_rows_are_distributions(vx in -3.0f64..3.0, vy in -3.0f64..3.0, sigma in 0.05f64..3.0, t_s in 0.05f64..2.0) {
        let g = build_grid(Bounds::new([0.0, 4.0], [0.0, 3.0]).unwrap(), 6, 8).unwrap();
        let k = build_kernel(&g, &VelocityState::new(Vector2::new(vx, vy)), sigma, t_s).unwrap();
        for j in 0..k.len() {
            let row = k.row(j);
            prop_assert!(row.iter().all(|(_, p)| *p >= 0.0));
            let s: f64 = row.iter().map(|(_, p)| p).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_is_translation_consistent(vx in -2.0f64..2.0, vy in -2.0f64..2.0, sigma in 0.2f64..2.0, k in -4i32..4) {
        let g = build_grid(Bounds::new([0.0, 4.0], [0.0, 4.0]).unwrap(), 5, 5).unwrap();
        let d = k as f64 * 0.8;
        let v = VelocityState::new(Vector2::new(vx, vy));
        let a = build_kernel(&g, &v, sigma, 0.5).unwrap();
        let b = build_kernel(&g.translated(d, -d), &v, sigma, 0.5).unwrap();
        for j in 0..a.len() {
            for (x, y) in a.row(j).iter().zip(b.row(j)) {
                prop_assert_eq!(x.0, y.0);
                prop_assert!((x.1 - y.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predict_preserves_mass(w in weights_strategy(30), vx in -2.0f64..2.0, sigma in 0.1f64..2.0) {
        let g = build_grid(Bounds::new([0.0, 6.0], [0.0, 5.0]).unwrap(), 5, 6).unwrap();
        let k = build_kernel(&g, &VelocityState::new(Vector2::new(vx, 0.3)), sigma, 1.0).unwrap();
        let b = predict(&Belief::from_weights(w, 0).unwrap(), &k).unwrap();
        prop_assert!((b.total() - 1.0).abs() < 1e-12);
        prop_assert!(b.weights().iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn fusion_ignores_source_order(a in weights_strategy(8), b in weights_strategy(8), c in weights_strategy(8), prior in weights_strategy(8)) {
        let w = FusionWeights::by_count(&[SensorId(0), SensorId(1)], &[OperatorId(0)]).unwrap();
        let ln = |v: &Vec<f64>| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
        let s = [
            SourceLikelihood::Range { sensor: SensorId(0), log_values: ln(&a) },
            SourceLikelihood::Range { sensor: SensorId(1), log_values: ln(&b) },
            SourceLikelihood::Sketch { operator: OperatorId(0), log_values: ln(&c) },
        ];
        let reversed = [s[2].clone(), s[0].clone(), s[1].clone()];
        let p = Belief::from_weights(prior, 0).unwrap();
        let x = update(&p, &fuse_log(&s, &w).unwrap()).unwrap();
        let y = update(&p, &fuse_log(&reversed, &w).unwrap()).unwrap();
        prop_assert_eq!(x.weights(), y.weights());
    }

    #[test]
    fn zero_weight_sketch_is_flat(alpha in 0.1f64..20.0, beta in 0.1f64..20.0, bits in prop::collection::vec(any::<bool>(), 12)) {
        prop_assume!(bits.iter().any(|b| *b));
        let s = SketchObservation::from_mask(OperatorId(0), sketchfuse_core::ParticleMask::from_bits(bits).unwrap(), 1);
        let rel = ReliabilityState::new(OperatorId(0), alpha, beta).unwrap();
        prop_assert!(marginal_sketch_likelihood(&s, &rel, 0.0).unwrap().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn reliability_update_stays_valid(
        alpha in 0.2f64..30.0,
        beta in 0.2f64..30.0,
        weight in 0.0f64..1.0,
        post in weights_strategy(40),
        bits in prop::collection::vec(any::<bool>(), 40),
        exact in any::<bool>(),
    ) {
        prop_assume!(bits.iter().any(|b| *b));
        let s = SketchObservation::from_mask(OperatorId(3), sketchfuse_core::ParticleMask::from_bits(bits.clone()).unwrap(), 1);
        let rel = ReliabilityState::new(OperatorId(3), alpha, beta).unwrap();
        let p = Belief::from_weights(post, 1).unwrap();
        let q = enclosed_mass(&p, &bits).unwrap();
        prop_assert!((0.0..=1.0).contains(&q));
        let opts = LearningOptions { variance_mode: if exact { VarianceMode::Exact } else { VarianceMode::Weighted }, forgetting: None };
        let u = update_reliability(&rel, &s, &p, weight, &opts).unwrap();
        prop_assert!(u.state.alpha > 0.0 && u.state.beta > 0.0);
        prop_assert!(u.state.alpha.is_finite() && u.state.beta.is_finite());
        prop_assert!((u.record.q_s - q).abs() < 1e-15);
    }
}
