use sketchfuse_core::sim::{run_scenario, RunMode, ScenarioConfig};
use sketchfuse_core::Frame;
use sketchfuse_service::wire::{Ack, ServerMessage, SketchMessage};
use sketchfuse_service::{Session, SessionOptions};

fn replay_options() -> SessionOptions {
    SessionOptions { synthetic_sketches: true, ..SessionOptions::default() }
}

#[test]
fn session_without_clients_matches_headless_run() {
    for seed in [7, 11] {
        let config = ScenarioConfig { seed, ..ScenarioConfig::reference() };
        let headless = run_scenario(&config).unwrap();
        let fused = headless.run(RunMode::Fused).unwrap();
        let mut session = Session::new(1, config, replay_options()).unwrap();
        let mut n = 0;
        while let Some(frame) = session.tick().unwrap() {
            let step = &fused.steps[n];
            assert_eq!(frame.t, step.t);
            assert_eq!(frame.mmse, [step.mmse_x, step.mmse_y], "seed {seed} t={}", frame.t);
            assert_eq!(frame.map, [step.map_x, step.map_y]);
            assert_eq!(frame.truth, Some([step.truth_x, step.truth_y]));
            for (o, s) in frame.operators.iter().zip(&step.operators) {
                assert_eq!((o.operator_id, o.alpha, o.beta, o.q_s), (s.operator_id, s.alpha, s.beta, s.q_s));
            }
            n += 1;
        }
        assert_eq!(n, fused.steps.len());
    }
}

#[test]
fn every_accepted_sketch_is_learned_from_once() {
    let mut config = ScenarioConfig::reference();
    config.horizon = 40;
    let mut session = Session::new(1, config, SessionOptions::default()).unwrap();
    let square = |op: u32, c: [f64; 2]| SketchMessage {
        t: None,
        operator_id: op,
        frame: Frame::World,
        vertices: vec![[c[0] - 1.0, c[1] - 1.0], [c[0] + 1.0, c[1] - 1.0], [c[0] + 1.0, c[1] + 1.0], [c[0] - 1.0, c[1] + 1.0]],
        sensor_id: None,
        pose: None,
    };
    let mut accepted = vec![0usize; 2];
    let mut learned = vec![0usize; 2];
    let mut expected_ticks = Vec::new();
    for t in 0..40u64 {
        // Bursts of sketches between ticks, including some that miss the area.
        if t % 7 == 0 {
            for k in 0..3 {
                let op = (k % 2) as u32;
                let c = if k == 2 { [30.0, 30.0] } else { [2.0 + t as f64 * 0.1, 2.0 + t as f64 * 0.1] };
                if let ServerMessage::Ack(Ack::Sketch { operator_id, tick, .. }) = session.ingest_sketch(&square(op, c)) {
                    accepted[operator_id as usize] += 1;
                    expected_ticks.push((operator_id, tick));
                }
            }
        }
        let frame = session.tick().unwrap().unwrap();
        for o in &frame.operators {
            if o.q_s.is_some() {
                learned[o.operator_id as usize] += 1;
                assert!(expected_ticks.contains(&(o.operator_id, frame.t)), "unexpected update for {} at {}", o.operator_id, frame.t);
            }
        }
    }
    assert_eq!(accepted, learned);
    assert!(accepted.iter().sum::<usize>() > 0);
}
