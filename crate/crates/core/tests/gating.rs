use hicam_core::gating::{
    collect_batch, controller_step, run_batch, run_frame, CloseCause, ControllerError, ControllerEvent, GateAction,
    GateControllerState, GatingConfig, Phase, SimulationError,
};
use hicam_core::readout::ReadoutParams;
use hicam_core::rng::frame_stream;
use hicam_core::RunConfig;

const TIMES: [f64; 4] = [0.0, 100.0, 150.0, 300.0];

fn all_events(t: f64) -> [ControllerEvent; 4] {
    [
        ControllerEvent::FireAllRise(t),
        ControllerEvent::FireAllFall(t),
        ControllerEvent::DiscriminatorTrigger(t),
        ControllerEvent::TimerExpiry(t),
    ]
}

/// Checks one transition against the phase invariants.
fn check_step(
    before: &GateControllerState,
    event: ControllerEvent,
    result: &Result<(GateControllerState, Option<GateAction>), ControllerError>,
    config: &GatingConfig,
    pending_entries: &mut u32,
) {
    let t = event.time();
    let (after, action) = match result {
        Err(ControllerError::OutOfOrder { .. }) => panic!("generated sequences are ordered"),
        Err(ControllerError::RiseWhileHigh(p)) => {
            assert!(matches!(p, Phase::Open | Phase::ClosePending | Phase::Closed));
            return;
        }
        Err(ControllerError::FallWhileLow(p)) => {
            assert!(matches!(p, Phase::Idle | Phase::WaitFireAll));
            return;
        }
        Ok(ok) => ok,
    };
    if after.trigger_count > before.trigger_count {
        assert!(matches!(event, ControllerEvent::DiscriminatorTrigger(_)));
        assert!(before.gate_open(), "trigger counted in {:?}", before.phase);
        assert_eq!(after.trigger_count, before.trigger_count + 1);
    }
    if matches!(event, ControllerEvent::FireAllRise(_)) {
        *pending_entries = 0;
        assert_eq!(after.phase, Phase::Open);
        assert_eq!(action, &Some(GateAction::OpenGate(t)));
    }
    if after.phase == Phase::ClosePending && before.phase != Phase::ClosePending {
        *pending_entries += 1;
        assert!(*pending_entries <= 1, "ClosePending entered twice in one frame");
        assert!(matches!(config.mode, hicam_core::gating::GatingMode::Adaptive { .. }));
    }
    if let Some(GateAction::CloseGate(tc, cause)) = action {
        let tr = after.last_trace.expect("close leaves a trace");
        assert_eq!((tr.close_t, tr.cause), (*tc, *cause));
        assert!(tr.open_t <= tr.close_t);
        assert!(*tc <= t);
        assert!(!after.gate_open());
        match cause {
            CloseCause::TargetReached => {
                assert_eq!(tr.close_t - after.target_trigger_t.unwrap(), config.feedback_latency_ns)
            }
            CloseCause::FixedExpiry => {
                if let hicam_core::gating::GatingMode::Fixed { gate_ns } = config.mode {
                    assert_eq!(tr.close_t - tr.open_t, gate_ns);
                }
            }
            CloseCause::FireAllEnded => assert!(matches!(event, ControllerEvent::FireAllFall(_))),
        }
    }
    if matches!(event, ControllerEvent::FireAllFall(_)) {
        assert_eq!(after.phase, Phase::WaitFireAll);
    }
    // A frame never ends with the gate open.
    assert!(!(after.phase == Phase::WaitFireAll && after.gate_open()));
    assert!(after.close_scheduled_t.is_none() || after.gate_open());
}

fn explore(state: &GateControllerState, depth: usize, config: &GatingConfig, pending: u32, visited: &mut u64) {
    if depth == 0 {
        return;
    }
    let last = state.last_event_t.unwrap_or(f64::NEG_INFINITY);
    for &t in TIMES.iter().filter(|&&t| t >= last) {
        for e in all_events(t) {
            let r = controller_step(state, e, config);
            let mut p = pending;
            check_step(state, e, &r, config, &mut p);
            *visited += 1;
            if let Ok((next, _)) = r {
                explore(&next, depth - 1, config, p, visited);
            }
        }
    }
}

#[test]
fn fsm_exhaustive_small_traces() {
    let mut configs = vec![GatingConfig::adaptive(1), GatingConfig::adaptive(2), GatingConfig::fixed(150.0)];
    configs.push(GatingConfig {
        feedback_latency_ns: 0.0,
        ..GatingConfig::adaptive(1)
    });
    for cfg in &configs {
        let mut visited = 0;
        explore(&GateControllerState::default(), 6, cfg, 0, &mut visited);
        assert!(visited > 100_000, "{visited}");
    }
}

#[test]
fn out_of_order_event_is_hard_error() {
    let cfg = GatingConfig::adaptive(1);
    let (s, _) = controller_step(&GateControllerState::default(), ControllerEvent::FireAllRise(10.0), &cfg).unwrap();
    assert!(controller_step(&s, ControllerEvent::TimerExpiry(9.0), &cfg).is_err());
}

fn lossless_config() -> RunConfig {
    let mut c = RunConfig::with_seed(11);
    c.source.pair_rate_hz = 30.0;
    c.source.noise_rate_hz = 0.0;
    c.intensifier.qe = 1.0;
    c.intensifier.crosstalk_prob = 0.0;
    c.readout = ReadoutParams {
        cmos_noise_sigma: 0.0,
        cmos_gain_noise: 0.0,
        pmt_noise_sigma: 0.0,
        pmt_gain_noise: 0.0,
        pmt_false_pulse_rate_hz: 0.0,
        discriminator_threshold: 1e-9,
        ..ReadoutParams::default()
    };
    c.extraction.detect_threshold = 1e-6;
    c.gating.fire_all_duration_ns = 1e9;
    c.gating.frame_period_ns = 1e9;
    c
}

#[test]
fn lossless_pair_gives_two_spots() {
    let c = lossless_config();
    let frames = collect_batch(&c, &c.gating, 11, 300, 1).unwrap();
    for f in &frames {
        assert_eq!(f.spots.len(), 2, "frame {}", f.frame_id);
        assert_eq!(f.gate.cause, CloseCause::TargetReached);
        let truth = f.truth.as_ref().unwrap();
        assert_eq!(truth.len(), 2);
        assert_eq!(truth[0].pair_id, truth[1].pair_id);
        assert_eq!(f.gate.close_t, truth[0].t + 150.0);
    }
}

#[test]
fn empty_source_closes_at_fire_all_end() {
    let mut c = RunConfig::with_seed(2);
    c.source.pair_rate_hz = 0.0;
    c.source.noise_rate_hz = 0.0;
    c.readout.pmt_false_pulse_rate_hz = 0.0;
    let f = run_frame(&c, &c.gating, 0, &mut frame_stream(2, 0)).unwrap();
    assert!(f.spots.is_empty());
    assert_eq!(f.gate.cause, CloseCause::FireAllEnded);
    assert_eq!(f.gate.close_t, c.gating.fire_all_duration_ns);
}

#[test]
fn recorded_photons_lie_inside_the_gate() {
    let c = RunConfig::with_seed(5);
    for g in [GatingConfig::adaptive(1), GatingConfig::adaptive(3), GatingConfig::fixed(500.0)] {
        for f in collect_batch(&c, &g, 5, 2000, 1).unwrap() {
            for p in f.truth.as_ref().unwrap() {
                assert!(f.gate.open_t <= p.t && p.t <= f.gate.close_t);
            }
            for p in &f.pmt_pulses {
                assert!(f.gate.open_t <= p.t && p.t <= f.gate.close_t);
            }
            assert!(f.gate.close_t <= g.fire_all_duration_ns);
        }
    }
}

#[test]
fn adaptive_window_starts_at_first_trigger() {
    let c = RunConfig::with_seed(6);
    let mut reached = 0;
    for f in collect_batch(&c, &c.gating, 6, 2000, 1).unwrap() {
        if f.gate.cause == CloseCause::TargetReached {
            reached += 1;
            let first = f.pmt_pulses.iter().find(|p| p.amplitude >= c.readout.discriminator_threshold).unwrap();
            assert_eq!(f.gate.close_t, first.t + c.gating.feedback_latency_ns);
        }
    }
    assert!(reached > 1900);
}

#[test]
fn enough_triggers_imply_target_reached() {
    // Every flash triggers: no false pulses, no merging, no amplitude noise.
    let mut c = RunConfig::with_seed(8);
    c.readout.pmt_false_pulse_rate_hz = 0.0;
    c.readout.pulse_pair_resolution_ns = 0.0;
    c.readout.pmt_noise_sigma = 0.0;
    c.readout.discriminator_threshold = 1e-9;
    c.source.pair_rate_hz = 2e4;
    c.source.noise_rate_hz = 2e4;
    let g = GatingConfig {
        fire_all_duration_ns: 1e5,
        ..GatingConfig::adaptive(2)
    };
    let mut beyond_target = 0;
    for f in collect_batch(&c, &g, 8, 3000, 1).unwrap() {
        let times: Vec<f64> = f.pmt_pulses.iter().map(|p| p.t).collect();
        if times.len() >= 2 && times[1] + g.feedback_latency_ns > g.fire_all_duration_ns {
            assert_eq!(f.gate.cause, CloseCause::FireAllEnded);
        } else if times.len() >= 2 {
            assert_eq!(f.gate.cause, CloseCause::TargetReached);
            assert_eq!(f.gate.close_t, times[1] + g.feedback_latency_ns);
            for &t in &times[2..] {
                assert!(times[1] <= t && t <= f.gate.close_t);
                beyond_target += 1;
            }
        } else {
            assert_eq!(f.gate.cause, CloseCause::FireAllEnded);
        }
    }
    assert!(beyond_target > 0);
}

#[test]
fn gate_durations_fixed_constant_adaptive_varying() {
    let c = RunConfig::with_seed(3);
    let fixed = collect_batch(&c, &GatingConfig::fixed(150.0), 3, 500, 1).unwrap();
    assert!(fixed.iter().all(|f| f.gate.close_t - f.gate.open_t == 150.0));
    let adaptive = collect_batch(&c, &c.gating, 3, 500, 1).unwrap();
    let d: Vec<f64> = adaptive.iter().map(|f| f.gate.close_t - f.gate.open_t).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64;
    assert!(var > 0.0);
}

#[test]
fn batches_are_deterministic_across_workers() {
    let c = RunConfig::with_seed(4);
    let a = collect_batch(&c, &c.gating, 4, 3000, 1).unwrap();
    let b = collect_batch(&c, &c.gating, 4, 3000, 4).unwrap();
    let d = collect_batch(&c, &c.gating, 4, 3000, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, d);
    let other = collect_batch(&c, &c.gating, 5, 1, 1).unwrap();
    assert_ne!(a[0].gate, other[0].gate);
}

#[test]
fn zero_frames_is_an_error() {
    let c = RunConfig::with_seed(1);
    assert!(matches!(
        run_batch(&c, &c.gating, 1, 0, 1, |_| Ok(())),
        Err(SimulationError::NoFrames)
    ));
}

#[test]
fn sink_errors_propagate() {
    let c = RunConfig::with_seed(1);
    let r = run_batch(&c, &c.gating, 1, 10, 1, |_| Err("disk full".to_string()));
    assert!(matches!(r, Err(SimulationError::Sink(_))));
}
