//! Conditioned-scenario construction: rejection behavior, an independent
//! replay check of the accepted trigger patterns, and the exact windowed-MSE
//! decompositions the closed forms rest on.

use outformation::engine::{run_simulation, RunInput};
use outformation::environment::{
    build_setup_one, build_setup_two, ConditioningError, SetupMeta, DEFAULT_REJECTION_BUDGET,
};
use outformation::experiments::preset;
use outformation::fusion::integrate_mse;
use outformation::model::{ArchitectureKind, BackoffSpec, Scenario};
use outformation::rng::Streams;
use outformation::sensing::{observe, verify, SensorState};

/// Observation value straight from the keyed stream of the accepted attempt.
fn obs_value(scn: &Scenario, sc: &outformation::ConditionedScenario, rep: u64, sensor: u8, k: u32, tick: u64) -> f64 {
    let streams = Streams::with_salt(scn.config.seed, rep, sc.noise_salt);
    observe(&sc.path, &scn.map, &scn.config, &streams, sensor, k, tick)
        .unwrap()
        .value
}

#[test]
fn noiseless_setup_one_needs_no_rejections() {
    let mut scn = preset("setup1").unwrap();
    scn.config.sigma = 0.0;
    for rep in 0..50 {
        let sc = build_setup_one(&scn, rep, DEFAULT_REJECTION_BUDGET).unwrap();
        assert_eq!(sc.rejections, 0, "sigma = 0 with d_low > eps accepts immediately");
    }
}

#[test]
fn noiseless_zero_backoff_setup_one_accepts_for_larger_h() {
    // With zero backoff every transmission fires before the next sample, so
    // references track the state and the quiet pattern holds surely.
    let mut scn = preset("setup1").unwrap();
    scn.config.sigma = 0.0;
    scn.config.tau_1 = 5.0;
    scn.config.tau_2 = 5.0;
    scn.config.t_1 = 5.0;
    scn.config.t_2 = 5.0;
    scn.config.h = 4;
    scn.config.backoff = BackoffSpec::Zero;
    scn.validate().unwrap();
    let sc = build_setup_one(&scn, 0, DEFAULT_REJECTION_BUDGET).unwrap();
    assert_eq!(sc.rejections, 0);
}

#[test]
fn unreachable_threshold_is_reported_infeasible() {
    let mut scn = preset("setup1").unwrap();
    scn.config.epsilon = 100.0;
    scn.config.sigma = 0.1;
    let err = build_setup_one(&scn, 0, 50).unwrap_err();
    assert!(
        matches!(err, ConditioningError::SetupOneInfeasible { attempts: 50 }),
        "{err}"
    );
    assert!(err.to_string().contains("setup-I conditioning infeasible"));
}

#[test]
fn setup_one_pattern_replays_through_sensing() {
    // Independent check of every accepted scenario: fresh sensor states,
    // observations straight from the keyed streams, the verification rule
    // applied by hand. The shared component must trigger at the window
    // start on both sensors and nothing else may trigger at that instant.
    let scn = preset("setup1").unwrap();
    for rep in 0..300 {
        let sc = build_setup_one(&scn, rep, DEFAULT_REJECTION_BUDGET).unwrap();
        let SetupMeta::One { component, full_index, step, .. } = sc.setup else { panic!() };
        assert!(step.abs() >= scn.config.d_low && step.abs() <= scn.config.d_up);
        assert_eq!(sc.path.value_at(full_index, 0.0), step);

        let streams = Streams::with_salt(scn.config.seed, rep, sc.noise_salt);
        for sensor in [1u8, 2u8] {
            let refs = scn
                .map
                .observed_by(sensor)
                .into_iter()
                .map(|k| (k, 0.0))
                .collect();
            let state = SensorState::new(sensor, refs);
            let samples: Vec<_> = scn
                .map
                .observed_by(sensor)
                .into_iter()
                .map(|k| {
                    observe(&sc.path, &scn.map, &scn.config, &streams, sensor, k, 0).unwrap()
                })
                .collect();
            let triggered = verify(&state, &samples, ArchitectureKind::InEps, scn.config.epsilon);
            assert_eq!(triggered, vec![component], "sensor {sensor}, rep {rep}");
        }
    }
}

#[test]
fn setup_one_windowed_mse_matches_the_closed_decomposition() {
    // IN(eps): old estimate for dt_up, y1 alone for B, the average for
    // delta_t - B - dt_up. OUT(eps) on cancelled paths: old estimate for
    // dt_up, then y1 alone for the rest. Machine-precision agreement of the
    // event-driven integral with these plug-in expressions is the
    // regression test for the duration bookkeeping.
    let scn = preset("setup1").unwrap();
    let cfg = &scn.config;
    let k = 1u32;
    let mut cancelled_seen = 0u32;
    for rep in 0..400 {
        let sc = build_setup_one(&scn, rep, DEFAULT_REJECTION_BUDGET).unwrap();
        let SetupMeta::One { full_index, step, .. } = sc.setup else { panic!() };
        let input = RunInput::conditioned(&sc);
        let (t_in, _) = run_simulation(&scn, ArchitectureKind::InEps, &input, rep).unwrap();
        let (t_out, _) = run_simulation(&scn, ArchitectureKind::OutEps, &input, rep).unwrap();

        let y1 = obs_value(&scn, &sc, rep, 1, k, 0);
        let y2 = obs_value(&scn, &sc, rep, 2, k, 0);
        let backoff = t_in
            .events
            .iter()
            .find(|e| e.kind == "schedule" && e.actor == 2)
            .and_then(|e| e.value)
            .expect("sensor 2 schedules");
        let x = step;
        let w1 = y1 - x;
        let w2 = y2 - x;
        let avg_err = 0.5 * (y1 + y2) - x;

        let mse_in = integrate_mse(&sc.path, &t_in.estimates, sc.window)[full_index - 1];
        let closed_in = x * x * cfg.dt_up
            + w1 * w1 * backoff
            + avg_err * avg_err * (cfg.delta_t - backoff - cfg.dt_up);
        assert!(
            (mse_in - closed_in).abs() <= 1e-9 * closed_in.abs().max(1.0),
            "rep {rep}: {mse_in} vs {closed_in}"
        );

        let cancelled = t_out.cancellations > 0;
        let mse_out = integrate_mse(&sc.path, &t_out.estimates, sc.window)[full_index - 1];
        if cancelled {
            cancelled_seen += 1;
            let closed_out = x * x * cfg.dt_up + w1 * w1 * (cfg.delta_t - cfg.dt_up);
            assert!(
                (mse_out - closed_out).abs() <= 1e-9 * closed_out.abs().max(1.0),
                "rep {rep}: {mse_out} vs {closed_out}"
            );
            let cancel_expected = backoff >= cfg.dt_up + cfg.dt_down && (w1 - w2).abs() < cfg.epsilon;
            assert!(cancel_expected, "rep {rep}: cancellation against the rule");
        } else {
            assert_eq!(mse_out, mse_in, "rep {rep}: identical paths when not cancelled");
        }
    }
    assert!(cancelled_seen > 100, "regime should cancel often ({cancelled_seen})");
}

#[test]
fn setup_one_uplink_count_out_never_exceeds_in() {
    let scn = preset("setup1").unwrap();
    for rep in 0..200 {
        let sc = build_setup_one(&scn, rep, DEFAULT_REJECTION_BUDGET).unwrap();
        let input = RunInput::conditioned(&sc);
        let (t_in, r_in) = run_simulation(&scn, ArchitectureKind::InEps, &input, rep).unwrap();
        let (t_out, r_out) = run_simulation(&scn, ArchitectureKind::OutEps, &input, rep).unwrap();
        assert!(r_out.uplink_components <= r_in.uplink_components);
        assert!(t_out.cancellations <= 1);
        let _ = t_in;
    }
}

#[test]
fn setup_one_broadcast_arrives_after_both_delays() {
    let mut scn = preset("setup1").unwrap();
    scn.config.sigma = 0.0;
    let sc = build_setup_one(&scn, 0, DEFAULT_REJECTION_BUDGET).unwrap();
    let input = RunInput::conditioned(&sc);
    let (trace, _) = run_simulation(&scn, ArchitectureKind::OutEps, &input, 0).unwrap();
    let bcast = trace
        .events
        .iter()
        .find(|e| e.kind == "bcast_arrive")
        .expect("sensor 1's report is broadcast");
    assert_eq!(bcast.time, scn.config.dt_up + scn.config.dt_down);
    assert_eq!(bcast.actor, 2);
    assert_eq!(bcast.components, vec![1]);
}

#[test]
fn setup_two_rejects_degenerate_period_pairs() {
    let mut scn = preset("setup2").unwrap();
    scn.config.t_2 = 23.0;
    scn.validate().unwrap();
    let err = build_setup_two(&scn, 0, 10).unwrap_err();
    assert!(matches!(err, ConditioningError::NoValidPair), "{err}");
}

#[test]
fn setup_two_rejects_event_triggered_configs() {
    let scn = preset("setup1").unwrap();
    let err = build_setup_two(&scn, 0, 10).unwrap_err();
    assert!(matches!(err, ConditioningError::Precondition(_)), "{err}");
}

#[test]
fn setup_two_rejects_backoffs_that_outlast_the_cycle() {
    let mut scn = preset("setup2").unwrap();
    scn.config.backoff = BackoffSpec::Uniform { b: 40.0 };
    scn.validate().unwrap();
    let err = build_setup_two(&scn, 0, 10).unwrap_err();
    assert!(matches!(err, ConditioningError::TailOverlap { .. }), "{err}");
}

#[test]
fn setup_two_scenario_replays_its_change_and_trigger_pattern() {
    let scn = preset("setup2").unwrap();
    let cfg = &scn.config;
    for rep in 0..100 {
        let sc = build_setup_two(&scn, rep, DEFAULT_REJECTION_BUDGET).unwrap();
        let SetupMeta::Two {
            a1,
            a2,
            shared,
            shared_interval,
            unshared,
            unshared_interval,
            shared_step,
            unshared_step,
            ..
        } = sc.setup
        else {
            panic!()
        };
        assert_eq!((a1, a2), (2, 1));
        let t0 = (a1 - 1) as f64 * cfg.t_1;
        let t_mid = a2 as f64 * cfg.t_2;
        let tf = a1 as f64 * cfg.t_1;
        // Exactly two changes, one per sub-window.
        assert_eq!(sc.path.changes().len(), 2);
        let t_shared = shared_interval as f64 * cfg.delta_t;
        let t_unshared = unshared_interval as f64 * cfg.delta_t;
        assert!(t0 < t_shared && t_shared <= t_mid);
        assert!(t_mid < t_unshared && t_unshared <= tf);

        // Independent replay of the trigger pattern against quiet references.
        let grid = cfg.grid();
        let refs1 = scn.map.observed_by(1).into_iter().map(|q| (q, 0.0)).collect();
        let state1 = SensorState::new(1, refs1);
        // Quiet instants: nothing may clear the threshold.
        for (sensor, tick) in [(1u8, 0u64), (2, 0), (1, (t0 / grid.tau) as u64)] {
            let streams = Streams::with_salt(cfg.seed, rep, sc.noise_salt);
            for q in scn.map.observed_by(sensor) {
                let o = observe(&sc.path, &scn.map, cfg, &streams, sensor, q, tick).unwrap();
                assert!((o.value - 0.0).abs() < cfg.epsilon, "quiet tick {tick}");
            }
        }
        // Sensor 2 triggers the shared component at a2 T2.
        let v2 = obs_value(&scn, &sc, rep, 2, shared, (t_mid / grid.tau) as u64);
        assert!((v2 - 0.0).abs() >= cfg.epsilon);
        assert!((v2 - shared_step).abs() < 6.0 * cfg.sigma + 1e-9);
        // Sensor 1 triggers both at a1 T1 (references still at the initial
        // values under IN).
        let tick_f = (tf / grid.tau) as u64;
        let samples: Vec<_> = scn
            .map
            .observed_by(1)
            .into_iter()
            .map(|q| {
                let streams = Streams::with_salt(cfg.seed, rep, sc.noise_salt);
                observe(&sc.path, &scn.map, cfg, &streams, 1, q, tick_f).unwrap()
            })
            .collect();
        let triggered = verify(&state1, &samples, ArchitectureKind::InEps, cfg.epsilon);
        assert_eq!(triggered, vec![shared, unshared]);
        let _ = unshared_step;
    }
}

#[test]
fn setup_two_improvement_equals_the_delay_gap_exactly() {
    // On cancelled paths the k1 difference is dt_up * (d1^2 - W1^2); on the
    // rest the trajectories coincide.
    let scn = preset("setup2").unwrap();
    let cfg = &scn.config;
    let mut cancelled_seen = 0;
    for rep in 0..150 {
        let sc = build_setup_two(&scn, rep, DEFAULT_REJECTION_BUDGET).unwrap();
        let SetupMeta::Two { a1, shared, unshared, unshared_index, unshared_step, .. } = sc.setup
        else {
            panic!()
        };
        let input = RunInput::conditioned(&sc);
        let (t_in, _) = run_simulation(&scn, ArchitectureKind::InEps, &input, rep).unwrap();
        let (t_out, _) = run_simulation(&scn, ArchitectureKind::OutEps, &input, rep).unwrap();
        let window = (sc.window.0, sc.measure_end);
        let mse_in = integrate_mse(&sc.path, &t_in.estimates, window)[unshared_index - 1];
        let mse_out = integrate_mse(&sc.path, &t_out.estimates, window)[unshared_index - 1];

        let tf = a1 as f64 * cfg.t_1;
        let suppressed = !t_out
            .events
            .iter()
            .filter(|e| e.kind == "uplink_send" && e.actor == 1 && e.value == Some(tf))
            .any(|e| e.components.contains(&shared));
        if suppressed {
            cancelled_seen += 1;
            let grid = cfg.grid();
            let y1 = obs_value(&scn, &sc, rep, 1, unshared, (tf / grid.tau) as u64);
            let w1 = y1 - unshared_step;
            let expected = cfg.dt_up * (unshared_step * unshared_step - w1 * w1);
            let got = mse_in - mse_out;
            assert!(
                (got - expected).abs() <= 1e-9 * expected.abs().max(1.0),
                "rep {rep}: {got} vs {expected}"
            );
        } else {
            assert_eq!(mse_in, mse_out, "rep {rep}");
        }
    }
    assert!(cancelled_seen > 20, "saw {cancelled_seen}");
}

#[test]
fn estimate_p_is_zero_without_triggers_and_one_with_in0_semantics() {
    use outformation::theory::estimate_p_jk;
    // sigma = 0 and p_change = 0: nothing ever triggers.
    let mut scn = preset("setup1").unwrap();
    scn.config.sigma = 0.0;
    scn.config.p_change = 0.0;
    let table = estimate_p_jk(&scn, 200, 2);
    assert!(table.entries.values().all(|e| e.p == 0.0));
    assert!(table.entries.values().all(|e| e.p >= 0.0 && e.p <= 1.0 && e.se <= 0.5 / (200f64).sqrt()));

    // eps = 0 makes the threshold rule trigger every instant.
    let mut scn = preset("setup1").unwrap();
    scn.config.epsilon = 0.0;
    let table = estimate_p_jk(&scn, 200, 2);
    assert!(table.entries.values().all(|e| e.p == 1.0), "{:?}", table.entries);
}
