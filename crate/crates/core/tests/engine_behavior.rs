//! End-to-end engine checks on hand-built paths and presets: exact event
//! timing under sigma = 0, architecture orderings, broadcast scoping, and
//! trace/ledger consistency.

use outformation::engine::{run_simulation, RunInput, SimulationTrace};
use outformation::environment::{sample_path, ChangeRecord, EnvironmentPath};
use outformation::experiments::{cumulative_uplink, never_exceeds, preset};
use outformation::fusion::EstimateState;
use outformation::model::{
    ArchitectureKind, BackoffSpec, BroadcastAccounting, ComponentMap, Scenario, ScenarioConfig,
};
use outformation::rng::Streams;

fn two_component_scenario(epsilon: f64, backoff: BackoffSpec) -> Scenario {
    Scenario {
        config: ScenarioConfig {
            n: 2,
            delta_t: 20.0,
            tau_1: 20.0,
            tau_2: 20.0,
            t_1: 20.0,
            t_2: 20.0,
            epsilon,
            sigma: 0.0,
            d_low: 2.0,
            d_up: 4.0,
            p_change: 0.4,
            dt_up: 1.0,
            dt_down: 1.0,
            p_up: 2.0,
            p_down: 1.0,
            backoff,
            t_sim: 100.0,
            h: 1,
            broadcast_accounting: BroadcastAccounting::Conditional,
            seed: 42,
        },
        map: ComponentMap {
            shared: [1].into(),
            unshared_1: [2].into(),
            unshared_2: [].into(),
            full_index: [(1, 1), (2, 2)].into(),
        },
    }
}

fn events_of<'a>(trace: &'a SimulationTrace, kind: &str) -> Vec<&'a outformation::engine::TraceEvent> {
    trace.events.iter().filter(|e| e.kind == kind).collect()
}

#[test]
fn identical_runs_produce_identical_traces() {
    let scn = preset("fig_event").unwrap();
    let streams = Streams::new(scn.config.seed, 5);
    let path = sample_path(&scn.config, &streams);
    let input = RunInput::from_path(&path, scn.config.t_sim);
    let (a, ra) = run_simulation(&scn, ArchitectureKind::OutEps, &input, 5).unwrap();
    let (b, rb) = run_simulation(&scn, ArchitectureKind::OutEps, &input, 5).unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.estimates, b.estimates);
    assert_eq!(ra.mse_total, rb.mse_total);
    assert_eq!(ra.power_total, rb.power_total);
}

#[test]
fn noiseless_single_change_times_are_exact() {
    // One shared change of +3 at t = 20, zero backoff: both sensors trigger
    // at 20, fire at 20, single-component packets arrive at 21 (both — no
    // collision), and the fused estimate jumps once to the exact value.
    let scn = two_component_scenario(1.0, BackoffSpec::Zero);
    let path = EnvironmentPath::new(
        vec![0.0, 0.0],
        20.0,
        vec![ChangeRecord { interval: 1, full_index: 1, step: 3.0 }],
        5,
    );
    let input = RunInput::from_path(&path, scn.config.t_sim);
    let (trace, report) = run_simulation(&scn, ArchitectureKind::InEps, &input, 0).unwrap();

    let triggers = events_of(&trace, "trigger");
    assert_eq!(triggers.len(), 2);
    assert!(triggers.iter().all(|e| e.time == 20.0 && e.components == vec![1]));

    let sends = events_of(&trace, "uplink_send");
    assert_eq!(sends.len(), 2);
    assert!(sends.iter().all(|e| e.time == 20.0));

    let arrivals = events_of(&trace, "uplink_arrive");
    assert_eq!(arrivals.len(), 2, "simultaneous packets both arrive");
    assert!(arrivals.iter().all(|e| e.time == 21.0));

    assert_eq!(trace.estimates[0], vec![(0.0, 0.0), (21.0, 3.0)]);
    // MSE: error 9 over [20, 21), horizon 100.
    assert!((report.mse_total - 9.0 / 100.0).abs() < 1e-12);
    assert_eq!(report.uplink_components, 2);
    assert_eq!(report.cancellations, 0);
}

#[test]
fn mixed_packet_broadcasts_only_the_shared_part() {
    // Shared 1 and unshared 2 both change at t = 20; sensor 1's packet
    // carries both (m = 2, arrival at 22), the broadcast carries only the
    // shared component.
    let scn = two_component_scenario(1.0, BackoffSpec::Zero);
    let path = EnvironmentPath::new(
        vec![0.0, 0.0],
        20.0,
        vec![
            ChangeRecord { interval: 1, full_index: 1, step: 3.0 },
            ChangeRecord { interval: 1, full_index: 2, step: -2.5 },
        ],
        5,
    );
    let input = RunInput::from_path(&path, scn.config.t_sim);
    let (trace, _) = run_simulation(&scn, ArchitectureKind::OutEps, &input, 0).unwrap();

    let send1 = events_of(&trace, "uplink_send")
        .into_iter()
        .find(|e| e.actor == 1)
        .expect("sensor 1 sends");
    assert_eq!(send1.components, vec![1, 2]);
    let arrive = events_of(&trace, "uplink_arrive")
        .into_iter()
        .find(|e| e.components == vec![1, 2])
        .unwrap();
    assert_eq!(arrive.time, 22.0);

    for b in events_of(&trace, "bcast_send") {
        assert_eq!(b.components, vec![1], "broadcasts carry only shared components");
    }
}

#[test]
fn in_architectures_never_broadcast() {
    let scn = preset("fig_event").unwrap();
    for arch in [ArchitectureKind::In0, ArchitectureKind::InEps] {
        let streams = Streams::new(scn.config.seed, 2);
        let path = sample_path(&scn.config, &streams);
        let input = RunInput::from_path(&path, scn.config.t_sim);
        let (trace, report) = run_simulation(&scn, arch, &input, 2).unwrap();
        assert!(events_of(&trace, "bcast_send").is_empty());
        assert!(events_of(&trace, "bcast_arrive").is_empty());
        assert_eq!(report.downlink_components, 0);
    }
}

#[test]
fn thresholded_triggers_are_subsets_of_in0() {
    let mut scn = preset("fig_event").unwrap();
    scn.config.sigma = 0.8;
    for rep in 0..5 {
        let streams = Streams::new(scn.config.seed, rep);
        let path = sample_path(&scn.config, &streams);
        let input = RunInput::from_path(&path, scn.config.t_sim);
        let (t_eps, _) = run_simulation(&scn, ArchitectureKind::InEps, &input, rep).unwrap();
        let (t_in0, _) = run_simulation(&scn, ArchitectureKind::In0, &input, rep).unwrap();
        for ev in t_eps.events.iter().filter(|e| e.kind == "trigger") {
            let full = t_in0
                .events
                .iter()
                .find(|e| e.kind == "trigger" && e.actor == ev.actor && e.time == ev.time)
                .expect("IN0 triggers whenever IN(eps) does");
            assert!(ev.components.iter().all(|k| full.components.contains(k)));
        }
    }
}

#[test]
fn noiseless_uplink_ordering_holds_at_every_event_time() {
    // sigma = 0: cumulative uplink components OUT <= IN(eps) <= IN0 pathwise.
    let scn = preset("fig_event").unwrap();
    for rep in 0..20 {
        let streams = Streams::new(scn.config.seed, rep);
        let path = sample_path(&scn.config, &streams);
        let input = RunInput::from_path(&path, scn.config.t_sim);
        let (t_out, _) = run_simulation(&scn, ArchitectureKind::OutEps, &input, rep).unwrap();
        let (t_eps, _) = run_simulation(&scn, ArchitectureKind::InEps, &input, rep).unwrap();
        let (t_in0, _) = run_simulation(&scn, ArchitectureKind::In0, &input, rep).unwrap();
        let (c_out, c_eps, c_in0) = (
            cumulative_uplink(&t_out),
            cumulative_uplink(&t_eps),
            cumulative_uplink(&t_in0),
        );
        assert!(never_exceeds(&c_out, &c_eps), "rep {rep}: OUT > IN(eps)");
        assert!(never_exceeds(&c_eps, &c_in0), "rep {rep}: IN(eps) > IN0");
    }
}

#[test]
fn broadcasts_cancel_pending_transmissions_in_the_event_regime() {
    // fig_event regime: broadcasts beat long backoffs and cancel the peer's
    // pending shared components; every cancel follows a broadcast send of
    // the same component.
    let scn = preset("fig_event").unwrap();
    let mut total_cancels = 0;
    for rep in 0..20 {
        let streams = Streams::new(scn.config.seed, rep);
        let path = sample_path(&scn.config, &streams);
        let input = RunInput::from_path(&path, scn.config.t_sim);
        let (trace, report) = run_simulation(&scn, ArchitectureKind::OutEps, &input, rep).unwrap();
        total_cancels += report.cancellations;
        for cancel in events_of(&trace, "cancel") {
            let k = cancel.components[0];
            assert!(
                events_of(&trace, "bcast_send")
                    .iter()
                    .any(|b| b.time < cancel.time && b.components.contains(&k)),
                "cancel of {k} at {} has a prior broadcast",
                cancel.time
            );
        }
    }
    assert!(total_cancels > 0, "regime should produce cancellations");
}

#[test]
fn empty_shared_set_makes_out_and_in_identical() {
    let mut scn = preset("fig_event").unwrap();
    scn.map = ComponentMap {
        shared: [].into(),
        unshared_1: [1, 2].into(),
        unshared_2: [3].into(),
        full_index: [(1, 1), (2, 2), (3, 3)].into(),
    };
    scn.config.n = 3;
    scn.validate().unwrap();
    for rep in 0..10 {
        let streams = Streams::new(scn.config.seed, rep);
        let path = sample_path(&scn.config, &streams);
        let input = RunInput::from_path(&path, scn.config.t_sim);
        let (t_in, _) = run_simulation(&scn, ArchitectureKind::InEps, &input, rep).unwrap();
        let (t_out, _) = run_simulation(&scn, ArchitectureKind::OutEps, &input, rep).unwrap();
        assert_eq!(t_in.events, t_out.events);
        assert_eq!(t_in.estimates, t_out.estimates);
    }
}

#[test]
fn estimate_breakpoints_only_at_uplink_arrivals() {
    let scn = preset("fig_event").unwrap();
    let streams = Streams::new(scn.config.seed, 7);
    let path = sample_path(&scn.config, &streams);
    let input = RunInput::from_path(&path, scn.config.t_sim);
    let (trace, _) = run_simulation(&scn, ArchitectureKind::OutEps, &input, 7).unwrap();
    let arrival_times: Vec<f64> =
        events_of(&trace, "uplink_arrive").iter().map(|e| e.time).collect();
    for traj in &trace.estimates {
        for (t, _) in traj.iter().skip(1) {
            assert!(arrival_times.contains(t), "breakpoint at {t} is not an arrival");
        }
    }
}

#[test]
fn replaying_the_log_reproduces_the_estimates() {
    let scn = preset("fig_event").unwrap();
    let streams = Streams::new(scn.config.seed, 3);
    let path = sample_path(&scn.config, &streams);
    let input = RunInput::from_path(&path, scn.config.t_sim);
    let (trace, _) = run_simulation(&scn, ArchitectureKind::OutEps, &input, 3).unwrap();

    // Rebuild estimates from uplink arrivals alone: the arrival row names
    // the sender and the packet timestamp, the sender's sample rows at that
    // timestamp supply the values.
    let mut replay = EstimateState::new(&path.state_at(0.0));
    for ev in trace.events.iter().filter(|e| e.kind == "uplink_arrive") {
        let created = ev.value.unwrap();
        for k in &ev.components {
            let sample = trace
                .events
                .iter()
                .find(|s| {
                    s.kind == "sample"
                        && s.actor == ev.actor
                        && s.time == created
                        && s.components == vec![*k]
                })
                .unwrap();
            replay.fuse(scn.map.index_of(*k), ev.actor, sample.value.unwrap(), created, ev.time);
        }
    }
    assert_eq!(replay.trajectories(), &trace.estimates[..]);
}

#[test]
fn report_counts_match_the_event_log() {
    let scn = preset("fig_event").unwrap();
    let streams = Streams::new(scn.config.seed, 11);
    let path = sample_path(&scn.config, &streams);
    let input = RunInput::from_path(&path, scn.config.t_sim);
    let (trace, report) = run_simulation(&scn, ArchitectureKind::OutEps, &input, 11).unwrap();
    let sent: u64 = events_of(&trace, "uplink_send").iter().map(|e| e.components.len() as u64).sum();
    let bcast: u64 = events_of(&trace, "bcast_send").iter().map(|e| e.components.len() as u64).sum();
    let cancels = events_of(&trace, "cancel").len() as u64;
    assert_eq!(report.uplink_components, sent);
    assert_eq!(trace.ledger.downlink_components(BroadcastAccounting::Always), bcast);
    assert_eq!(report.cancellations, cancels);
    assert_eq!(
        report.downlink_components,
        trace.ledger.downlink_components(BroadcastAccounting::Conditional)
    );
    let per_index_sum: f64 = report.per_index_mse.iter().sum();
    assert!((report.mse_total - per_index_sum / trace.sim_end).abs() < 1e-12);
}

#[test]
fn silent_run_accrues_drift_error_and_no_power() {
    // A change that never clears the threshold: no communications, so the
    // MSE is the pure drift integral and R = 0.
    let mut scn = two_component_scenario(100.0, BackoffSpec::Zero);
    scn.config.t_sim = 100.0;
    let path = EnvironmentPath::new(
        vec![0.0, 0.0],
        20.0,
        vec![ChangeRecord { interval: 1, full_index: 1, step: 3.0 }],
        5,
    );
    let input = RunInput::from_path(&path, scn.config.t_sim);
    let (trace, report) = run_simulation(&scn, ArchitectureKind::InEps, &input, 0).unwrap();
    assert!(events_of(&trace, "uplink_send").is_empty());
    assert_eq!(report.power_total, 0.0);
    // Error 9 over [20, 100).
    assert!((report.mse_total - 9.0 * 80.0 / 100.0).abs() < 1e-12);
}

#[test]
fn event_cap_triggers_overflow_error() {
    let scn = preset("fig_event").unwrap();
    let streams = Streams::new(scn.config.seed, 0);
    let path = sample_path(&scn.config, &streams);
    let mut input = RunInput::from_path(&path, scn.config.t_sim);
    input.event_cap = 3;
    let err = run_simulation(&scn, ArchitectureKind::In0, &input, 0).unwrap_err();
    assert!(err.to_string().contains("event queue overflow"));
}
