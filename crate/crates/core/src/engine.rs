//! Deterministic discrete-event loop: drives sampling and verification,
//! delivers uplink packets and downlink broadcasts with per-component
//! delays, and keeps the power ledger.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeMap};

use thiserror::Error;

use crate::environment::{ConditionedScenario, EnvironmentPath};
use crate::fusion::{self, EstimateState, MetricsReport};
use crate::model::{
    ArchitectureKind, BroadcastAccounting, ComponentId, Scenario, SENSOR_1, SENSOR_2,
};
use crate::rng::{DrawChecksum, Streams};
use crate::sensing::{self, Observation, PacketEntry, SensorState};

pub const CLASS_ENV_CHANGE: u8 = 1;
pub const CLASS_TICK: u8 = 2;
pub const CLASS_BCAST_ARRIVE: u8 = 3;
pub const CLASS_BACKOFF_FIRE: u8 = 4;
pub const CLASS_UPLINK_ARRIVE: u8 = 5;

pub const ACTOR_ENV: u8 = 0;
pub const ACTOR_CENTRAL: u8 = 3;

pub const DEFAULT_EVENT_CAP: usize = 10_000_000;

/// Queue entry. Processing order is the strict lexicographic order on
/// (time, class, actor, sequence); the sequence number is assigned at
/// creation, so no two events ever compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub class: u8,
    pub actor: u8,
    pub seq: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    EnvChange { interval: u64 },
    Tick { sensor: u8, tick: u64 },
    BroadcastArrive { to: u8, items: Vec<PacketEntry> },
    BackoffFire { sensor: u8, packet_id: u64 },
    UplinkArrive { sensor: u8, items: Vec<PacketEntry> },
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.class.cmp(&other.class))
            .then(self.actor.cmp(&other.actor))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One row of the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub class: u8,
    pub actor: u8,
    pub kind: &'static str,
    pub components: Vec<ComponentId>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ChargeKind {
    Uplink,
    DownlinkAlways,
    DownlinkConditional,
}

/// Energy ledger. Uplink components are charged at send time. Downlink
/// components are charged twice in parallel — per broadcast at send time
/// ("always" accounting) and per causally cancelled component at arrival
/// time ("conditional" accounting) — so one run prices both modes.
#[derive(Debug, Clone, Default)]
pub struct PowerLedger {
    entries: Vec<(f64, ChargeKind, u64)>,
    p_up: f64,
    p_down: f64,
}

impl PowerLedger {
    fn new(p_up: f64, p_down: f64) -> Self {
        PowerLedger { entries: Vec::new(), p_up, p_down }
    }

    fn charge(&mut self, time: f64, kind: ChargeKind, components: u64) {
        if components > 0 {
            self.entries.push((time, kind, components));
        }
    }

    /// Accumulated R over `[t0, t1)` under the given accounting mode.
    pub fn r_window(&self, t0: f64, t1: f64, mode: BroadcastAccounting) -> f64 {
        let mut r = 0.0;
        for (t, kind, m) in &self.entries {
            if *t < t0 || *t >= t1 {
                continue;
            }
            r += match kind {
                ChargeKind::Uplink => self.p_up * *m as f64,
                ChargeKind::DownlinkAlways if mode == BroadcastAccounting::Always => {
                    self.p_down * *m as f64
                }
                ChargeKind::DownlinkConditional if mode == BroadcastAccounting::Conditional => {
                    self.p_down * *m as f64
                }
                _ => 0.0,
            };
        }
        r
    }

    pub fn r_total(&self, mode: BroadcastAccounting) -> f64 {
        self.r_window(f64::NEG_INFINITY, f64::INFINITY, mode)
    }

    pub fn uplink_components(&self) -> u64 {
        self.count(ChargeKind::Uplink)
    }

    pub fn downlink_components(&self, mode: BroadcastAccounting) -> u64 {
        match mode {
            BroadcastAccounting::Always => self.count(ChargeKind::DownlinkAlways),
            BroadcastAccounting::Conditional => self.count(ChargeKind::DownlinkConditional),
        }
    }

    fn count(&self, kind: ChargeKind) -> u64 {
        self.entries.iter().filter(|(_, k, _)| *k == kind).map(|(_, _, m)| m).sum()
    }
}

/// Complete record of one run: the event log, the ledger, the estimate
/// trajectories and the cancellation count. Everything downstream (metrics,
/// theorem statistics, plots) is computed from this.
#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub arch: ArchitectureKind,
    pub rep: u64,
    pub events: Vec<TraceEvent>,
    pub ledger: PowerLedger,
    /// Per full-state index: breakpoints (time, estimate), starting at 0.
    pub estimates: Vec<Vec<(f64, f64)>>,
    pub cancellations: u64,
    pub draw_checksum: DrawChecksum,
    pub sim_end: f64,
}

/// What to simulate: a sample path (generic run over `[0, t_sim)`) or a
/// conditioned scenario with its own horizon, pinned backoffs, noise salt
/// and initial estimate.
#[derive(Debug, Clone, Copy)]
pub struct RunInput<'a> {
    pub path: &'a EnvironmentPath,
    pub sim_end: f64,
    pub backoff_overrides: Option<&'a BTreeMap<(u8, u64), f64>>,
    pub initial_estimate: Option<&'a [f64]>,
    pub noise_salt: u64,
    pub event_cap: usize,
}

impl<'a> RunInput<'a> {
    pub fn from_path(path: &'a EnvironmentPath, t_sim: f64) -> Self {
        RunInput {
            path,
            sim_end: t_sim,
            backoff_overrides: None,
            initial_estimate: None,
            noise_salt: 0,
            event_cap: DEFAULT_EVENT_CAP,
        }
    }

    pub fn conditioned(scenario: &'a ConditionedScenario) -> Self {
        RunInput {
            path: &scenario.path,
            sim_end: scenario.sim_end,
            backoff_overrides: Some(&scenario.backoff_overrides),
            initial_estimate: scenario.initial_estimate.as_deref(),
            noise_salt: scenario.noise_salt,
            event_cap: DEFAULT_EVENT_CAP,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("event queue overflow (processed more than {cap} events)")]
    QueueOverflow { cap: usize },
}

struct Engine<'a> {
    scn: &'a Scenario,
    arch: ArchitectureKind,
    input: &'a RunInput<'a>,
    streams: Streams,
    queue: BinaryHeap<std::cmp::Reverse<Event>>,
    seq: u64,
    clock: f64,
    sensors: BTreeMap<u8, SensorState>,
    estimate: EstimateState,
    ledger: PowerLedger,
    trace: Vec<TraceEvent>,
    cancellations: u64,
    checksum: DrawChecksum,
    processed: usize,
}

/// Runs one architecture over one input. Deterministic function of
/// (scenario, architecture, replication, input); the returned trace replays
/// to the same bytes every time.
pub fn run_simulation(
    scn: &Scenario,
    arch: ArchitectureKind,
    input: &RunInput,
    rep: u64,
) -> Result<(SimulationTrace, MetricsReport), EngineError> {
    let cfg = &scn.config;
    let init_est: Vec<f64> = match input.initial_estimate {
        Some(e) => e.to_vec(),
        None => input.path.state_at(0.0),
    };
    let mut sensors = BTreeMap::new();
    for sensor in [SENSOR_1, SENSOR_2] {
        let refs = scn
            .map
            .observed_by(sensor)
            .into_iter()
            .map(|k| (k, init_est[scn.map.index_of(k) - 1]))
            .collect();
        sensors.insert(sensor, SensorState::new(sensor, refs));
    }

    let mut engine = Engine {
        scn,
        arch,
        input,
        streams: Streams::with_salt(cfg.seed, rep, input.noise_salt),
        queue: BinaryHeap::new(),
        seq: 0,
        clock: 0.0,
        sensors,
        estimate: EstimateState::new(&init_est),
        ledger: PowerLedger::new(cfg.p_up, cfg.p_down),
        trace: Vec::new(),
        cancellations: 0,
        checksum: input.path.draw_checksum(),
        processed: 0,
    };

    engine.schedule_initial_events();
    engine.run()?;

    let trace = SimulationTrace {
        arch,
        rep,
        events: engine.trace,
        ledger: engine.ledger,
        estimates: engine.estimate.into_trajectories(),
        cancellations: engine.cancellations,
        draw_checksum: engine.checksum,
        sim_end: input.sim_end,
    };
    let report = fusion::summarize(&trace, input.path, scn);
    Ok((trace, report))
}

impl<'a> Engine<'a> {
    fn push(&mut self, time: f64, class: u8, actor: u8, kind: EventKind) {
        if time >= self.input.sim_end {
            return;
        }
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(std::cmp::Reverse(Event { time, class, actor, seq, kind }));
    }

    fn schedule_initial_events(&mut self) {
        let grid = self.scn.config.grid();
        let mut intervals: Vec<u64> =
            self.input.path.changes().iter().map(|r| r.interval).collect();
        intervals.dedup();
        for c in intervals {
            let t = c as f64 * self.input.path.delta_t();
            self.push(t, CLASS_ENV_CHANGE, ACTOR_ENV, EventKind::EnvChange { interval: c });
        }
        for sensor in [SENSOR_1, SENSOR_2] {
            let mut tick = 0u64;
            loop {
                let t = tick as f64 * grid.tau;
                if t >= self.input.sim_end {
                    break;
                }
                self.push(t, CLASS_TICK, sensor, EventKind::Tick { sensor, tick });
                tick += 1;
            }
        }
    }

    fn run(&mut self) -> Result<(), EngineError> {
        while let Some(std::cmp::Reverse(event)) = self.queue.pop() {
            self.processed += 1;
            if self.processed > self.input.event_cap {
                return Err(EngineError::QueueOverflow { cap: self.input.event_cap });
            }
            debug_assert!(event.time >= self.clock, "clock must not run backwards");
            self.clock = event.time;
            match event.kind {
                EventKind::EnvChange { .. } => {
                    // Observations read the path directly; the event exists
                    // so boundary ordering (change before same-time samples)
                    // is explicit in the log.
                }
                EventKind::Tick { sensor, tick } => self.on_tick(sensor, tick),
                EventKind::BackoffFire { sensor, packet_id } => {
                    self.on_fire(event.time, sensor, packet_id)
                }
                EventKind::UplinkArrive { sensor, items } => {
                    self.on_uplink_arrive(event.time, sensor, items)
                }
                EventKind::BroadcastArrive { to, items } => {
                    self.on_broadcast_arrive(event.time, to, items)
                }
            }
        }
        Ok(())
    }

    fn on_tick(&mut self, sensor: u8, tick: u64) {
        let cfg = &self.scn.config;
        let grid = cfg.grid();
        let t = tick as f64 * grid.tau;
        let observed = self.scn.map.observed_by(sensor);
        if observed.is_empty() {
            return;
        }

        let mut samples = Vec::with_capacity(observed.len());
        for k in observed {
            let obs = sensing::observe(
                self.input.path,
                &self.scn.map,
                cfg,
                &self.streams,
                sensor,
                k,
                tick,
            )
            .expect("observed_by only yields observable components");
            self.checksum.absorb(obs.value);
            self.trace.push(TraceEvent {
                time: t,
                class: CLASS_TICK,
                actor: sensor,
                kind: "sample",
                components: vec![k],
                value: Some(obs.value),
            });
            self.sensors.get_mut(&sensor).unwrap().record_sample(obs);
            samples.push(obs);
        }

        let period = grid.verify_period(sensor);
        if !tick.is_multiple_of(period) {
            return;
        }
        let verify_index = tick / period;

        // One backoff draw per verification instant, consumed regardless of
        // triggering so paired architectures stay on identical primitives.
        let backoff = match self
            .input
            .backoff_overrides
            .and_then(|o| o.get(&(sensor, verify_index)))
        {
            Some(b) => *b,
            None => cfg.backoff.sample(&self.streams, sensor, verify_index),
        };
        self.checksum.absorb(backoff);

        let state = self.sensors.get_mut(&sensor).unwrap();
        let triggered = sensing::verify(state, &samples, self.arch, cfg.epsilon);
        if triggered.is_empty() {
            return;
        }
        let trigger_obs: Vec<Observation> = samples
            .iter()
            .filter(|o| triggered.contains(&o.component))
            .copied()
            .collect();
        self.trace.push(TraceEvent {
            time: t,
            class: CLASS_TICK,
            actor: sensor,
            kind: "trigger",
            components: triggered.clone(),
            value: None,
        });
        let outcome = sensing::schedule_backoff(state, &trigger_obs, t, backoff);
        self.trace.push(TraceEvent {
            time: t,
            class: CLASS_TICK,
            actor: sensor,
            kind: "schedule",
            components: triggered,
            value: Some(t + backoff),
        });
        self.push(
            t + backoff,
            CLASS_BACKOFF_FIRE,
            sensor,
            EventKind::BackoffFire { sensor, packet_id: outcome.packet_id },
        );
    }

    fn on_fire(&mut self, t: f64, sensor: u8, packet_id: u64) {
        let state = self.sensors.get_mut(&sensor).unwrap();
        let Some(packet) = sensing::fire_transmission(state, packet_id) else {
            return; // fully cancelled or replaced
        };
        let m = packet.entries.len() as u64;
        self.trace.push(TraceEvent {
            time: t,
            class: CLASS_BACKOFF_FIRE,
            actor: sensor,
            kind: "uplink_send",
            components: packet.entries.iter().map(|e| e.component).collect(),
            value: Some(packet.created),
        });
        self.ledger.charge(t, ChargeKind::Uplink, m);
        // Uplink delay proportional to the number of transmitted components.
        let arrive = t + m as f64 * self.scn.config.dt_up;
        self.push(
            arrive,
            CLASS_UPLINK_ARRIVE,
            sensor,
            EventKind::UplinkArrive { sensor, items: packet.entries },
        );
    }

    fn on_uplink_arrive(&mut self, t: f64, sensor: u8, items: Vec<PacketEntry>) {
        self.trace.push(TraceEvent {
            time: t,
            class: CLASS_UPLINK_ARRIVE,
            actor: sensor,
            kind: "uplink_arrive",
            components: items.iter().map(|e| e.component).collect(),
            value: items.first().map(|e| e.sample_time),
        });
        for e in &items {
            self.estimate.fuse(
                self.scn.map.index_of(e.component),
                sensor,
                e.value,
                e.sample_time,
                t,
            );
        }
        if !self.arch.has_downlink() {
            return;
        }
        // Broadcast the shared part back to the non-originating sensor.
        let shared: Vec<PacketEntry> = items
            .into_iter()
            .filter(|e| self.scn.map.is_shared(e.component))
            .collect();
        if shared.is_empty() {
            return;
        }
        let m_s = shared.len() as u64;
        self.trace.push(TraceEvent {
            time: t,
            class: CLASS_UPLINK_ARRIVE,
            actor: ACTOR_CENTRAL,
            kind: "bcast_send",
            components: shared.iter().map(|e| e.component).collect(),
            value: None,
        });
        self.ledger.charge(t, ChargeKind::DownlinkAlways, m_s);
        let to = if sensor == SENSOR_1 { SENSOR_2 } else { SENSOR_1 };
        self.push(
            t + m_s as f64 * self.scn.config.dt_down,
            CLASS_BCAST_ARRIVE,
            to,
            EventKind::BroadcastArrive { to, items: shared },
        );
    }

    fn on_broadcast_arrive(&mut self, t: f64, to: u8, items: Vec<PacketEntry>) {
        self.trace.push(TraceEvent {
            time: t,
            class: CLASS_BCAST_ARRIVE,
            actor: to,
            kind: "bcast_arrive",
            components: items.iter().map(|e| e.component).collect(),
            value: None,
        });
        let epsilon = self.scn.config.epsilon;
        let state = self.sensors.get_mut(&to).unwrap();
        for e in &items {
            let cancelled =
                sensing::apply_broadcast(state, e.component, e.value, epsilon, self.arch);
            if cancelled {
                self.cancellations += 1;
                self.trace.push(TraceEvent {
                    time: t,
                    class: CLASS_BCAST_ARRIVE,
                    actor: to,
                    kind: "cancel",
                    components: vec![e.component],
                    value: Some(e.value),
                });
                self.ledger.charge(t, ChargeKind::DownlinkConditional, 1);
            }
        }
    }
}

/// Arrival time of an `m`-component uplink packet sent at `t`.
pub fn uplink_arrival_time(t: f64, m: u64, dt_up: f64) -> f64 {
    t + m as f64 * dt_up
}
