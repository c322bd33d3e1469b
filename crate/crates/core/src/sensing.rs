//! Per-sensor machinery: observation, the verification rule, backoff
//! scheduling with per-component replacement, and broadcast-driven
//! cancellation.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::environment::EnvironmentPath;
use crate::model::{ArchitectureKind, ComponentId, ComponentMap, ScenarioConfig};
use crate::rng::{Purpose, Streams};

/// One noisy sample of one component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub sensor: u8,
    pub component: ComponentId,
    pub time: f64,
    pub value: f64,
}

#[derive(Debug, Error)]
#[error("component {component} not observed by sensor {sensor}")]
pub struct NotObserved {
    pub sensor: u8,
    pub component: ComponentId,
}

/// y_jk(t) = x_{i_k}(t) + sigma * z with z from the keyed stream at
/// (sensor, component, tick). Both architectures see the same value.
pub fn observe(
    path: &EnvironmentPath,
    map: &ComponentMap,
    cfg: &ScenarioConfig,
    streams: &Streams,
    sensor: u8,
    component: ComponentId,
    tick: u64,
) -> Result<Observation, NotObserved> {
    if !map.observes(sensor, component) {
        return Err(NotObserved { sensor, component });
    }
    let time = tick as f64 * cfg.grid().tau;
    let z = streams.normal(Purpose::Noise, sensor as u64, component as u64, tick);
    let value = path.value_at(map.index_of(component), time) + cfg.sigma * z;
    Ok(Observation { sensor, component, time, value })
}

/// Entry of a scheduled uplink packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketEntry {
    pub component: ComponentId,
    pub value: f64,
    pub sample_time: f64,
}

/// A transmission scheduled at a verification instant, fired after the
/// backoff unless its components are replaced or cancelled first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledTransmission {
    pub created: f64,
    pub fire_time: f64,
    pub entries: Vec<PacketEntry>,
}

/// Mutable per-sensor state: references, pending transmissions, and the
/// latest observation of each component.
#[derive(Debug, Clone)]
pub struct SensorState {
    pub sensor: u8,
    refs: BTreeMap<ComponentId, f64>,
    pending: BTreeMap<u64, ScheduledTransmission>,
    latest: BTreeMap<ComponentId, Observation>,
    next_packet_id: u64,
}

impl SensorState {
    /// References start at the initial estimate value of each component.
    pub fn new(sensor: u8, initial_refs: BTreeMap<ComponentId, f64>) -> Self {
        SensorState {
            sensor,
            refs: initial_refs,
            pending: BTreeMap::new(),
            latest: BTreeMap::new(),
            next_packet_id: 0,
        }
    }

    pub fn reference(&self, k: ComponentId) -> f64 {
        self.refs[&k]
    }

    pub fn record_sample(&mut self, obs: Observation) {
        self.latest.insert(obs.component, obs);
    }

    pub fn pending(&self) -> impl Iterator<Item = (&u64, &ScheduledTransmission)> {
        self.pending.iter()
    }

    pub fn has_pending(&self, k: ComponentId) -> bool {
        self.pending
            .values()
            .any(|p| p.entries.iter().any(|e| e.component == k))
    }
}

/// The verification rule: which observed components warrant transmission.
/// `In0` triggers everything it observes; the thresholded architectures
/// trigger on |y - ref| >= epsilon.
pub fn verify(
    state: &SensorState,
    obs: &[Observation],
    arch: ArchitectureKind,
    epsilon: f64,
) -> Vec<ComponentId> {
    obs.iter()
        .filter(|o| match arch {
            ArchitectureKind::In0 => true,
            ArchitectureKind::InEps | ArchitectureKind::OutEps => {
                (o.value - state.reference(o.component)).abs() >= epsilon
            }
        })
        .map(|o| o.component)
        .collect()
}

/// Outcome of scheduling one verification instant's triggers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleOutcome {
    pub packet_id: u64,
    /// Components pulled out of older pending packets by this schedule.
    pub replaced: usize,
}

/// Creates one packet carrying every triggered component, due at `t +
/// backoff`. A still-pending schedule for any of the same components loses
/// them to the new packet, so each (sensor, component) has at most one
/// pending transmission.
pub fn schedule_backoff(
    state: &mut SensorState,
    triggers: &[Observation],
    t: f64,
    backoff: f64,
) -> ScheduleOutcome {
    debug_assert!(!triggers.is_empty());
    let mut replaced = 0;
    for obs in triggers {
        let mut emptied = Vec::new();
        for (id, packet) in state.pending.iter_mut() {
            let before = packet.entries.len();
            packet.entries.retain(|e| e.component != obs.component);
            replaced += before - packet.entries.len();
            if packet.entries.is_empty() {
                emptied.push(*id);
            }
        }
        for id in emptied {
            state.pending.remove(&id);
        }
    }
    let packet_id = state.next_packet_id;
    state.next_packet_id += 1;
    state.pending.insert(
        packet_id,
        ScheduledTransmission {
            created: t,
            fire_time: t + backoff,
            entries: triggers
                .iter()
                .map(|o| PacketEntry {
                    component: o.component,
                    value: o.value,
                    sample_time: o.time,
                })
                .collect(),
        },
    );
    ScheduleOutcome { packet_id, replaced }
}

/// Applies one broadcast component to the sensor. The reference always
/// becomes the broadcast value; a pending entry for the component whose own
/// observation lies strictly within epsilon of the broadcast value is
/// cancelled. A broadcast arriving exactly at the fire time cancels (the
/// engine delivers arrivals before fires).
pub fn apply_broadcast(
    state: &mut SensorState,
    component: ComponentId,
    value: f64,
    epsilon: f64,
    arch: ArchitectureKind,
) -> bool {
    debug_assert!(arch.has_downlink());
    let mut cancelled = false;
    let mut emptied = Vec::new();
    for (id, packet) in state.pending.iter_mut() {
        if let Some(pos) = packet.entries.iter().position(|e| e.component == component) {
            if (packet.entries[pos].value - value).abs() < epsilon {
                packet.entries.remove(pos);
                cancelled = true;
                if packet.entries.is_empty() {
                    emptied.push(*id);
                }
            }
        }
    }
    for id in emptied {
        state.pending.remove(&id);
    }
    state.refs.insert(component, value);
    cancelled
}

/// Removes and returns the packet if it still exists; the caller transmits
/// whatever components remain. References move to the transmitted values.
/// A fully cancelled packet has already vanished: nothing fires, nothing is
/// charged.
pub fn fire_transmission(
    state: &mut SensorState,
    packet_id: u64,
) -> Option<ScheduledTransmission> {
    let packet = state.pending.remove(&packet_id)?;
    for e in &packet.entries {
        state.refs.insert(e.component, e.value);
    }
    Some(packet)
}
