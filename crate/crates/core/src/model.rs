//! Scenario configuration, component bookkeeping, architecture identifiers
//! and the backoff distribution shared by the rest of the crate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{Purpose, Streams};

/// Small integer id of an observed component (1-based).
pub type ComponentId = u32;
/// 1-based index into the full environment state vector.
pub type FullIndex = usize;

pub const SENSOR_1: u8 = 1;
pub const SENSOR_2: u8 = 2;

/// The three communication architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    /// Transmit every observed component at every verification instant.
    In0,
    /// Transmit a component when |observation - reference| >= epsilon.
    InEps,
    /// `InEps` plus central broadcasts of shared components; broadcasts may
    /// cancel the peer's pending transmissions. The only kind with a downlink.
    OutEps,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 3] =
        [ArchitectureKind::In0, ArchitectureKind::InEps, ArchitectureKind::OutEps];

    pub fn has_downlink(self) -> bool {
        matches!(self, ArchitectureKind::OutEps)
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArchitectureKind::In0 => "in0",
            ArchitectureKind::InEps => "in_eps",
            ArchitectureKind::OutEps => "out_eps",
        };
        f.write_str(s)
    }
}

impl FromStr for ArchitectureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "in0" => Ok(ArchitectureKind::In0),
            "in_eps" => Ok(ArchitectureKind::InEps),
            "out_eps" => Ok(ArchitectureKind::OutEps),
            other => Err(format!("unknown architecture {other:?} (expected in0|in_eps|out_eps)")),
        }
    }
}

/// One support point of an empirical backoff table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalPoint {
    pub value: f64,
    pub prob: f64,
}

/// Distribution of the random backoff delay between a trigger and the
/// corresponding uplink transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackoffSpec {
    /// Degenerate at zero: transmissions fire at the verification instant.
    Zero,
    /// Uniform on [0, b].
    Uniform { b: f64 },
    /// Discrete table; `points` must be strictly increasing in `value` with
    /// probabilities summing to one.
    Empirical { points: Vec<EmpiricalPoint> },
}

impl BackoffSpec {
    /// F_B(s) = P(B <= s). Zero for s < 0, nondecreasing, reaching 1.
    pub fn cdf(&self, s: f64) -> f64 {
        match self {
            BackoffSpec::Zero => {
                if s >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            BackoffSpec::Uniform { b } => (s / b).clamp(0.0, 1.0),
            BackoffSpec::Empirical { points } => {
                points.iter().filter(|p| p.value <= s).map(|p| p.prob).sum()
            }
        }
    }

    /// Largest value the distribution can produce.
    pub fn max_support(&self) -> f64 {
        match self {
            BackoffSpec::Zero => 0.0,
            BackoffSpec::Uniform { b } => *b,
            BackoffSpec::Empirical { points } => points.last().map_or(0.0, |p| p.value),
        }
    }

    /// Inverse-CDF sample from the keyed stream.
    pub fn sample(&self, streams: &Streams, sensor: u8, verify_index: u64) -> f64 {
        let u = streams.uniform(Purpose::Backoff, sensor as u64, verify_index, 0);
        self.quantile(u)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            BackoffSpec::Zero => 0.0,
            BackoffSpec::Uniform { b } => u * b,
            BackoffSpec::Empirical { points } => {
                let mut acc = 0.0;
                for p in points {
                    acc += p.prob;
                    if u < acc {
                        return p.value;
                    }
                }
                points.last().map_or(0.0, |p| p.value)
            }
        }
    }

    fn collect_violations(&self, out: &mut Vec<String>) {
        match self {
            BackoffSpec::Zero => {}
            BackoffSpec::Uniform { b } => {
                if !(*b > 0.0) {
                    out.push("backoff b must be positive".into());
                }
            }
            BackoffSpec::Empirical { points } => {
                if points.is_empty() {
                    out.push("backoff table must be nonempty".into());
                    return;
                }
                let mut prev = f64::NEG_INFINITY;
                let mut total = 0.0;
                for p in points {
                    if !(p.value >= 0.0) || p.value <= prev {
                        out.push(
                            "backoff table values must be nonnegative and strictly increasing"
                                .into(),
                        );
                        break;
                    }
                    prev = p.value;
                }
                for p in points {
                    if !(p.prob > 0.0) {
                        out.push("backoff table probabilities must be positive".into());
                        break;
                    }
                    total += p.prob;
                }
                if (total - 1.0).abs() > 1e-9 {
                    out.push("backoff table probabilities must sum to 1".into());
                }
            }
        }
    }
}

/// How downlink energy is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BroadcastAccounting {
    /// P_D per shared component of every broadcast.
    Always,
    /// P_D only for broadcast components that causally cancel a pending
    /// transmission.
    Conditional,
}

/// Partition of the observed components between the two sensors, plus the
/// embedding of each component into the full state vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentMap {
    pub shared: BTreeSet<ComponentId>,
    pub unshared_1: BTreeSet<ComponentId>,
    pub unshared_2: BTreeSet<ComponentId>,
    pub full_index: BTreeMap<ComponentId, FullIndex>,
}

impl ComponentMap {
    /// Components observed by sensor `j`: shared plus its own unshared set.
    pub fn observed_by(&self, sensor: u8) -> BTreeSet<ComponentId> {
        let own = match sensor {
            SENSOR_1 => &self.unshared_1,
            SENSOR_2 => &self.unshared_2,
            _ => panic!("sensor must be 1 or 2"),
        };
        self.shared.union(own).copied().collect()
    }

    pub fn observes(&self, sensor: u8, k: ComponentId) -> bool {
        self.shared.contains(&k)
            || match sensor {
                SENSOR_1 => self.unshared_1.contains(&k),
                SENSOR_2 => self.unshared_2.contains(&k),
                _ => false,
            }
    }

    pub fn is_shared(&self, k: ComponentId) -> bool {
        self.shared.contains(&k)
    }

    pub fn is_unshared(&self, k: ComponentId) -> bool {
        self.unshared_1.contains(&k) || self.unshared_2.contains(&k)
    }

    pub fn index_of(&self, k: ComponentId) -> FullIndex {
        self.full_index[&k]
    }

    pub fn all_components(&self) -> BTreeSet<ComponentId> {
        let mut all = self.shared.clone();
        all.extend(&self.unshared_1);
        all.extend(&self.unshared_2);
        all
    }

    /// Full-state indices backing unshared components of either sensor.
    pub fn unshared_indices(&self) -> BTreeSet<FullIndex> {
        self.unshared_1
            .iter()
            .chain(self.unshared_2.iter())
            .map(|k| self.full_index[k])
            .collect()
    }

    fn collect_violations(&self, n: usize, out: &mut Vec<String>) {
        if !self.shared.is_disjoint(&self.unshared_1) {
            out.push("shared and unshared_1 must be disjoint".into());
        }
        if !self.shared.is_disjoint(&self.unshared_2) {
            out.push("shared and unshared_2 must be disjoint".into());
        }
        if !self.unshared_1.is_disjoint(&self.unshared_2) {
            out.push("unshared_1 and unshared_2 must be disjoint".into());
        }
        let mut seen = BTreeSet::new();
        for k in self.all_components() {
            match self.full_index.get(&k) {
                None => out.push(format!("full_index missing for component {k}")),
                Some(&i) => {
                    if i < 1 || i > n {
                        out.push(format!(
                            "full_index for component {k} out of range [1, {n}]"
                        ));
                    }
                    if !seen.insert(i) {
                        out.push(format!("full_index must be injective (index {i} repeated)"));
                    }
                }
            }
        }
        for k in self.full_index.keys() {
            if !self.observes(SENSOR_1, *k) && !self.observes(SENSOR_2, *k) {
                out.push(format!("full_index names unknown component {k}"));
            }
        }
    }
}

/// Every scenario parameter: environment, sensing, communication rates,
/// backoff, horizon, plus simulator decisions (accounting mode, root seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Dimension of the environment state vector.
    pub n: usize,
    /// Environment interval length: the state may step every `delta_t`.
    pub delta_t: f64,
    /// Sampling period of sensor 1.
    pub tau_1: f64,
    /// Sampling period of sensor 2.
    pub tau_2: f64,
    /// Verification period of sensor 1 (equal to `tau_1` in event-triggered mode).
    #[serde(rename = "T_1")]
    pub t_1: f64,
    /// Verification period of sensor 2.
    #[serde(rename = "T_2")]
    pub t_2: f64,
    /// Transmission / cancellation threshold.
    pub epsilon: f64,
    /// Measurement-noise standard deviation.
    pub sigma: f64,
    /// Lower bound of the step magnitude distribution (exclusive of zero).
    pub d_low: f64,
    /// Upper bound of the step magnitude distribution.
    pub d_up: f64,
    /// Per-component per-interval change probability.
    pub p_change: f64,
    /// Uplink delay per transmitted component.
    pub dt_up: f64,
    /// Downlink delay per broadcast component.
    pub dt_down: f64,
    /// Uplink energy per component.
    pub p_up: f64,
    /// Downlink energy per component.
    pub p_down: f64,
    pub backoff: BackoffSpec,
    /// Simulation horizon.
    pub t_sim: f64,
    /// Samples per environment interval: `delta_t / tau_j` for each sensor.
    #[serde(rename = "H")]
    pub h: u32,
    pub broadcast_accounting: BroadcastAccounting,
    /// Root seed of the keyed draw streams.
    pub seed: u64,
}

/// Integer view of the time structure, valid once the config validates.
#[derive(Debug, Clone, Copy)]
pub struct TimeGrid {
    /// Common sampling period of both sensors.
    pub tau: f64,
    /// Verification every `m1` ticks for sensor 1.
    pub m1: u64,
    /// Verification every `m2` ticks for sensor 2.
    pub m2: u64,
    /// Ticks per environment interval.
    pub h: u64,
}

impl TimeGrid {
    pub fn verify_period(&self, sensor: u8) -> u64 {
        if sensor == SENSOR_1 {
            self.m1
        } else {
            self.m2
        }
    }
}

impl ScenarioConfig {
    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            tau: self.tau_1,
            m1: (self.t_1 / self.tau_1).round() as u64,
            m2: (self.t_2 / self.tau_2).round() as u64,
            h: self.h as u64,
        }
    }

    /// Event-triggered mode: verification at every sample (T_j = tau_j).
    pub fn is_event_triggered(&self) -> bool {
        let g = self.grid();
        g.m1 == 1 && g.m2 == 1
    }

    pub fn num_intervals(&self) -> u64 {
        (self.t_sim / self.delta_t).ceil() as u64
    }
}

/// A config together with its component map; the unit the CLI reads and
/// writes as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub map: ComponentMap,
}

#[derive(Debug, Error)]
#[error("invalid configuration: {}", .0.join("; "))]
pub struct ConfigErrors(pub Vec<String>);

fn is_positive_multiple(value: f64, base: f64) -> bool {
    if !(base > 0.0) || !(value > 0.0) {
        return false;
    }
    let r = value / base;
    r.round() >= 1.0 && (r - r.round()).abs() <= 1e-9 * r.abs().max(1.0)
}

/// Checks every documented invariant of the config and map, reporting all
/// violations at once. Validation is a pure check (idempotent by
/// construction): a validated scenario is returned unchanged.
// Negated comparisons so NaN fields fail validation too.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn validate_config(config: &ScenarioConfig, map: &ComponentMap) -> Result<(), ConfigErrors> {
    let mut v = Vec::new();
    let c = config;

    if c.n == 0 {
        v.push("n must be positive".into());
    }
    if !(c.delta_t > 0.0) {
        v.push("delta_t must be positive".into());
    }
    if !(c.tau_1 > 0.0) {
        v.push("tau_1 must be positive".into());
    }
    if !(c.tau_2 > 0.0) {
        v.push("tau_2 must be positive".into());
    }
    if c.tau_1 > 0.0 && c.tau_2 > 0.0 && c.tau_1 != c.tau_2 {
        v.push("tau_1 must equal tau_2 (H = delta_t/tau_j for both sensors)".into());
    }
    if !is_positive_multiple(c.t_1, c.tau_1) {
        v.push("T_1 not a multiple of tau_1".into());
    }
    if !is_positive_multiple(c.t_2, c.tau_2) {
        v.push("T_2 not a multiple of tau_2".into());
    }
    if !is_positive_multiple(c.delta_t, c.tau_1) {
        v.push("delta_t not a multiple of tau_1".into());
    }
    if !is_positive_multiple(c.delta_t, c.tau_2) {
        v.push("delta_t not a multiple of tau_2".into());
    }
    if c.tau_1 > 0.0 {
        let h = c.delta_t / c.tau_1;
        if c.h == 0 || (h - c.h as f64).abs() > 1e-9 * h.abs().max(1.0) {
            v.push("H must equal delta_t/tau_1".into());
        }
    }
    if !(c.epsilon >= 0.0) {
        v.push("epsilon must be nonnegative".into());
    }
    if !(c.sigma >= 0.0) {
        v.push("sigma must be nonnegative".into());
    }
    if !(c.d_low > 0.0) {
        v.push("d_low must be positive".into());
    }
    if c.d_up < c.d_low {
        v.push("d_up must be at least d_low".into());
    }
    if !(0.0..=1.0).contains(&c.p_change) {
        v.push("p_change must lie in [0, 1]".into());
    }
    if !(c.dt_up > 0.0) {
        v.push("dt_up must be positive".into());
    }
    if !(c.dt_down > 0.0) {
        v.push("dt_down must be positive".into());
    }
    if !(c.p_down > 0.0) {
        v.push("P_D must be positive".into());
    }
    if !(c.p_up > c.p_down) {
        v.push("P_U must exceed P_D".into());
    }
    if !(c.t_sim > 0.0) {
        v.push("t_sim must be positive".into());
    }
    c.backoff.collect_violations(&mut v);
    map.collect_violations(c.n, &mut v);

    if v.is_empty() {
        Ok(())
    } else {
        Err(ConfigErrors(v))
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        validate_config(&self.config, &self.map)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
