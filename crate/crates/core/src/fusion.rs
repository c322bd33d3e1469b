//! Central-processor estimate (latest-timestamp averaging) and exact
//! piecewise-constant MSE integration.

use serde::Serialize;

use crate::environment::EnvironmentPath;
use crate::model::{FullIndex, Scenario};

/// Per-index stored sensor values and the resulting estimate trajectory.
///
/// The estimate of an index is the mean of the stored values whose sample
/// timestamp equals the newest stored timestamp; it changes only at uplink
/// arrivals and is held constant in between.
#[derive(Debug, Clone)]
pub struct EstimateState {
    /// Slot per (index, sensor): (value, sample timestamp).
    slots: Vec<[Option<(f64, f64)>; 2]>,
    current: Vec<f64>,
    trajectories: Vec<Vec<(f64, f64)>>,
}

impl EstimateState {
    pub fn new(initial: &[f64]) -> Self {
        EstimateState {
            slots: vec![[None, None]; initial.len()],
            current: initial.to_vec(),
            trajectories: initial.iter().map(|v| vec![(0.0, *v)]).collect(),
        }
    }

    pub fn current(&self, full_index: FullIndex) -> f64 {
        self.current[full_index - 1]
    }

    /// Stores/overwrites sensor `j`'s entry for the index and recomputes the
    /// estimate as the mean over entries sharing the maximum timestamp.
    pub fn fuse(
        &mut self,
        full_index: FullIndex,
        sensor: u8,
        value: f64,
        sample_time: f64,
        now: f64,
    ) {
        let i = full_index - 1;
        self.slots[i][(sensor - 1) as usize] = Some((value, sample_time));
        let newest = self.slots[i]
            .iter()
            .flatten()
            .map(|(_, ts)| *ts)
            .fold(f64::NEG_INFINITY, f64::max);
        let fresh: Vec<f64> = self.slots[i]
            .iter()
            .flatten()
            .filter(|(_, ts)| *ts == newest)
            .map(|(v, _)| *v)
            .collect();
        let estimate = fresh.iter().sum::<f64>() / fresh.len() as f64;
        if estimate != self.current[i] {
            self.current[i] = estimate;
            self.trajectories[i].push((now, estimate));
        }
    }

    pub fn trajectories(&self) -> &[Vec<(f64, f64)>] {
        &self.trajectories
    }

    pub fn into_trajectories(self) -> Vec<Vec<(f64, f64)>> {
        self.trajectories
    }
}

/// Value of a piecewise-constant trajectory at time `t` (last breakpoint at
/// or before `t`).
fn value_at(breakpoints: &[(f64, f64)], t: f64) -> f64 {
    let pos = breakpoints.partition_point(|(bt, _)| *bt <= t);
    breakpoints[pos.saturating_sub(1)].1
}

/// Exact integral of (x_i - xhat_i)^2 over `[window.0, window.1)` for one
/// index, given both piecewise-constant trajectories.
fn integrate_sq_diff(
    state: &[(f64, f64)],
    estimate: &[(f64, f64)],
    window: (f64, f64),
) -> f64 {
    let (w0, w1) = window;
    if w1 <= w0 {
        return 0.0;
    }
    let mut cuts: Vec<f64> = state
        .iter()
        .chain(estimate.iter())
        .map(|(t, _)| *t)
        .filter(|t| *t > w0 && *t < w1)
        .collect();
    cuts.push(w0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for (i, t) in cuts.iter().enumerate() {
        let end = cuts.get(i + 1).copied().unwrap_or(w1);
        let err = value_at(state, *t) - value_at(estimate, *t);
        total += err * err * (end - *t);
    }
    total
}

/// Per-index (unnormalized) and total (divided by the horizon) squared
/// tracking error over the window.
pub fn integrate_mse(
    path: &EnvironmentPath,
    estimates: &[Vec<(f64, f64)>],
    window: (f64, f64),
) -> Vec<f64> {
    (1..=path.n())
        .map(|i| integrate_sq_diff(&path.breakpoints(i), &estimates[i - 1], window))
        .collect()
}

/// Summary of one run: tracking error, energy and communication counts.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    /// Sum over indices of the error integral, divided by the horizon.
    pub mse_total: f64,
    /// Unnormalized per-index error integrals over `[0, sim_end)`.
    pub per_index_mse: Vec<f64>,
    pub power_total: f64,
    pub uplink_components: u64,
    pub downlink_components: u64,
    pub cancellations: u64,
}

pub fn summarize(
    trace: &crate::engine::SimulationTrace,
    path: &EnvironmentPath,
    scn: &Scenario,
) -> MetricsReport {
    let per_index = integrate_mse(path, &trace.estimates, (0.0, trace.sim_end));
    let mode = scn.config.broadcast_accounting;
    MetricsReport {
        mse_total: per_index.iter().sum::<f64>() / trace.sim_end,
        per_index_mse: per_index,
        power_total: trace.ledger.r_total(mode),
        uplink_components: trace.ledger.uplink_components(),
        downlink_components: trace.ledger.downlink_components(mode),
        cancellations: trace.cancellations,
    }
}
