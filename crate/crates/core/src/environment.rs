//! Piecewise-constant random-walk environment paths and the conditioned
//! sample paths used by the theorem-verification runs.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{ComponentId, FullIndex, Scenario, ScenarioConfig, SENSOR_1, SENSOR_2};
use crate::rng::{DrawChecksum, Purpose, Streams};

/// One step of one full-state index at the start of an environment interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeRecord {
    pub interval: u64,
    pub full_index: FullIndex,
    pub step: f64,
}

/// Realization of the environment over `[0, num_intervals * delta_t)`.
///
/// `initial` is the state just before the interval-0 step; the accessor
/// `value_at` folds in every change with interval index at most
/// `floor(t / delta_t)`, so a change at interval `c` is visible from `c *
/// delta_t` onward.
#[derive(Debug, Clone)]
pub struct EnvironmentPath {
    n: usize,
    delta_t: f64,
    initial: Vec<f64>,
    changes: Vec<ChangeRecord>,
    num_intervals: u64,
    draw_checksum: DrawChecksum,
}

impl EnvironmentPath {
    pub fn new(
        initial: Vec<f64>,
        delta_t: f64,
        mut changes: Vec<ChangeRecord>,
        num_intervals: u64,
    ) -> Self {
        changes.sort_by_key(|r| (r.interval, r.full_index));
        EnvironmentPath {
            n: initial.len(),
            delta_t,
            initial,
            changes,
            num_intervals,
            draw_checksum: DrawChecksum::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn num_intervals(&self) -> u64 {
        self.num_intervals
    }

    pub fn changes(&self) -> &[ChangeRecord] {
        &self.changes
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn draw_checksum(&self) -> DrawChecksum {
        self.draw_checksum
    }

    pub fn end_time(&self) -> f64 {
        self.num_intervals as f64 * self.delta_t
    }

    /// x_i(t); constant on every `[c*delta_t, (c+1)*delta_t)`.
    pub fn value_at(&self, full_index: FullIndex, t: f64) -> f64 {
        let c = self.interval_of(t);
        let mut v = self.initial[full_index - 1];
        for r in &self.changes {
            if r.full_index == full_index && r.interval <= c {
                v += r.step;
            }
        }
        v
    }

    pub fn state_at(&self, t: f64) -> Vec<f64> {
        (1..=self.n).map(|i| self.value_at(i, t)).collect()
    }

    pub fn interval_of(&self, t: f64) -> u64 {
        if t <= 0.0 {
            return 0;
        }
        let c = (t / self.delta_t).floor() as u64;
        c.min(self.num_intervals.saturating_sub(1))
    }

    /// Breakpoints `(time, value)` of x_i, starting at time 0. The value at
    /// every interval boundary equals the cumulative sum of change records.
    pub fn breakpoints(&self, full_index: FullIndex) -> Vec<(f64, f64)> {
        let mut v = self.initial[full_index - 1];
        for r in &self.changes {
            if r.full_index == full_index && r.interval == 0 {
                v += r.step;
            }
        }
        let mut out = vec![(0.0, v)];
        for r in &self.changes {
            if r.full_index == full_index && r.interval > 0 {
                v += r.step;
                out.push((r.interval as f64 * self.delta_t, v));
            }
        }
        out
    }

    /// CSV of the change records: `interval,full_index,step_value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("interval,full_index,step_value\n");
        for r in &self.changes {
            out.push_str(&format!("{},{},{}\n", r.interval, r.full_index, r.step));
        }
        out
    }
}

/// Advances the state one environment interval: each full-state index
/// independently steps with probability `p_change`, by a uniform magnitude in
/// `[d_low, d_up]` with an equiprobable sign.
pub fn step_environment(
    state: &[f64],
    interval: u64,
    streams: &Streams,
    cfg: &ScenarioConfig,
    checksum: &mut DrawChecksum,
) -> (Vec<f64>, Vec<ChangeRecord>) {
    let mut next = state.to_vec();
    let mut records = Vec::new();
    for i in 1..=cfg.n {
        let u = streams.uniform(Purpose::EnvChange, interval, i as u64, 0);
        checksum.absorb(u);
        if u < cfg.p_change {
            let step = draw_step(streams, interval, i, cfg, checksum);
            next[i - 1] += step;
            records.push(ChangeRecord { interval, full_index: i, step });
        }
    }
    (next, records)
}

fn draw_step(
    streams: &Streams,
    interval: u64,
    full_index: FullIndex,
    cfg: &ScenarioConfig,
    checksum: &mut DrawChecksum,
) -> f64 {
    let sign = streams.sign(Purpose::EnvSign, interval, full_index as u64, 0);
    let u = streams.uniform(Purpose::EnvMagnitude, interval, full_index as u64, 0);
    checksum.absorb(sign);
    checksum.absorb(u);
    sign * (cfg.d_low + (cfg.d_up - cfg.d_low) * u)
}

/// Samples a full path over `[0, t_sim)` with independent per-component
/// Bernoulli changes each interval. Deterministic in the stream handle.
pub fn sample_path(cfg: &ScenarioConfig, streams: &Streams) -> EnvironmentPath {
    let num_intervals = cfg.num_intervals();
    let mut checksum = DrawChecksum::default();
    let mut state = vec![0.0; cfg.n];
    let mut changes = Vec::new();
    for c in 0..num_intervals {
        let (next, mut records) = step_environment(&state, c, streams, cfg, &mut checksum);
        state = next;
        changes.append(&mut records);
    }
    let mut path = EnvironmentPath::new(vec![0.0; cfg.n], cfg.delta_t, changes, num_intervals);
    path.draw_checksum = checksum;
    path
}

/// Samples a path in the single-change regime: per interval, with probability
/// `p_change` exactly one uniformly chosen full-state index steps; otherwise
/// none do. This is the regime in which unshared-component communications are
/// provably identical across architectures.
pub fn sample_path_single_change(cfg: &ScenarioConfig, streams: &Streams) -> EnvironmentPath {
    let num_intervals = cfg.num_intervals();
    let mut checksum = DrawChecksum::default();
    let mut changes = Vec::new();
    for c in 0..num_intervals {
        let u = streams.uniform(Purpose::EnvChange, c, 0, 1);
        checksum.absorb(u);
        if u < cfg.p_change {
            let pick = streams.uniform(Purpose::EnvPick, c, 0, 0);
            checksum.absorb(pick);
            let i = 1 + ((pick * cfg.n as f64) as usize).min(cfg.n - 1);
            let step = draw_step(streams, c, i, cfg, &mut checksum);
            changes.push(ChangeRecord { interval: c, full_index: i, step });
        }
    }
    let mut path = EnvironmentPath::new(vec![0.0; cfg.n], cfg.delta_t, changes, num_intervals);
    path.draw_checksum = checksum;
    path
}

/// Which conditioned construction a scenario realizes.
#[derive(Debug, Clone, PartialEq)]
pub enum SetupMeta {
    /// Single shared change in one environment interval, trigger at the
    /// interval start, quiet afterwards. Sensor 1 fires immediately; sensor
    /// 2 backs off.
    One {
        component: ComponentId,
        full_index: FullIndex,
        interval: u64,
        step: f64,
    },
    /// Longer verification periods: shared change before sensor 2's
    /// verification instant `a2*T_2`, unshared change before sensor 1's
    /// instant `a1*T_1`, with `(a1-1)*T_1 < a2*T_2 < a1*T_1`.
    Two {
        a1: u64,
        a2: u64,
        shared: ComponentId,
        shared_index: FullIndex,
        shared_interval: u64,
        shared_step: f64,
        unshared: ComponentId,
        unshared_index: FullIndex,
        unshared_interval: u64,
        unshared_step: f64,
    },
}

/// A sample path plus the pinned draws and bookkeeping that make it satisfy
/// one of the theorem setups. Both architectures replay the same scenario.
#[derive(Debug, Clone)]
pub struct ConditionedScenario {
    pub path: EnvironmentPath,
    /// Communication window `[T0, Tf)` the theorem reasons over.
    pub window: (f64, f64),
    /// Windowed statistics integrate over `[window.0, measure_end)`; for
    /// setup II this extends past `Tf` to cover the in-flight arrivals.
    pub measure_end: f64,
    /// Simulation horizon for this scenario.
    pub sim_end: f64,
    pub setup: SetupMeta,
    /// Pinned backoff draws per (sensor, verification index).
    pub backoff_overrides: BTreeMap<(u8, u64), f64>,
    /// Central estimate at time 0, when it must differ from x(0).
    pub initial_estimate: Option<Vec<f64>>,
    /// Salt baked into the noise keys of the accepted attempt.
    pub noise_salt: u64,
    /// Rejected attempts before acceptance.
    pub rejections: u64,
}

pub const DEFAULT_REJECTION_BUDGET: u64 = 10_000;

#[derive(Debug, Error)]
pub enum ConditioningError {
    #[error("setup-I conditioning infeasible after {attempts} attempts")]
    SetupOneInfeasible { attempts: u64 },
    #[error("setup-II conditioning infeasible after {attempts} attempts")]
    SetupTwoInfeasible { attempts: u64 },
    #[error("no valid (a1,a2) pair: need (a1-1)*T_1 < a2*T_2 < a1*T_1 inside the horizon")]
    NoValidPair,
    #[error("no environment interval boundary inside the setup-2 window")]
    NoChangeBoundary,
    #[error(
        "setup-2 measurement tail (ends {tail_end}) overlaps the next verification at {next_verify}"
    )]
    TailOverlap { tail_end: f64, next_verify: f64 },
    #[error("setup precondition violated: {0}")]
    Precondition(String),
}

/// Builds a Setup-I scenario: shared component `k` steps at the start of the
/// (relabelled) interval 0, both sensors trigger there, and no component of
/// either sensor triggers anywhere else in the window — the window behaves
/// like the noiseless case. Acceptance is decided by replaying both
/// architectures on the candidate draws; rejected draws are counted.
pub fn build_setup_one(
    scn: &Scenario,
    rep: u64,
    budget: u64,
) -> Result<ConditionedScenario, ConditioningError> {
    let cfg = &scn.config;
    let k = *scn
        .map
        .shared
        .iter()
        .next()
        .ok_or_else(|| ConditioningError::Precondition("a shared component".into()))?;
    if !cfg.is_event_triggered() {
        return Err(ConditioningError::Precondition(
            "event-triggered mode (T_j = tau_j)".into(),
        ));
    }
    let full_index = scn.map.index_of(k);

    for attempt in 0..budget {
        let salt = attempt + 1;
        let streams = Streams::with_salt(cfg.seed, rep, salt);
        let mut checksum = DrawChecksum::default();
        let step = draw_step(&streams, 0, full_index, cfg, &mut checksum);
        let mut path = EnvironmentPath::new(
            vec![0.0; cfg.n],
            cfg.delta_t,
            vec![ChangeRecord { interval: 0, full_index, step }],
            1,
        );
        path.draw_checksum = checksum;

        let candidate = ConditionedScenario {
            path,
            window: (0.0, cfg.delta_t),
            measure_end: cfg.delta_t,
            sim_end: cfg.delta_t,
            setup: SetupMeta::One { component: k, full_index, interval: 0, step },
            backoff_overrides: [((SENSOR_1, 0), 0.0)].into(),
            initial_estimate: Some(vec![0.0; cfg.n]),
            noise_salt: salt,
            rejections: attempt,
        };

        if setup_one_pattern_holds(scn, rep, &candidate, k) {
            return Ok(candidate);
        }
    }
    Err(ConditioningError::SetupOneInfeasible { attempts: budget })
}

/// Replays both architectures on the candidate and checks the trigger
/// pattern: `k` triggers at the window start for both sensors, nothing else
/// triggers anywhere in the window.
fn setup_one_pattern_holds(
    scn: &Scenario,
    rep: u64,
    candidate: &ConditionedScenario,
    k: ComponentId,
) -> bool {
    use crate::engine::{run_simulation, RunInput};
    use crate::model::ArchitectureKind;

    for arch in [ArchitectureKind::InEps, ArchitectureKind::OutEps] {
        let input = RunInput::conditioned(candidate);
        let Ok((trace, _)) = run_simulation(scn, arch, &input, rep) else {
            return false;
        };
        let mut seen_1 = false;
        let mut seen_2 = false;
        for ev in trace.events.iter().filter(|e| e.kind == "trigger") {
            if ev.time != 0.0 || ev.components.iter().any(|c| *c != k) {
                return false;
            }
            match ev.actor {
                SENSOR_1 => seen_1 = true,
                SENSOR_2 => seen_2 = true,
                _ => {}
            }
        }
        if !(seen_1 && seen_2) {
            return false;
        }
    }
    true
}

/// Builds a Setup-II scenario for time-triggered verification.
pub fn build_setup_two(
    scn: &Scenario,
    rep: u64,
    budget: u64,
) -> Result<ConditionedScenario, ConditioningError> {
    let cfg = &scn.config;
    let grid = cfg.grid();
    if grid.m1 <= 1 || grid.m2 <= 1 {
        return Err(ConditioningError::Precondition(
            "time-triggered mode (T_j > tau_j for both sensors)".into(),
        ));
    }
    let shared = *scn
        .map
        .shared
        .iter()
        .next()
        .ok_or_else(|| ConditioningError::Precondition("a shared component".into()))?;
    let unshared = *scn
        .map
        .unshared_1
        .iter()
        .next()
        .ok_or_else(|| ConditioningError::Precondition("an unshared component of sensor 1".into()))?;

    let (a1, a2) = find_setup_two_pair(cfg).ok_or(ConditioningError::NoValidPair)?;
    let t0 = (a1 - 1) as f64 * cfg.t_1;
    let tf = a1 as f64 * cfg.t_1;
    let t_mid = a2 as f64 * cfg.t_2;

    // Change boundaries: latest interval start inside each sub-window.
    let shared_interval = latest_boundary_in(cfg.delta_t, t0, t_mid)
        .ok_or(ConditioningError::NoChangeBoundary)?;
    let unshared_interval =
        latest_boundary_in(cfg.delta_t, t_mid, tf).ok_or(ConditioningError::NoChangeBoundary)?;

    // All arrivals triggered in the window settle by this time; it must not
    // reach the next verification instant of either sensor.
    let measure_end = tf + cfg.backoff.max_support() + 2.0 * cfg.dt_up;
    let next_verify = ((a1 + 1) as f64 * cfg.t_1).min((a2 + 1) as f64 * cfg.t_2);
    if measure_end > next_verify {
        return Err(ConditioningError::TailOverlap { tail_end: measure_end, next_verify });
    }

    let shared_index = scn.map.index_of(shared);
    let unshared_index = scn.map.index_of(unshared);
    let num_intervals = (measure_end / cfg.delta_t).ceil() as u64;

    for attempt in 0..budget {
        let salt = attempt + 1;
        let streams = Streams::with_salt(cfg.seed, rep, salt);
        let mut checksum = DrawChecksum::default();
        let shared_step =
            draw_step(&streams, shared_interval, shared_index, cfg, &mut checksum);
        let unshared_step =
            draw_step(&streams, unshared_interval, unshared_index, cfg, &mut checksum);
        let mut path = EnvironmentPath::new(
            vec![0.0; cfg.n],
            cfg.delta_t,
            vec![
                ChangeRecord { interval: shared_interval, full_index: shared_index, step: shared_step },
                ChangeRecord {
                    interval: unshared_interval,
                    full_index: unshared_index,
                    step: unshared_step,
                },
            ],
            num_intervals,
        );
        path.draw_checksum = checksum;

        let candidate = ConditionedScenario {
            path,
            window: (t0, tf),
            measure_end,
            sim_end: measure_end,
            setup: SetupMeta::Two {
                a1,
                a2,
                shared,
                shared_index,
                shared_interval,
                shared_step,
                unshared,
                unshared_index,
                unshared_interval,
                unshared_step,
            },
            backoff_overrides: BTreeMap::new(),
            initial_estimate: None,
            noise_salt: salt,
            rejections: attempt,
        };

        if setup_two_pattern_holds(scn, rep, &candidate, shared, unshared, t_mid, tf) {
            return Ok(candidate);
        }
    }
    Err(ConditioningError::SetupTwoInfeasible { attempts: budget })
}

/// Smallest (a1, a2) with `(a1-1)*T_1 < a2*T_2 < a1*T_1` inside the horizon.
fn find_setup_two_pair(cfg: &ScenarioConfig) -> Option<(u64, u64)> {
    let mut a1 = 1u64;
    loop {
        let hi = a1 as f64 * cfg.t_1;
        if hi >= cfg.t_sim {
            return None;
        }
        let lo = (a1 - 1) as f64 * cfg.t_1;
        let a2 = (hi / cfg.t_2).floor() as u64;
        if a2 >= 1 {
            let mid = a2 as f64 * cfg.t_2;
            if lo < mid && mid < hi {
                return Some((a1, a2));
            }
        }
        a1 += 1;
    }
}

/// Largest interval index c with `lo < c*delta_t <= hi`.
fn latest_boundary_in(delta_t: f64, lo: f64, hi: f64) -> Option<u64> {
    let c = (hi / delta_t).floor() as u64;
    let t = c as f64 * delta_t;
    if t > lo && t <= hi && c > 0 {
        Some(c)
    } else {
        None
    }
}

/// Replays the IN(eps) architecture and checks the trigger pattern: quiet
/// before `a2*T_2`, sensor 2 triggers exactly the shared component there,
/// sensor 1 triggers exactly {shared, unshared} at `a1*T_1`. The unshared
/// trigger carries over to OUT(eps) unchanged (broadcasts never touch
/// unshared components), and the shared trigger at `a1*T_1` is permitted to
/// be suppressed there.
fn setup_two_pattern_holds(
    scn: &Scenario,
    rep: u64,
    candidate: &ConditionedScenario,
    shared: ComponentId,
    unshared: ComponentId,
    t_mid: f64,
    tf: f64,
) -> bool {
    use crate::engine::{run_simulation, RunInput};
    use crate::model::ArchitectureKind;

    let input = RunInput::conditioned(candidate);
    let Ok((trace, _)) = run_simulation(scn, ArchitectureKind::InEps, &input, rep) else {
        return false;
    };
    let mut seen_mid = false;
    let mut seen_end = false;
    for ev in trace.events.iter().filter(|e| e.kind == "trigger") {
        if ev.time < t_mid {
            return false;
        }
        if ev.time == t_mid {
            if ev.actor != SENSOR_2 || ev.components != vec![shared] {
                return false;
            }
            seen_mid = true;
        } else if ev.time == tf {
            if ev.actor != SENSOR_1 || ev.components != vec![shared, unshared] {
                return false;
            }
            seen_end = true;
        } else {
            return false;
        }
    }
    seen_mid && seen_end
}
