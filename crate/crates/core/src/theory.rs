//! Closed-form evaluators for the architecture comparison results, each in
//! two variants: as printed, and as the accompanying derivation implies.
//! Where the two disagree the simulator is the arbiter; both are always
//! computed and reported.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{run_simulation, RunInput};
use crate::environment::sample_path;
use crate::model::{ArchitectureKind, BackoffSpec, ComponentId, Scenario, ScenarioConfig};
use crate::rng::Streams;

/// Which reading of a stated result to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaVariant {
    /// The expression as printed.
    Printed,
    /// The expression the derivation steps actually produce.
    ProofConsistent,
}

impl FormulaVariant {
    pub const BOTH: [FormulaVariant; 2] = [FormulaVariant::Printed, FormulaVariant::ProofConsistent];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Geq,
    Lt,
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function by Cody's rational Chebyshev approximations
/// (three regimes), good to full double precision. The degenerate branches
/// elsewhere rely on erfc being exact at the extremes.
// Coefficients kept verbatim from the reference tables.
#[allow(clippy::excessive_precision)]
pub fn erfc(x: f64) -> f64 {
    const THRESH: f64 = 0.46875;
    const SQRPI: f64 = 5.641_895_835_477_562_9e-1;

    const A: [f64; 5] = [
        3.161_123_743_870_565_6e0,
        1.138_641_541_510_501_56e2,
        3.774_852_376_853_020_2e2,
        3.209_377_589_138_469_47e3,
        1.857_777_061_846_031_53e-1,
    ];
    const B: [f64; 4] = [
        2.360_129_095_234_412_09e1,
        2.440_246_379_344_441_73e2,
        1.282_616_526_077_372_28e3,
        2.844_236_833_439_170_62e3,
    ];
    const C: [f64; 9] = [
        5.641_884_969_886_700_89e-1,
        8.883_149_794_388_375_94e0,
        6.611_919_063_714_162_95e1,
        2.986_351_381_974_001_31e2,
        8.819_522_212_417_690_9e2,
        1.712_047_612_634_070_58e3,
        2.051_078_377_826_071_47e3,
        1.230_339_354_797_997_25e3,
        2.153_115_354_744_038_46e-8,
    ];
    const D: [f64; 8] = [
        1.574_492_611_070_983_47e1,
        1.176_939_508_913_124_99e2,
        5.371_811_018_620_098_58e2,
        1.621_389_574_566_690_19e3,
        3.290_799_235_733_459_63e3,
        4.362_619_090_143_247_16e3,
        3.439_367_674_143_721_64e3,
        1.230_339_354_803_749_42e3,
    ];
    const P: [f64; 6] = [
        3.053_266_349_612_323_44e-1,
        3.603_448_999_498_044_39e-1,
        1.257_817_261_112_292_46e-1,
        1.608_378_514_874_227_66e-2,
        6.587_491_615_298_378_03e-4,
        1.631_538_713_730_209_78e-2,
    ];
    const Q: [f64; 5] = [
        2.568_520_192_289_822_42e0,
        1.872_952_849_923_460_47e0,
        5.279_051_029_514_284_12e-1,
        6.051_834_131_244_131_91e-2,
        2.335_204_976_268_691_85e-3,
    ];

    let y = x.abs();
    let result = if y <= THRESH {
        let ysq = y * y;
        let mut num = A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + A[i]) * ysq;
            den = (den + B[i]) * ysq;
        }
        // erf on the central interval, converted to erfc.
        return 1.0 - x * (num + A[3]) / (den + B[3]);
    } else if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        let r = (num + C[7]) / (den + D[7]);
        scaled_exp(y) * r
    } else if y < 26.543 {
        let ysq = 1.0 / (y * y);
        let mut num = P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + P[i]) * ysq;
            den = (den + Q[i]) * ysq;
        }
        let r = ysq * (num + P[4]) / (den + Q[4]);
        scaled_exp(y) * ((SQRPI - r) / y)
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// exp(-y^2) split so the squared term is computed without cancellation.
fn scaled_exp(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// P(|W1 - W2| >= eps) (or its complement) for independent W1, W2 ~
/// N(0, sigma^2). The difference is N(0, 2 sigma^2), so the `geq` side is
/// 2(1 - Phi(eps / (sigma sqrt(2)))). sigma = 0 degenerates to an indicator.
pub fn gauss_abs_diff_prob(epsilon: f64, sigma: f64, side: TailSide) -> f64 {
    let geq = if sigma == 0.0 {
        if epsilon > 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        2.0 * (1.0 - normal_cdf(epsilon / (sigma * std::f64::consts::SQRT_2)))
    };
    match side {
        TailSide::Geq => geq,
        TailSide::Lt => 1.0 - geq,
    }
}

/// Expected extra power IN(eps) spends over OUT(eps) on the shared component
/// of a single-change interval, under conditional broadcast accounting:
/// (P_U - P_D)(1 - F_B(du + dd)) * P(|W1 - W2| ~ eps). The printed variant
/// uses the `>=` side of the cancellation event, the proof-consistent one
/// uses `<`.
pub fn power_shared_expected_diff(cfg: &ScenarioConfig, variant: FormulaVariant) -> f64 {
    let side = match variant {
        FormulaVariant::Printed => TailSide::Geq,
        FormulaVariant::ProofConsistent => TailSide::Lt,
    };
    let survive = 1.0 - cfg.backoff.cdf(cfg.dt_up + cfg.dt_down);
    (cfg.p_up - cfg.p_down) * survive * gauss_abs_diff_prob(cfg.epsilon, cfg.sigma, side)
}

/// Same expectation when every broadcast is charged ("always" accounting):
/// the cancellation branch still gains P_U - P_D, but a non-cancelled
/// exchange costs two broadcasts, so the mean is q(P_U - P_D) - (1-q) 2 P_D
/// with q the cancellation probability of the chosen variant.
pub fn power_shared_expected_diff_always(cfg: &ScenarioConfig, variant: FormulaVariant) -> f64 {
    let side = match variant {
        FormulaVariant::Printed => TailSide::Geq,
        FormulaVariant::ProofConsistent => TailSide::Lt,
    };
    let survive = 1.0 - cfg.backoff.cdf(cfg.dt_up + cfg.dt_down);
    let q = survive * gauss_abs_diff_prob(cfg.epsilon, cfg.sigma, side);
    q * (cfg.p_up - cfg.p_down) - (1.0 - q) * 2.0 * cfg.p_down
}

/// Probability that the shared component's windowed MSE under OUT(eps) is
/// strictly below IN(eps) in a single-change interval:
/// (1 - F_B(du + dd)) * P(Q > 0, |W1 - W2| < eps), with the quadratic Q
/// depending on the variant. Computed by deterministic quadrature over the
/// within-eps strip.
pub fn mse_shared_prob(cfg: &ScenarioConfig, variant: FormulaVariant) -> f64 {
    let survive = 1.0 - cfg.backoff.cdf(cfg.dt_up + cfg.dt_down);
    survive * mse_shared_joint_prob(cfg.epsilon, cfg.sigma, variant)
}

/// P(Q > 0, |W1 - W2| < eps) alone. Substituting u = W1 - W2, v = W1 + W2
/// (independent, each N(0, 2 sigma^2)) turns the strip into an interval in
/// u, and for fixed u the condition is a quadratic in v with a closed normal
/// probability; the remaining 1-D integral in u uses 256-node Gauss-Legendre
/// (target 1e-8).
pub fn mse_shared_joint_prob(epsilon: f64, sigma: f64, variant: FormulaVariant) -> f64 {
    if sigma == 0.0 || epsilon == 0.0 {
        // Q degenerates to 0, which is not > 0; the strip is empty for eps = 0.
        return 0.0;
    }
    let s = sigma * std::f64::consts::SQRT_2;
    let limit = epsilon.min(8.0 * s);
    let nodes = gauss_legendre_nodes(256);
    let mut total = 0.0;
    for (x, w) in &nodes {
        // Map [-1, 1] to [-limit, limit].
        let u = x * limit;
        let pdf = normal_pdf_scaled(u, s);
        let inner = match variant {
            // Q = (1/4)(W1+W2)^2 - W1^2 = -(u^2 + 2uv)/4.
            FormulaVariant::ProofConsistent => {
                quadratic_positive_prob(0.0, -u / 2.0, -u * u / 4.0, s)
            }
            // Q = (1/2)W1W2 + W2^2 - (3/4)W1^2 = (3v^2 - 14uv - u^2)/16.
            FormulaVariant::Printed => {
                quadratic_positive_prob(3.0 / 16.0, -7.0 * u / 8.0, -u * u / 16.0, s)
            }
        };
        total += w * limit * pdf * inner;
    }
    total
}

fn normal_pdf_scaled(x: f64, s: f64) -> f64 {
    (-0.5 * (x / s) * (x / s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

/// P(a v^2 + b v + c > 0) for v ~ N(0, s^2).
fn quadratic_positive_prob(a: f64, b: f64, c: f64, s: f64) -> f64 {
    if a == 0.0 {
        if b == 0.0 {
            return if c > 0.0 { 1.0 } else { 0.0 };
        }
        let root = -c / b;
        return if b > 0.0 {
            1.0 - normal_cdf(root / s)
        } else {
            normal_cdf(root / s)
        };
    }
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return if a > 0.0 { 1.0 } else { 0.0 };
    }
    let sq = disc.sqrt();
    let r1 = (-b - sq) / (2.0 * a);
    let r2 = (-b + sq) / (2.0 * a);
    let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    if a > 0.0 {
        normal_cdf(lo / s) + 1.0 - normal_cdf(hi / s)
    } else {
        normal_cdf(hi / s) - normal_cdf(lo / s)
    }
}

/// G(s) = P(B1 - B2 <= s) for independent backoffs. Closed triangular form
/// for the uniform spec, indicator for zero, discrete convolution otherwise.
pub fn backoff_diff_cdf(spec: &BackoffSpec, s: f64) -> f64 {
    match spec {
        BackoffSpec::Zero => {
            if s >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        BackoffSpec::Uniform { b } => {
            if s <= -b {
                0.0
            } else if s >= *b {
                1.0
            } else if s <= 0.0 {
                let t = 1.0 + s / b;
                0.5 * t * t
            } else {
                let t = 1.0 - s / b;
                1.0 - 0.5 * t * t
            }
        }
        BackoffSpec::Empirical { points } => {
            let mut total = 0.0;
            for p1 in points {
                for p2 in points {
                    if p1.value - p2.value <= s {
                        total += p1.prob * p2.prob;
                    }
                }
            }
            total
        }
    }
}

#[derive(Debug, Error)]
#[error("invalid setup-2 geometry: need (a1-1)*T_1 < a2*T_2 < a1*T_1, got a1={a1}, a2={a2}")]
pub struct Setup2Geometry {
    pub a1: u64,
    pub a2: u64,
}

/// Probability that the unshared component k1's MSE improves under OUT(eps)
/// in the longer-verification-period construction.
///
/// The printed orientation multiplies by 1 - G(a1 T1 - a2 T2 + du + dd); the
/// proof-consistent orientation follows the cancellation timing
/// a2 T2 + B2 + du + dd <= a1 T1 + B1, i.e. G(a1 T1 - a2 T2 - du - dd).
/// P(|d1| > 0) = 1 whenever d_low > 0; the step and the noise difference are
/// independent, so the joint factors.
pub fn mse_shared_gen_prob(
    cfg: &ScenarioConfig,
    a1: u64,
    a2: u64,
    variant: FormulaVariant,
) -> Result<f64, Setup2Geometry> {
    let lo = (a1 - 1) as f64 * cfg.t_1;
    let mid = a2 as f64 * cfg.t_2;
    let hi = a1 as f64 * cfg.t_1;
    if !(lo < mid && mid < hi) {
        return Err(Setup2Geometry { a1, a2 });
    }
    let p_step = if cfg.d_low > 0.0 { 1.0 } else { 0.0 };
    let p_eps = gauss_abs_diff_prob(cfg.epsilon, cfg.sigma, TailSide::Lt);
    let gap = hi - mid;
    let g = match variant {
        FormulaVariant::Printed => {
            1.0 - backoff_diff_cdf(&cfg.backoff, gap + cfg.dt_up + cfg.dt_down)
        }
        FormulaVariant::ProofConsistent => {
            backoff_diff_cdf(&cfg.backoff, gap - cfg.dt_up - cfg.dt_down)
        }
    };
    Ok(p_step * p_eps * g)
}

/// Grid point of the unshared-power expectation: a sample instant of the
/// previous interval (h = 0..=H) or of the target interval (h = 1..H-1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct GridPoint {
    pub from_previous_interval: bool,
    pub h: u64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PEstimate {
    pub p: f64,
    pub se: f64,
    pub n: u64,
}

/// Empirical transmission frequencies stratified by grid point, around one
/// target environment interval.
#[derive(Debug, Clone, Serialize)]
pub struct PTable {
    pub interval: u64,
    pub entries: BTreeMap<(u8, ComponentId, GridPoint), PEstimate>,
}

#[derive(Debug, Error)]
#[error("missing p entries: {}", .0.join(", "))]
pub struct MissingPEntries(pub Vec<String>);

/// Expected uplink power spent on sensor `j`'s unshared components over the
/// target interval: each grid-time transmission frequency weighted by the
/// probability that its (backoff + uplink) delay lands the reception inside
/// the interval.
pub fn unshared_power_expected(
    scn: &Scenario,
    sensor: u8,
    table: &PTable,
) -> Result<f64, MissingPEntries> {
    let cfg = &scn.config;
    let grid = cfg.grid();
    let h_max = grid.h;
    let unshared = match sensor {
        1 => &scn.map.unshared_1,
        _ => &scn.map.unshared_2,
    };
    let mut missing = Vec::new();
    let mut lookup = |k: ComponentId, point: GridPoint| -> f64 {
        match table.entries.get(&(sensor, k, point)) {
            Some(e) => e.p,
            None => {
                missing.push(format!(
                    "sensor {sensor} component {k} {}h={}",
                    if point.from_previous_interval { "prev " } else { "" },
                    point.h
                ));
                0.0
            }
        }
    };
    let mut total = 0.0;
    for &k in unshared {
        for h in 0..=h_max {
            let weight = 1.0 - cfg.backoff.cdf(cfg.delta_t - h as f64 * grid.tau - cfg.dt_up);
            total += weight * lookup(k, GridPoint { from_previous_interval: true, h });
        }
        for h in 1..h_max {
            let weight = cfg.backoff.cdf(cfg.delta_t - h as f64 * grid.tau - cfg.dt_up);
            total += weight * lookup(k, GridPoint { from_previous_interval: false, h });
        }
    }
    if missing.is_empty() {
        Ok(cfg.p_up * total)
    } else {
        Err(MissingPEntries(missing))
    }
}

/// Grid tick indices (tick, point) around target interval `c`.
pub fn unshared_power_grid(cfg: &ScenarioConfig, interval: u64) -> Vec<(u64, GridPoint)> {
    let h_max = cfg.grid().h;
    let mut out = Vec::new();
    for h in 0..=h_max {
        out.push(((interval - 1) * h_max + h, GridPoint { from_previous_interval: true, h }));
    }
    for h in 1..h_max {
        out.push((interval * h_max + h, GridPoint { from_previous_interval: false, h }));
    }
    out
}

/// Estimates p empirically: the frequency, over `reps` IN(eps) runs, that
/// sensor j transmits component k with sample timestamp equal to each grid
/// time. A transmission here is an uplink send (triggered and not replaced);
/// whether it is received inside the target interval is what the backoff
/// weights of the expectation account for.
pub fn estimate_p_jk(scn: &Scenario, reps: u64, interval: u64) -> PTable {
    assert!(interval >= 1, "target interval needs a previous interval");
    assert!(reps >= 1);
    let cfg = &scn.config;
    let grid_points = unshared_power_grid(cfg, interval);
    let tau = cfg.grid().tau;
    let sim_end = ((interval + 1) as f64 * cfg.delta_t + cfg.backoff.max_support()
        + cfg.n as f64 * cfg.dt_up)
        .min(cfg.t_sim.max((interval + 1) as f64 * cfg.delta_t));

    let mut counts: BTreeMap<(u8, ComponentId, GridPoint), u64> = BTreeMap::new();
    for rep in 0..reps {
        let streams = Streams::new(cfg.seed, rep);
        let path = sample_path(cfg, &streams);
        let mut input = RunInput::from_path(&path, cfg.t_sim);
        input.sim_end = sim_end;
        let (trace, _) = run_simulation(scn, ArchitectureKind::InEps, &input, rep)
            .expect("unconditioned run");
        for ev in trace.events.iter().filter(|e| e.kind == "uplink_send") {
            let Some(created) = ev.value else { continue };
            for (tick, point) in &grid_points {
                if created == *tick as f64 * tau {
                    for &k in &ev.components {
                        if scn.map.is_unshared(k) {
                            *counts.entry((ev.actor, k, *point)).or_insert(0) += 1;
                        }
                    }
                }
            }
        }
    }

    let mut entries = BTreeMap::new();
    for sensor in [1u8, 2u8] {
        let unshared = if sensor == 1 { &scn.map.unshared_1 } else { &scn.map.unshared_2 };
        for &k in unshared {
            for (_, point) in &grid_points {
                let n = counts.get(&(sensor, k, *point)).copied().unwrap_or(0);
                let p = n as f64 / reps as f64;
                entries.insert(
                    (sensor, k, *point),
                    PEstimate { p, se: (p * (1.0 - p) / reps as f64).sqrt(), n: reps },
                );
            }
        }
    }
    PTable { interval, entries }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre_nodes(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}
