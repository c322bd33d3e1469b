//! Hand-emitted SVG timelines: per actor, the cumulative number of
//! transferred components over time, with sloped ramps of width
//! m * per-component-delay during transfers and markers at cancellations.

use outformation::engine::SimulationTrace;
use outformation::model::ScenarioConfig;

pub struct TimelinePlotSpec<'a> {
    pub trace: &'a SimulationTrace,
    pub config: &'a ScenarioConfig,
    pub title: String,
    /// (time, count) upper bounds; computed from the trace when `None`.
    pub axis: Option<(f64, f64)>,
}

#[derive(Debug)]
pub struct EmptyTrace;

impl std::fmt::Display for EmptyTrace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("empty trace")
    }
}

impl std::error::Error for EmptyTrace {}

struct Series {
    label: &'static str,
    color: &'static str,
    /// (send time, components) per transfer.
    transfers: Vec<(f64, u64)>,
    delay: f64,
    cancels: Vec<f64>,
}

/// Nondecreasing polyline: flat between transfers, a ramp of width
/// m * delay rising by m during each transfer.
fn staircase(transfers: &[(f64, u64)], delay: f64, t_end: f64) -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 0.0)];
    let mut x = 0.0;
    let mut y = 0.0;
    for (t, m) in transfers {
        let start = t.max(x);
        if start > x {
            pts.push((start, y));
        }
        x = start + *m as f64 * delay;
        y += *m as f64;
        pts.push((x, y));
    }
    if t_end > x {
        pts.push((t_end, y));
    }
    pts
}

fn value_at(pts: &[(f64, f64)], t: f64) -> f64 {
    let mut v = 0.0;
    for (x, y) in pts {
        if *x <= t {
            v = *y;
        } else {
            break;
        }
    }
    v
}

pub fn render_timeline_svg(spec: &TimelinePlotSpec) -> Result<String, EmptyTrace> {
    if spec.trace.events.is_empty() {
        return Err(EmptyTrace);
    }
    let trace = spec.trace;
    let mut series = [
        Series { label: "sensor 1 uplink", color: "#1f6fb4", transfers: vec![], delay: spec.config.dt_up, cancels: vec![] },
        Series { label: "sensor 2 uplink", color: "#2ca02c", transfers: vec![], delay: spec.config.dt_up, cancels: vec![] },
        Series { label: "central downlink", color: "#d62728", transfers: vec![], delay: spec.config.dt_down, cancels: vec![] },
    ];
    for ev in &trace.events {
        match ev.kind {
            "uplink_send" if ev.actor == 1 => series[0].transfers.push((ev.time, ev.components.len() as u64)),
            "uplink_send" if ev.actor == 2 => series[1].transfers.push((ev.time, ev.components.len() as u64)),
            "bcast_send" => series[2].transfers.push((ev.time, ev.components.len() as u64)),
            "cancel" if ev.actor == 1 => series[0].cancels.push(ev.time),
            "cancel" if ev.actor == 2 => series[1].cancels.push(ev.time),
            _ => {}
        }
    }

    let (t_max, y_max) = spec.axis.unwrap_or_else(|| {
        let y = series
            .iter()
            .map(|s| s.transfers.iter().map(|(_, m)| m).sum::<u64>())
            .max()
            .unwrap_or(0);
        (trace.sim_end, (y.max(1)) as f64)
    });

    const W: f64 = 900.0;
    const H: f64 = 320.0;
    const ML: f64 = 55.0;
    const MR: f64 = 15.0;
    const MT: f64 = 30.0;
    const MB: f64 = 40.0;
    let sx = |t: f64| ML + (W - ML - MR) * (t / t_max);
    let sy = |c: f64| H - MB - (H - MT - MB) * (c / y_max);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        ML,
        spec.title
    ));
    // Axes.
    out.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    out.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"#333\"/>\n",
        H - MB
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">time</text>\n",
        (W - MR) / 2.0,
        H - 10.0
    ));
    out.push_str(&format!(
        "<text x=\"8\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">components</text>\n",
        MT + 10.0
    ));
    for tick in 0..=4 {
        let t = t_max * tick as f64 / 4.0;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{t}</text>\n",
            sx(t),
            H - MB + 14.0
        ));
    }

    for (i, s) in series.iter().enumerate() {
        let pts = staircase(&s.transfers, s.delay, t_max);
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{},{}", sx(*x), sy(*y))).collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.6\" points=\"{}\"/>\n",
            s.color,
            path.join(" ")
        ));
        for c in &s.cancels {
            let (cx, cy) = (sx(*c), sy(value_at(&pts, *c)));
            out.push_str(&format!(
                "<path d=\"M {} {} l 8 -8 m -8 0 l 8 8\" stroke=\"{}\" stroke-width=\"1.4\" transform=\"translate(-4,4)\"/>\n",
                cx, cy, s.color
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{}</text>\n",
            W - MR - 160.0,
            MT + 14.0 * (i + 1) as f64,
            s.color,
            s.label
        ));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Exposed for tests: the staircase must be nondecreasing in both axes.
pub fn staircase_points(transfers: &[(f64, u64)], delay: f64, t_end: f64) -> Vec<(f64, f64)> {
    staircase(transfers, delay, t_end)
}
