//! Deterministic CSV and JSON emitters for traces, metrics, theory tables
//! and verification reports. Floats print with Rust's shortest-roundtrip
//! formatting, so identical runs produce identical bytes.

use std::fmt::Write as _;

use crate::engine::SimulationTrace;
use crate::experiments::{VariantVerdict, VerificationReport};
use crate::fusion::MetricsReport;
use crate::model::ArchitectureKind;

/// `events.csv`: one row per trace event.
pub fn events_csv(runs: &[(u64, ArchitectureKind, &SimulationTrace)]) -> String {
    let mut out = String::from("replication,arch,time,class,actor,kind,component_ids,value\n");
    for (rep, arch, trace) in runs {
        for ev in &trace.events {
            let comps = ev
                .components
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(";");
            let value = ev.value.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{rep},{arch},{},{},{},{},{comps},{value}",
                ev.time, ev.class, ev.actor, ev.kind
            )
            .unwrap();
        }
    }
    out
}

/// `metrics.csv`: one row per (replication, architecture), with per-index
/// MSE columns `mse_idx_<i>`.
pub fn metrics_csv(rows: &[(u64, ArchitectureKind, MetricsReport)], n: usize) -> String {
    let mut out = String::from(
        "replication,arch,mse_total,power_total,uplink_components,downlink_components,cancellations",
    );
    for i in 1..=n {
        write!(out, ",mse_idx_{i}").unwrap();
    }
    out.push('\n');
    for (rep, arch, m) in rows {
        write!(
            out,
            "{rep},{arch},{},{},{},{},{}",
            m.mse_total, m.power_total, m.uplink_components, m.downlink_components, m.cancellations
        )
        .unwrap();
        for v in &m.per_index_mse {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// `theory.csv`: one row per evaluated closed-form variant.
pub fn theory_csv(verdicts: &[VariantVerdict]) -> String {
    let mut out =
        String::from("formula_id,variant,closed_form_value,mc_estimate,mc_stderr,n_samples,verdict\n");
    for v in verdicts {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            v.formula_id, v.variant, v.closed_form, v.mc_estimate, v.mc_stderr, v.n_samples,
            v.verdict()
        )
        .unwrap();
    }
    out
}

/// `verify_<id>.json`.
pub fn verification_json(report: &VerificationReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theory_csv_has_the_documented_columns() {
        let v = VariantVerdict {
            formula_id: "power_shared_conditional".into(),
            variant: "proof_consistent".into(),
            closed_form: 0.25,
            mc_estimate: 0.251,
            mc_stderr: 0.001,
            n_samples: 1000,
            criterion: "within 3 SE".into(),
            pass: true,
        };
        let csv = theory_csv(&[v]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "formula_id,variant,closed_form_value,mc_estimate,mc_stderr,n_samples,verdict"
        );
        assert_eq!(
            lines.next().unwrap(),
            "power_shared_conditional,proof_consistent,0.25,0.251,0.001,1000,PASS"
        );
    }

    #[test]
    fn metrics_csv_expands_per_index_columns() {
        let m = MetricsReport {
            mse_total: 0.5,
            per_index_mse: vec![1.0, 4.0],
            power_total: 6.0,
            uplink_components: 3,
            downlink_components: 1,
            cancellations: 1,
        };
        let csv = metrics_csv(&[(0, ArchitectureKind::OutEps, m)], 2);
        assert!(csv.starts_with(
            "replication,arch,mse_total,power_total,uplink_components,downlink_components,cancellations,mse_idx_1,mse_idx_2\n"
        ));
        assert!(csv.contains("0,out_eps,0.5,6,3,1,1,1,4"));
    }
}
