//! Experiment reports and their text renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Outcome of one experiment. Empirical values always come with their sample
/// count, interval and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub theoretical: f64,
    pub empirical: f64,
    pub samples: u64,
    /// 99% interval for the empirical value.
    pub ci: (f64, f64),
    pub seed: u64,
    pub tolerance: String,
    pub passed: bool,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Comma-separated, one report per line.
pub fn render_reports_csv(reports: &[ExperimentReport]) -> String {
    let mut out =
        String::from("experiment,parameters,theoretical,empirical,samples,ci_low,ci_high,seed,tolerance,passed\n");
    for r in reports {
        let params = r
            .parameters
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            out,
            "{},\"{}\",{:e},{:e},{},{:e},{:e},{},\"{}\",{}",
            r.experiment,
            params.replace('"', "'"),
            r.theoretical,
            r.empirical,
            r.samples,
            r.ci.0,
            r.ci.1,
            r.seed,
            r.tolerance,
            r.passed
        );
    }
    out
}

/// Fixed-width terminal table.
pub fn render_reports_table(reports: &[ExperimentReport]) -> String {
    let mut out = format!(
        "{:<22} {:>12} {:>12} {:>10} {:>25} {:>6}\n",
        "experiment", "theoretical", "empirical", "samples", "99% ci", "pass"
    );
    for r in reports {
        let ci = format!("[{:.3e}, {:.3e}]", r.ci.0, r.ci.1);
        let _ = writeln!(
            out,
            "{:<22} {:>12.4e} {:>12.4e} {:>10} {:>25} {:>6}",
            r.experiment,
            r.theoretical,
            r.empirical,
            r.samples,
            ci,
            if r.passed { "yes" } else { "NO" }
        );
        for n in &r.notes {
            let _ = writeln!(out, "  note: {n}");
        }
    }
    out
}
