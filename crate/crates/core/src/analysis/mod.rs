//! Monte Carlo reconciliation of the forgery bound, the bit-error experiment
//! and impact classification of simulation traces.

mod bep;
mod classify;
mod forgery;
mod report;
pub mod stats;

pub use bep::{bep_experiment, bep_experiment_with, BepMode};
pub use classify::{
    classify_events, classify_trace, compare_table1, impact_string, table1_row, AttackOutcome, ClassifyError,
    Evidence, Impact, Table1Row, TABLE1,
};
pub use forgery::{forgery_theory, monte_carlo_forgery, FORGERY_CHUNKS};
pub use report::{render_reports_csv, render_reports_table, ExperimentReport};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}
