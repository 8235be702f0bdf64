//! Replicated experiments: config parsing, seeded runs, aggregation and
//! CSV/JSON reports.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{parse_assignment, ConfigMap, Method, RunConfig};
pub use report::{emit_reports, emit_sweep_reports, plot_csv, replications_csv, report_json, sweep_json};
pub use runner::{
    run_experiment, run_oracle, run_tune, sweep, AggregateReport, OracleReport, Outcome, Replication, SweepPoint,
};
