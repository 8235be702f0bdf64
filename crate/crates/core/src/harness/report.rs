//! Report emission: per-replication CSV, aggregate JSON, sweep plot data.
//!
//! Floats are written with Rust's shortest round-trip formatting and rows in
//! replication order, so identical reports produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use super::config::RunConfig;
use super::runner::{AggregateReport, SweepPoint};
use crate::error::{Error, Result};

pub const REPLICATION_HEADER: &str = "rep,seed,pf_hat,model_calls,cov_analytic,accept_rate,wall_ms";
pub const PLOT_HEADER: &str = "parameter,value,method,mean_pf,empirical_cov,mean_model_calls,eff,error";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Quotes a CSV field when it needs it.
fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One line per replication; failed replications keep their seed and leave
/// the measurement columns empty.
pub fn replications_csv(report: &AggregateReport) -> String {
    let mut out = String::from(REPLICATION_HEADER);
    out.push('\n');
    for row in &report.rows {
        let o = row.outcome.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.rep,
            row.seed,
            opt(o.map(|o| o.pf_hat)),
            o.map(|o| o.model_calls.to_string()).unwrap_or_default(),
            opt(o.and_then(|o| o.cov_analytic)),
            opt(o.and_then(|o| o.accept_rate)),
            opt(o.and_then(|o| o.wall_ms)),
        );
    }
    out
}

fn aggregate_fields(report: &AggregateReport) -> Value {
    json!({
        "problem": report.problem,
        "method": report.method,
        "master_seed": report.master_seed,
        "reference": report.reference,
        "replications": report.rows.len(),
        "successes": report.successes,
        "failures": report.failures,
        "mean_pf": report.mean_pf,
        "empirical_cov": report.empirical_cov,
        "mean_model_calls": report.mean_model_calls,
        "mean_analytic_cov": report.mean_analytic_cov,
        "eff": report.eff(),
        "relative_error": report.relative_error(),
    })
}

/// Aggregate JSON with the config echo, artifact version and all rows.
pub fn report_json(report: &AggregateReport, config: &RunConfig) -> Value {
    let mut v = aggregate_fields(report);
    v["version"] = json!(env!("CARGO_PKG_VERSION"));
    v["config"] = json!(config.echo());
    v["rows"] = json!(report.rows);
    v
}

/// Plot data: one line per (grid value, method). Failed points keep their
/// coordinates and carry the error message.
pub fn plot_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for p in points {
        let value = match &p.value {
            Value::String(s) => s.clone(),
            v => v.to_string(),
        };
        let r = p.report.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            field(&p.parameter),
            field(&value),
            p.method,
            opt(r.and_then(|r| r.mean_pf)),
            opt(r.and_then(|r| r.empirical_cov)),
            opt(r.and_then(|r| r.mean_model_calls)),
            opt(r.and_then(AggregateReport::eff)),
            field(p.error.as_deref().unwrap_or("")),
        );
    }
    out
}

pub fn sweep_json(points: &[SweepPoint], config: &RunConfig) -> Value {
    let points: Vec<Value> = points
        .iter()
        .map(|p| {
            let mut v = json!({ "parameter": p.parameter, "value": p.value, "method": p.method });
            match (&p.report, &p.error) {
                (Some(r), _) => {
                    v["report"] = aggregate_fields(r);
                    v["report"]["rows"] = json!(r.rows);
                }
                (None, e) => v["error"] = json!(e),
            }
            v
        })
        .collect();
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": config.echo(),
        "points": points,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Writes whichever of the CSV and JSON outputs the config names.
pub fn emit_reports(report: &AggregateReport, config: &RunConfig) -> Result<()> {
    if let Some(path) = &config.output.csv {
        write(path, &replications_csv(report))?;
    }
    if let Some(path) = &config.output.json {
        write(path, &pretty(&report_json(report, config)))?;
    }
    Ok(())
}

/// Writes the sweep's plot CSV (`output.plot`) and JSON (`output.json`).
pub fn emit_sweep_reports(points: &[SweepPoint], config: &RunConfig) -> Result<()> {
    if let Some(path) = &config.output.plot {
        write(path, &plot_csv(points))?;
    }
    if let Some(path) = &config.output.json {
        write(path, &pretty(&sweep_json(points, config)))?;
    }
    Ok(())
}
