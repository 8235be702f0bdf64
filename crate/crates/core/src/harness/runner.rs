//! Replicated experiments, sweeps and single-shot oracle/tune runs.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::model::{crude_monte_carlo, LimitStateModel, McEstimate, Registry};
use crate::parallel::{map_indexed, Execution};
use crate::pipeline::{self, TuneReport};
use crate::rng::split_seed;
use crate::sus::subset_simulation;

/// ESJD grid used by `tune` when the config names no candidates.
pub const DEFAULT_TAU_CANDIDATES: [f64; 5] = [0.3, 0.5, 0.7, 1.0, 1.5];

/// Oracle runs must expect at least this many failures.
pub const MIN_EXPECTED_FAILURES: f64 = 10.0;

/// Measurements of one successful replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub pf_hat: f64,
    pub model_calls: u64,
    pub cov_analytic: Option<f64>,
    pub accept_rate: Option<f64>,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub outcome: Option<Outcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Replication {
    pub fn is_success(&self) -> bool {
        self.outcome.is_some()
    }
}

/// Aggregates over the successful replications, in index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub problem: String,
    pub method: Method,
    pub master_seed: u64,
    pub reference: Option<f64>,
    pub successes: usize,
    pub failures: usize,
    pub mean_pf: Option<f64>,
    /// Population standard deviation over the mean; `None` when the mean is 0.
    pub empirical_cov: Option<f64>,
    pub mean_model_calls: Option<f64>,
    pub mean_analytic_cov: Option<f64>,
    pub rows: Vec<Replication>,
}

impl AggregateReport {
    pub fn from_rows(problem: String, method: Method, master_seed: u64, reference: Option<f64>, rows: Vec<Replication>) -> Self {
        let ok: Vec<&Outcome> = rows.iter().filter_map(|r| r.outcome.as_ref()).collect();
        let n = ok.len() as f64;
        let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let pf: Vec<f64> = ok.iter().map(|o| o.pf_hat).collect();
        let calls: Vec<f64> = ok.iter().map(|o| o.model_calls as f64).collect();
        let mean_pf = mean(&pf);
        let empirical_cov = mean_pf.filter(|m| *m > 0.0).map(|m| {
            let var = pf.iter().map(|p| (p - m).powi(2)).sum::<f64>() / n;
            var.sqrt() / m
        });
        // Only meaningful when every successful row carries one.
        let analytic: Option<Vec<f64>> = ok.iter().map(|o| o.cov_analytic).collect();
        AggregateReport {
            problem,
            method,
            master_seed,
            reference,
            successes: ok.len(),
            failures: rows.len() - ok.len(),
            mean_pf,
            empirical_cov,
            mean_model_calls: mean(&calls),
            mean_analytic_cov: analytic.and_then(|a| mean(&a)),
            rows,
        }
    }

    /// Unit coefficient of variation, `empirical_cov·√(mean_model_calls)`.
    pub fn eff(&self) -> Option<f64> {
        Some(self.empirical_cov? * self.mean_model_calls?.sqrt())
    }

    /// Signed relative error of the mean against the reference.
    pub fn relative_error(&self) -> Option<f64> {
        let r = self.reference.filter(|r| *r > 0.0)?;
        Some(self.mean_pf? / r - 1.0)
    }
}

fn build_model(config: &RunConfig, registry: &Registry) -> Result<LimitStateModel> {
    registry.build(&config.problem, &config.params)
}

fn reference(config: &RunConfig) -> Result<Option<f64>> {
    match config.benchmark() {
        Some(spec) => Ok(spec.reference()?.map(|r| r.probability)),
        None => Ok(None),
    }
}

enum Plan {
    Astpa(pipeline::AstpaConfig),
    Sus(crate::sus::SusConfig),
    Mc(u64),
}

/// Runs `config.replications` independent estimations; replication `i` uses
/// seed `split_seed(config.seed, i)` and a fresh model counter. Errors in a
/// replication are recorded on its row; only configuration problems abort.
pub fn run_experiment(config: &RunConfig, registry: &Registry) -> Result<AggregateReport> {
    let template = build_model(config, registry)?;
    let plan = match config.method {
        Method::QnpHmcmc | Method::Hmcmc => {
            let astpa = config.astpa_config()?;
            if let Some(start) = &astpa.start {
                if start.len() != template.dim() {
                    return Err(Error::Dimension { expected: template.dim(), got: start.len() });
                }
            }
            Plan::Astpa(astpa)
        }
        Method::SusUniform | Method::SusNormal => Plan::Sus(config.sus_config()?),
        Method::CrudeMc => Plan::Mc(config.mc_samples),
    };
    let reference = reference(config)?;

    let rows = map_indexed(config.replications, config.execution, |rep| {
        let seed = split_seed(config.seed, rep as u64);
        let model = Arc::new(template.fresh());
        let started = Instant::now();
        let result = match &plan {
            Plan::Astpa(astpa) => pipeline::estimate(Arc::clone(&model), astpa, seed).map(|r| Outcome {
                pf_hat: r.p_hat,
                model_calls: 0,
                cov_analytic: r.cov_analytic,
                accept_rate: Some(r.accept_rate),
                wall_ms: None,
            }),
            Plan::Sus(sus) => subset_simulation(&model, sus, seed).map(|r| Outcome {
                pf_hat: r.p_hat,
                model_calls: 0,
                cov_analytic: None,
                accept_rate: Some(r.accept_rate),
                wall_ms: None,
            }),
            Plan::Mc(n) => crude_monte_carlo(&model, *n, seed, Execution::Sequential).map(|r| Outcome {
                pf_hat: r.p_hat,
                model_calls: 0,
                cov_analytic: r.cov,
                accept_rate: None,
                wall_ms: None,
            }),
        };
        match result {
            Ok(mut outcome) => {
                // The counter is the single source of truth for cost.
                outcome.model_calls = model.calls();
                if config.timing {
                    outcome.wall_ms = Some(started.elapsed().as_secs_f64() * 1e3);
                }
                Replication { rep, seed, outcome: Some(outcome), error: None }
            }
            Err(e) => Replication { rep, seed, outcome: None, error: Some(e.to_string()) },
        }
    });
    Ok(AggregateReport::from_rows(template.name().to_string(), config.method, config.seed, reference, rows))
}

/// One grid point of a sweep: a report, or the error that prevented the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: String,
    pub value: Value,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<AggregateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs the experiment once per (value, method) pair of the config's sweep,
/// in grid order. A failing point is recorded and the sweep continues.
pub fn sweep(config: &RunConfig, registry: &Registry) -> Result<Vec<SweepPoint>> {
    let spec = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("no sweep configured (set `sweep.parameter` and `sweep.values`)".into()))?;
    let mut points = Vec::with_capacity(spec.values.len() * spec.methods.len());
    for value in &spec.values {
        for &method in &spec.methods {
            let result = config
                .with(&spec.parameter, value.clone())
                .and_then(|c| c.with("method", Value::from(method.as_str())))
                .and_then(|c| run_experiment(&c, registry));
            let (report, error) = match result {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            points.push(SweepPoint { parameter: spec.parameter.clone(), value: value.clone(), method, report, error });
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub problem: String,
    pub reference: Option<f64>,
    #[serde(flatten)]
    pub estimate: McEstimate,
    /// Standard error of `p_hat`.
    pub std_error: f64,
}

/// A single large crude Monte Carlo run. Refuses sample sizes that cannot
/// resolve the reference probability (fewer than 10 expected failures)
/// unless `force` is set.
pub fn run_oracle(config: &RunConfig, registry: &Registry, n: u64, force: bool) -> Result<OracleReport> {
    let model = build_model(config, registry)?;
    let reference = reference(config)?;
    if let Some(p) = reference {
        let expected = p * n as f64;
        if expected < MIN_EXPECTED_FAILURES && !force {
            return Err(Error::Config(format!(
                "n = {n} expects {expected:.3} failures at the reference {p:e}; need n ≥ {:.0} (or --force)",
                (MIN_EXPECTED_FAILURES / p).ceil()
            )));
        }
    }
    let estimate = crude_monte_carlo(&model, n, config.seed, config.execution)?;
    let std_error = (estimate.p_hat * (1.0 - estimate.p_hat) / n as f64).sqrt();
    Ok(OracleReport { problem: model.name().to_string(), reference, estimate, std_error })
}

/// The adaptive phase alone at the master seed. Without configured
/// candidates τ is chosen from [`DEFAULT_TAU_CANDIDATES`].
pub fn run_tune(config: &RunConfig, registry: &Registry) -> Result<TuneReport> {
    let model = Arc::new(build_model(config, registry)?);
    let mut astpa = config.astpa_config()?;
    if astpa.tau_candidates.is_empty() {
        astpa.tau_candidates = DEFAULT_TAU_CANDIDATES.to_vec();
    }
    pipeline::tune(model, &astpa, config.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ConfigMap;
    use crate::model::LimitState;
    use serde_json::json;

    fn config(v: Value) -> RunConfig {
        RunConfig::from_map(v.as_object().unwrap().clone().into_iter().collect::<ConfigMap>()).unwrap()
    }

    struct AlwaysFails;

    impl LimitState for AlwaysFails {
        fn dim(&self) -> usize {
            2
        }

        fn value_and_gradient(&self, _: &[f64], grad: &mut [f64]) -> f64 {
            grad.fill(0.0);
            -1.0
        }
    }

    fn registry() -> Registry {
        let mut r = Registry::new();
        r.register("always-fails", Arc::new(AlwaysFails)).unwrap();
        r
    }

    #[test]
    fn degenerate_crude_mc() {
        let c = config(json!({"problem": "always-fails", "method": "crude-mc", "replications": 1, "mc.samples": 100}));
        let r = run_experiment(&c, &registry()).unwrap();
        assert_eq!(r.mean_pf, Some(1.0));
        assert_eq!(r.eff(), Some(0.0));
        assert_eq!(r.mean_model_calls, Some(100.0));
    }

    #[test]
    fn empty_run_has_no_aggregates() {
        let c = config(json!({"replications": 0}));
        let r = run_experiment(&c, &Registry::new()).unwrap();
        assert_eq!((r.successes, r.failures, r.mean_pf, r.eff()), (0, 0, None, None));
    }

    #[test]
    fn replication_errors_are_recorded_per_row() {
        // One level cannot reach the failure domain of example 1.
        let c = config(json!({"method": "sus-uniform", "replications": 2, "sus.max_levels": 1}));
        let r = run_experiment(&c, &Registry::new()).unwrap();
        assert_eq!((r.successes, r.failures), (0, 2));
        assert!(r.rows[0].error.as_deref().unwrap().contains("levels"));
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let c = config(json!({"method": "sus-normal", "replications": 4, "sus.n_s": 200}));
        let a = run_experiment(&c, &Registry::new()).unwrap();
        let b = run_experiment(&c.with("execution", json!("sequential")).unwrap(), &Registry::new()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.rows[0].seed, a.rows[1].seed);
    }

    #[test]
    fn oracle_refuses_unresolvable_sample_sizes() {
        let c = config(json!({"problem": "example1"}));
        let err = run_oracle(&c, &Registry::new(), 1000, false).unwrap_err();
        assert!(err.is_config());
        let r = run_oracle(&c, &Registry::new(), 1000, true).unwrap();
        assert_eq!(r.estimate.n_samples, 1000);
    }

    #[test]
    fn sweep_isolates_bad_points() {
        let c = config(json!({
            "problem": "example7", "method": "crude-mc", "replications": 1, "mc.samples": 10,
            "sweep.parameter": "problem.gamma", "sweep.values": [2, 2.5]
        }));
        let points = sweep(&c, &Registry::new()).unwrap();
        assert_eq!(points.len(), 2);
        assert!(points[0].report.is_some());
        assert!(points[1].error.is_some());
    }
}
