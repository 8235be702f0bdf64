use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use astpa::harness::{self, config, ConfigMap, RunConfig};
use astpa::model::{BenchmarkSpec, Registry};
use astpa::{BenchmarkId, Error, Result};

/// Rare-event probability estimation experiments.
#[derive(Parser)]
#[command(name = "astpa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one replicated experiment and write its reports.
    Run(Common),
    /// Repeat the experiment over a grid of one config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Key to vary, e.g. problem.beta.
        #[arg(long)]
        parameter: Option<String>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Comma-separated methods to compare at each point.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Crude Monte Carlo reference estimate.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Number of samples (default: mc.samples).
        #[arg(long, short = 'n')]
        samples: Option<u64>,
        /// Run even when n cannot resolve the reference probability.
        #[arg(long)]
        force: bool,
    },
    /// Run burn-in adaptation only and report ε, τ and acceptance.
    Tune(Common),
    /// List the builtin benchmarks.
    ListBenchmarks {
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Flat JSON config with dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    problem: Option<String>,
    /// qnp-hmcmc | hmcmc | sus-uniform | sus-normal | crude-mc
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    replications: Option<u64>,
    /// Benchmark parameter, e.g. --param beta=5 (repeatable).
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    burnin: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long)]
    k_max: Option<u64>,
    /// SuS samples per level.
    #[arg(long)]
    n_s: Option<u64>,
    #[arg(long)]
    p0: Option<f64>,
    /// Samples per crude-mc replication.
    #[arg(long)]
    mc_samples: Option<u64>,
    /// Per-replication CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Aggregate JSON path.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Sweep plot-data CSV path.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Record wall-clock time per replication.
    #[arg(long)]
    timing: bool,
    /// Run replications on the calling thread.
    #[arg(long)]
    sequential: bool,
    /// Any config key, e.g. --set astpa.normalizer=direct (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    /// Config file, then flags, then `--set`, then `--seed`.
    fn resolve(&self) -> Result<ConfigMap> {
        let mut map = match &self.config {
            Some(path) => config::load_map(path)?,
            None => ConfigMap::new(),
        };
        let mut put = |key: &str, value: Option<Value>| {
            if let Some(v) = value {
                map.insert(key.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| Value::from(p.display().to_string()));
        put("problem", self.problem.clone().map(Value::from));
        put("method", self.method.clone().map(Value::from));
        put("replications", self.replications.map(Value::from));
        put("astpa.budget", self.budget.map(Value::from));
        put("astpa.burnin", self.burnin.map(Value::from));
        put("astpa.sigma", self.sigma.map(Value::from));
        put("astpa.tau", self.tau.map(Value::from));
        put("astpa.percentile", self.percentile.map(Value::from));
        put("astpa.k_max", self.k_max.map(Value::from));
        put("sus.n_s", self.n_s.map(Value::from));
        put("sus.p0", self.p0.map(Value::from));
        put("mc.samples", self.mc_samples.map(Value::from));
        put("output.csv", path(&self.csv));
        put("output.json", path(&self.json));
        put("output.plot", path(&self.plot));
        put("timing", self.timing.then_some(Value::Bool(true)));
        put("execution", self.sequential.then(|| Value::from("sequential")));
        for p in &self.params {
            let (name, value) = config::parse_assignment(p)?;
            map.insert(format!("problem.{name}"), value);
        }
        for s in &self.sets {
            let (key, value) = config::parse_assignment(s)?;
            map.insert(key, value);
        }
        if let Some(seed) = self.seed {
            map.insert("seed".into(), Value::from(seed));
        }
        Ok(map)
    }

    fn run_config(&self) -> Result<RunConfig> {
        RunConfig::from_map(self.resolve()?)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4e}"))
}

fn print_aggregate(r: &harness::AggregateReport) {
    println!("problem          {}", r.problem);
    println!("method           {}", r.method);
    println!("replications     {} ok, {} failed", r.successes, r.failures);
    println!("mean P_F         {}", fmt_opt(r.mean_pf));
    if let Some(reference) = r.reference {
        println!("reference        {reference:.4e} (rel. error {})", fmt_opt(r.relative_error()));
    }
    println!("empirical CoV    {}", fmt_opt(r.empirical_cov));
    println!("analytic CoV     {}", fmt_opt(r.mean_analytic_cov));
    println!("mean model calls {}", r.mean_model_calls.map_or_else(|| "-".into(), |c| format!("{c:.1}")));
    println!("eff              {}", fmt_opt(r.eff()));
}

fn run(common: &Common) -> Result<()> {
    let config = common.run_config()?;
    let report = harness::run_experiment(&config, &Registry::new())?;
    harness::emit_reports(&report, &config)?;
    print_aggregate(&report);
    for row in &report.rows {
        if let Some(e) = &row.error {
            eprintln!("replication {} (seed {}): {e}", row.rep, row.seed);
        }
    }
    if report.successes == 0 && !report.rows.is_empty() {
        return Err(Error::Numerical("every replication failed".into()));
    }
    Ok(())
}

fn sweep(common: &Common, parameter: &Option<String>, values: &[String], methods: &[String]) -> Result<()> {
    let mut map = common.resolve()?;
    if let Some(p) = parameter {
        map.insert("sweep.parameter".into(), Value::from(p.clone()));
    }
    if !values.is_empty() {
        let parsed = values
            .iter()
            .map(|v| serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::from(v.trim())))
            .collect();
        map.insert("sweep.values".into(), Value::Array(parsed));
    }
    if !methods.is_empty() {
        map.insert("sweep.methods".into(), methods.iter().map(|m| Value::from(m.trim())).collect());
    }
    let config = RunConfig::from_map(map)?;
    let points = harness::sweep(&config, &Registry::new())?;
    harness::emit_sweep_reports(&points, &config)?;
    print!("{}", harness::plot_csv(&points));
    for p in points.iter().filter(|p| p.error.is_some()) {
        eprintln!("{}={} {}: {}", p.parameter, p.value, p.method, p.error.as_deref().unwrap_or(""));
    }
    if points.iter().all(|p| p.report.as_ref().is_none_or(|r| r.successes == 0)) {
        return Err(Error::Numerical("no sweep point produced an estimate".into()));
    }
    Ok(())
}

fn oracle(common: &Common, samples: Option<u64>, force: bool) -> Result<()> {
    let config = common.run_config()?;
    let n = samples.unwrap_or(config.mc_samples);
    let r = harness::run_oracle(&config, &Registry::new(), n, force)?;
    println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
    Ok(())
}

fn tune(common: &Common) -> Result<()> {
    let config = common.run_config()?;
    let r = harness::run_tune(&config, &Registry::new())?;
    println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
    Ok(())
}

fn list_benchmarks(json: bool) -> Result<()> {
    let rows = BenchmarkId::ALL
        .iter()
        .map(|&id| {
            let spec = BenchmarkSpec::new(id);
            Ok((spec, spec.dim()?, spec.reference()?.map(|r| r.probability), spec.defaults()))
        })
        .collect::<Result<Vec<_>>>()?;
    if json {
        let v: Vec<Value> = rows
            .iter()
            .map(|(spec, dim, reference, d)| {
                serde_json::json!({
                    "id": spec.id, "label": spec.label(), "description": spec.id.description(),
                    "dim": dim, "reference": reference, "sigma": d.sigma, "tau": d.tau,
                    "burnin": d.burnin, "budget": d.budget, "sus_samples": d.sus_samples,
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&v).expect("list serializes"));
        return Ok(());
    }
    println!("{:<10} {:>4} {:>10} {:>5} {:>4} {:>6} {:>6}  description", "id", "dim", "reference", "sigma", "tau", "burnin", "budget");
    for (spec, dim, reference, d) in rows {
        println!(
            "{:<10} {:>4} {:>10} {:>5} {:>4} {:>6} {:>6}  {}",
            spec.id,
            dim,
            reference.map_or_else(|| "-".into(), |p| format!("{p:.2e}")),
            d.sigma,
            d.tau,
            d.burnin,
            d.budget,
            spec.id.description()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => run(c),
        Command::Sweep { common, parameter, values, methods } => sweep(common, parameter, values, methods),
        Command::Oracle { common, samples, force } => oracle(common, *samples, *force),
        Command::Tune(c) => tune(c),
        Command::ListBenchmarks { json } => list_benchmarks(*json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // Unreadable or unwritable files count as setup problems.
            if e.is_config() || matches!(e, Error::Io { .. }) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
