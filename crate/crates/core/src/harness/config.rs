//! Run configuration: a flat JSON object with dotted keys.
//!
//! ```json
//! { "problem": "example6", "problem.beta": 5, "method": "qnp-hmcmc",
//!   "replications": 50, "seed": 7, "astpa.budget": 6000 }
//! ```
//!
//! Every key is checked against the known set, so a typo is an error rather
//! than a silently ignored setting.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{BenchmarkId, BenchmarkParams, BenchmarkSpec};
use crate::parallel::Execution;
use crate::pipeline::{AstpaConfig, SamplerKind};
use crate::sus::{Proposal, SusConfig};

/// Raw key/value pairs as read from a config file or the command line.
pub type ConfigMap = BTreeMap<String, Value>;

pub const DEFAULT_REPLICATIONS: usize = 100;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_MC_SAMPLES: u64 = 100_000;

const TOP_LEVEL: &[&str] = &[
    "problem",
    "method",
    "replications",
    "seed",
    "timing",
    "execution",
    "output.csv",
    "output.json",
    "output.plot",
    "mc.samples",
    "sweep.parameter",
    "sweep.values",
    "sweep.methods",
];

const PROBLEM_PARAMS: &[&str] = &["beta", "gamma", "delta", "lambda", "y0", "r", "kappa", "e", "dim"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    QnpHmcmc,
    Hmcmc,
    SusUniform,
    SusNormal,
    CrudeMc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::QnpHmcmc,
        Method::Hmcmc,
        Method::SusUniform,
        Method::SusNormal,
        Method::CrudeMc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::QnpHmcmc => "qnp-hmcmc",
            Method::Hmcmc => "hmcmc",
            Method::SusUniform => "sus-uniform",
            Method::SusNormal => "sus-normal",
            Method::CrudeMc => "crude-mc",
        }
    }

    pub fn sampler(self) -> Option<SamplerKind> {
        match self {
            Method::QnpHmcmc => Some(SamplerKind::Qnp),
            Method::Hmcmc => Some(SamplerKind::Hmc),
            _ => None,
        }
    }

    pub fn proposal(self) -> Option<Proposal> {
        match self {
            Method::SusUniform => Some(Proposal::Uniform),
            Method::SusNormal => Some(Proposal::Normal),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Method::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!("unknown method `{s}` (expected one of {})", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Any config key, e.g. `problem.beta` or `astpa.budget`.
    pub parameter: String,
    pub values: Vec<Value>,
    /// Methods compared at every grid point; defaults to the run's method.
    pub methods: Vec<Method>,
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Benchmark id or the name of a registered user problem.
    pub problem: String,
    pub params: BenchmarkParams,
    pub method: Method,
    pub replications: usize,
    pub seed: u64,
    /// Record per-replication wall-clock times. Off by default so reruns are
    /// byte-identical.
    pub timing: bool,
    pub execution: Execution,
    pub mc_samples: u64,
    pub output: OutputPaths,
    pub sweep: Option<SweepSpec>,
    astpa: Map<String, Value>,
    sus: Map<String, Value>,
    entries: ConfigMap,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_map(ConfigMap::new()).expect("empty config is valid")
    }
}

impl RunConfig {
    pub fn from_map(entries: ConfigMap) -> Result<Self> {
        let mut config = RunConfig {
            problem: BenchmarkId::Example1.to_string(),
            params: BenchmarkParams::default(),
            method: Method::QnpHmcmc,
            replications: DEFAULT_REPLICATIONS,
            seed: DEFAULT_SEED,
            timing: false,
            execution: Execution::Parallel,
            mc_samples: DEFAULT_MC_SAMPLES,
            output: OutputPaths::default(),
            sweep: None,
            astpa: Map::new(),
            sus: Map::new(),
            entries: ConfigMap::new(),
        };
        let (mut sweep_parameter, mut sweep_values, mut sweep_methods) = (None, None, None);
        for (key, value) in &entries {
            match key.as_str() {
                "problem" => config.problem = string(key, value)?,
                "method" => config.method = string(key, value)?.parse()?,
                "replications" => config.replications = integer(key, value)? as usize,
                "seed" => config.seed = integer(key, value)?,
                "timing" => {
                    config.timing = value
                        .as_bool()
                        .ok_or_else(|| Error::Config(format!("`{key}` must be true or false")))?
                }
                "execution" => {
                    config.execution = match string(key, value)?.as_str() {
                        "parallel" => Execution::Parallel,
                        "sequential" => Execution::Sequential,
                        other => {
                            return Err(Error::Config(format!(
                                "`{key}` must be `parallel` or `sequential`, got `{other}`"
                            )))
                        }
                    }
                }
                "output.csv" => config.output.csv = Some(string(key, value)?.into()),
                "output.json" => config.output.json = Some(string(key, value)?.into()),
                "output.plot" => config.output.plot = Some(string(key, value)?.into()),
                "mc.samples" => config.mc_samples = integer(key, value)?,
                "sweep.parameter" => sweep_parameter = Some(string(key, value)?),
                "sweep.values" => sweep_values = Some(array(key, value)?.clone()),
                "sweep.methods" => {
                    let methods = array(key, value)?
                        .iter()
                        .map(|m| string(key, m)?.parse())
                        .collect::<Result<Vec<Method>>>()?;
                    sweep_methods = Some(methods);
                }
                _ => {
                    if let Some(name) = key.strip_prefix("problem.") {
                        let v = value
                            .as_f64()
                            .ok_or_else(|| Error::Config(format!("`{key}` must be a number")))?;
                        config.params.set(name, v)?;
                    } else if let Some(name) = key.strip_prefix("astpa.") {
                        if name == "sampler" {
                            return Err(Error::Config("the sampler follows `method`; drop `astpa.sampler`".into()));
                        }
                        config.astpa.insert(name.to_string(), value.clone());
                    } else if let Some(name) = key.strip_prefix("sus.") {
                        if name == "proposal" {
                            return Err(Error::Config("the proposal follows `method`; drop `sus.proposal`".into()));
                        }
                        config.sus.insert(name.to_string(), value.clone());
                    } else {
                        return Err(unknown_key(key));
                    }
                }
            }
        }
        // Type-check overrides against the defaults now, so a bad value is
        // reported at load time even when the method would not use it.
        overlay(&AstpaConfig::default(), &config.astpa, "astpa")?;
        overlay(&SusConfig::default(), &config.sus, "sus")?;
        if config.mc_samples == 0 {
            return Err(Error::Config("`mc.samples` must be positive".into()));
        }
        config.sweep = match (sweep_parameter, sweep_values) {
            (None, None) if sweep_methods.is_none() => None,
            (Some(parameter), Some(values)) => {
                if parameter.starts_with("sweep.") || parameter.starts_with("output.") || parameter == "method" {
                    return Err(Error::Config(format!("`{parameter}` cannot be swept")));
                }
                if !is_known_key(&parameter) {
                    return Err(unknown_key(&parameter));
                }
                if values.is_empty() {
                    return Err(Error::Config("`sweep.values` must not be empty".into()));
                }
                let methods = sweep_methods.unwrap_or_else(|| vec![config.method]);
                if methods.is_empty() {
                    return Err(Error::Config("`sweep.methods` must not be empty".into()));
                }
                Some(SweepSpec { parameter, values, methods })
            }
            _ => {
                return Err(Error::Config(
                    "a sweep needs both `sweep.parameter` and `sweep.values`".into(),
                ))
            }
        };
        config.entries = entries;
        Ok(config)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_map(parse_map(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_map(load_map(path)?)
    }

    /// The keys this config was built from.
    pub fn entries(&self) -> &ConfigMap {
        &self.entries
    }

    /// Returns a copy with one key replaced and everything re-validated.
    pub fn with(&self, key: &str, value: Value) -> Result<Self> {
        self.with_entries([(key.to_string(), value)])
    }

    /// Like [`with`](Self::with) for several keys, validated together.
    pub fn with_entries(&self, changes: impl IntoIterator<Item = (String, Value)>) -> Result<Self> {
        let mut entries = self.entries.clone();
        entries.extend(changes);
        Self::from_map(entries)
    }

    /// The explicit keys plus the resolved top-level settings, for the JSON
    /// report's config echo.
    pub fn echo(&self) -> ConfigMap {
        let mut echo = self.entries.clone();
        echo.insert("problem".into(), Value::from(self.problem.clone()));
        echo.insert("method".into(), Value::from(self.method.as_str()));
        echo.insert("replications".into(), Value::from(self.replications));
        echo.insert("seed".into(), Value::from(self.seed));
        echo
    }

    /// The benchmark spec when `problem` names a builtin benchmark.
    pub fn benchmark(&self) -> Option<BenchmarkSpec> {
        BenchmarkId::from_str(&self.problem).ok().map(|id| BenchmarkSpec { id, params: self.params })
    }

    /// ASTPA settings: the benchmark's published defaults (or the generic
    /// 10%-burn-in rule for user problems) with `astpa.*` keys on top.
    pub fn astpa_config(&self) -> Result<AstpaConfig> {
        let sampler = self
            .method
            .sampler()
            .ok_or_else(|| Error::Config(format!("method `{}` is not an ASTPA sampler", self.method)))?;
        let base = match self.benchmark() {
            Some(spec) => AstpaConfig::for_benchmark(&spec, sampler)?,
            None => {
                let mut base = AstpaConfig { sampler, ..AstpaConfig::default() };
                if let Some(budget) = self.astpa.get("budget").and_then(Value::as_u64) {
                    base.budget = budget;
                }
                base.burnin = ((base.budget / 10) as usize).max(2);
                base
            }
        };
        let config: AstpaConfig = overlay(&base, &self.astpa, "astpa")?;
        config.validate()?;
        Ok(config)
    }

    pub fn sus_config(&self) -> Result<SusConfig> {
        let proposal = self
            .method
            .proposal()
            .ok_or_else(|| Error::Config(format!("method `{}` is not a subset simulation", self.method)))?;
        let n_s = self.benchmark().map_or(SusConfig::default().n_s, |s| s.defaults().sus_samples);
        let base = SusConfig { n_s, proposal, ..SusConfig::default() };
        let config: SusConfig = overlay(&base, &self.sus, "sus")?;
        config.validate()?;
        Ok(config)
    }
}

/// True for every key [`RunConfig::from_map`] accepts.
pub fn is_known_key(key: &str) -> bool {
    if TOP_LEVEL.contains(&key) {
        return true;
    }
    let fields = |value: Value| match value {
        Value::Object(m) => m.keys().cloned().collect::<Vec<_>>(),
        _ => Vec::new(),
    };
    if let Some(name) = key.strip_prefix("problem.") {
        PROBLEM_PARAMS.contains(&name)
    } else if let Some(name) = key.strip_prefix("astpa.") {
        name != "sampler" && fields(serde_json::to_value(AstpaConfig::default()).unwrap()).iter().any(|f| f == name)
    } else if let Some(name) = key.strip_prefix("sus.") {
        name != "proposal" && fields(serde_json::to_value(SusConfig::default()).unwrap()).iter().any(|f| f == name)
    } else {
        false
    }
}

pub fn parse_map(text: &str) -> Result<ConfigMap> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
    match value {
        Value::Object(m) => Ok(m.into_iter().collect()),
        _ => Err(Error::Config("config must be a flat JSON object".into())),
    }
}

pub fn load_map(path: &Path) -> Result<ConfigMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_map(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Parses a `key=value` override. The value is read as JSON when it parses
/// (numbers, booleans, arrays) and as a bare string otherwise.
pub fn parse_assignment(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{text}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("empty key in `{text}`")));
    }
    let raw = raw.trim();
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::from(raw));
    Ok((key.to_string(), value))
}

fn unknown_key(key: &str) -> Error {
    Error::Config(format!("unknown config key `{key}`"))
}

fn string(key: &str, value: &Value) -> Result<String> {
    value
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Config(format!("`{key}` must be a string")))
}

fn integer(key: &str, value: &Value) -> Result<u64> {
    value
        .as_u64()
        .ok_or_else(|| Error::Config(format!("`{key}` must be a non-negative integer")))
}

fn array<'a>(key: &str, value: &'a Value) -> Result<&'a Vec<Value>> {
    value
        .as_array()
        .ok_or_else(|| Error::Config(format!("`{key}` must be an array")))
}

/// Replaces fields of `base` by the entries of `overrides`, via serde.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, overrides: &Map<String, Value>, section: &str) -> Result<T> {
    let Value::Object(mut fields) = serde_json::to_value(base).expect("config serializes") else {
        unreachable!("configs serialize to objects")
    };
    for (name, value) in overrides {
        match fields.get_mut(name) {
            Some(slot) => *slot = value.clone(),
            None => return Err(unknown_key(&format!("{section}.{name}"))),
        }
    }
    serde_json::from_value(Value::Object(fields))
        .map_err(|e| Error::Config(format!("invalid `{section}.*` setting: {e}")))
}
