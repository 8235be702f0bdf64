//! The nine benchmark limit-state functions and their reference probabilities.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{normal_cdf, LimitState, LimitStateModel};
use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkId {
    Example1,
    Example2,
    Example3,
    Example4,
    Example5,
    Example6,
    Example7,
    Example8,
    Example9,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 9] = [
        BenchmarkId::Example1,
        BenchmarkId::Example2,
        BenchmarkId::Example3,
        BenchmarkId::Example4,
        BenchmarkId::Example5,
        BenchmarkId::Example6,
        BenchmarkId::Example7,
        BenchmarkId::Example8,
        BenchmarkId::Example9,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkId::Example1 => "example1",
            BenchmarkId::Example2 => "example2",
            BenchmarkId::Example3 => "example3",
            BenchmarkId::Example4 => "example4",
            BenchmarkId::Example5 => "example5",
            BenchmarkId::Example6 => "example6",
            BenchmarkId::Example7 => "example7",
            BenchmarkId::Example8 => "example8",
            BenchmarkId::Example9 => "example9",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            BenchmarkId::Example1 => "nonlinear convex, d=2",
            BenchmarkId::Example2 => "parabolic/concave, two failure modes, d=2",
            BenchmarkId::Example3 => "quartic bimodal, d=2",
            BenchmarkId::Example4 => "four-branch series system, d=2",
            BenchmarkId::Example5 => "cantilever beam deflection, d=2",
            BenchmarkId::Example6 => "linear, Φ(-β) for any d",
            BenchmarkId::Example7 => "quadratic nonlinearity controlled by γ",
            BenchmarkId::Example8 => "highly nonlinear (2nd/4th/8th powers)",
            BenchmarkId::Example9 => "thirty-four story frame top displacement, d=102",
        }
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown benchmark `{s}`")))
    }
}

/// Scalar parameters; `None` means "use the benchmark's default".
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkParams {
    pub beta: Option<f64>,
    pub gamma: Option<usize>,
    pub delta: Option<usize>,
    pub lambda: Option<usize>,
    pub y0: Option<f64>,
    pub r: Option<f64>,
    pub kappa: Option<f64>,
    pub e: Option<f64>,
    pub dim: Option<usize>,
}

impl BenchmarkParams {
    /// Sets a parameter by name, as used by config keys and sweeps.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let as_index = |v: f64| -> Result<usize> {
            if v.fract() == 0.0 && v >= 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("`{name}` must be a non-negative integer, got {v}")))
            }
        };
        match name {
            "beta" => self.beta = Some(value),
            "gamma" => self.gamma = Some(as_index(value)?),
            "delta" => self.delta = Some(as_index(value)?),
            "lambda" => self.lambda = Some(as_index(value)?),
            "y0" => self.y0 = Some(value),
            "r" => self.r = Some(value),
            "kappa" => self.kappa = Some(value),
            "e" => self.e = Some(value),
            "dim" => self.dim = Some(as_index(value)?),
            _ => return Err(Error::Config(format!("unknown benchmark parameter `{name}`"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSource {
    PaperTable,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub probability: f64,
    pub source: ReferenceSource,
}

/// Per-benchmark sampler defaults (dispersion, trajectory length, burn-in
/// iterations, model-call budget, Subset Simulation level size).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkDefaults {
    pub sigma: f64,
    pub tau: f64,
    pub burnin: usize,
    pub budget: u64,
    pub sus_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub id: BenchmarkId,
    #[serde(default)]
    pub params: BenchmarkParams,
}

/// Fully resolved parameters of one benchmark instance.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Resolved {
    Convex,
    Parabolic { r: f64, kappa: f64, e: f64 },
    Quartic,
    FourBranch,
    Cantilever { y0: f64 },
    Linear { beta: f64, dim: usize },
    Quadratic { gamma: usize, dim: usize },
    HighlyNonlinear { y0: f64, gamma: usize, delta: usize, lambda: usize, dim: usize },
    Frame { y0: f64 },
}

impl BenchmarkSpec {
    pub fn new(id: BenchmarkId) -> Self {
        Self {
            id,
            params: BenchmarkParams::default(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Result<Self> {
        self.params.set(name, value)?;
        Ok(self)
    }

    fn resolve(&self) -> Result<Resolved> {
        let p = &self.params;
        let finite = |name: &str, v: f64| -> Result<f64> {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Config(format!("{}: `{name}` must be finite", self.id)))
            }
        };
        let resolved = match self.id {
            BenchmarkId::Example1 => Resolved::Convex,
            BenchmarkId::Example2 => Resolved::Parabolic {
                r: finite("r", p.r.unwrap_or(6.0))?,
                kappa: finite("kappa", p.kappa.unwrap_or(0.3))?,
                e: finite("e", p.e.unwrap_or(0.1))?,
            },
            BenchmarkId::Example3 => Resolved::Quartic,
            BenchmarkId::Example4 => Resolved::FourBranch,
            BenchmarkId::Example5 => Resolved::Cantilever {
                y0: finite("y0", p.y0.unwrap_or(4.2))?,
            },
            BenchmarkId::Example6 => Resolved::Linear {
                beta: finite("beta", p.beta.unwrap_or(4.0))?,
                dim: p.dim.unwrap_or(100),
            },
            BenchmarkId::Example7 => Resolved::Quadratic {
                gamma: p.gamma.unwrap_or(2),
                dim: p.dim.unwrap_or(100),
            },
            BenchmarkId::Example8 => Resolved::HighlyNonlinear {
                y0: finite("y0", p.y0.unwrap_or(2.4))?,
                gamma: p.gamma.unwrap_or(3),
                delta: p.delta.unwrap_or(6),
                lambda: p.lambda.unwrap_or(9),
                dim: p.dim.unwrap_or(100),
            },
            BenchmarkId::Example9 => Resolved::Frame {
                y0: finite("y0", p.y0.unwrap_or(0.21))?,
            },
        };
        let fixed_dim = matches!(
            resolved,
            Resolved::Convex
                | Resolved::Parabolic { .. }
                | Resolved::Quartic
                | Resolved::FourBranch
                | Resolved::Cantilever { .. }
                | Resolved::Frame { .. }
        );
        if fixed_dim && p.dim.is_some() {
            return Err(Error::Config(format!("{} has a fixed dimension", self.id)));
        }
        let used = |name: &str| -> bool {
            matches!(
                (self.id, name),
                (BenchmarkId::Example2, "r" | "kappa" | "e")
                    | (BenchmarkId::Example5 | BenchmarkId::Example9, "y0")
                    | (BenchmarkId::Example6, "beta" | "dim")
                    | (BenchmarkId::Example7, "gamma" | "dim")
                    | (BenchmarkId::Example8, "y0" | "gamma" | "delta" | "lambda" | "dim")
            )
        };
        let given = [
            ("beta", p.beta.is_some()),
            ("gamma", p.gamma.is_some()),
            ("delta", p.delta.is_some()),
            ("lambda", p.lambda.is_some()),
            ("y0", p.y0.is_some()),
            ("r", p.r.is_some()),
            ("kappa", p.kappa.is_some()),
            ("e", p.e.is_some()),
            ("dim", p.dim.is_some()),
        ];
        if let Some((name, _)) = given.iter().find(|(n, set)| *set && !used(n)) {
            return Err(Error::Config(format!(
                "{} does not take parameter `{name}`",
                self.id
            )));
        }
        match resolved {
            Resolved::Linear { dim: 0, .. } => {
                return Err(Error::Config("example6: dim must be positive".into()))
            }
            Resolved::Quadratic { gamma, dim } if gamma < 1 || gamma > dim => {
                return Err(Error::Config(format!(
                    "example7: gamma must lie in 1..={dim}, got {gamma}"
                )))
            }
            Resolved::HighlyNonlinear {
                gamma,
                delta,
                lambda,
                dim,
                ..
            } if dim < 7 || gamma > dim || delta > dim || lambda > dim => {
                return Err(Error::Config(format!(
                    "example8: need dim ≥ 7 and gamma, delta, lambda ≤ dim (dim={dim})"
                )))
            }
            _ => {}
        }
        Ok(resolved)
    }

    pub fn dim(&self) -> Result<usize> {
        Ok(match self.resolve()? {
            Resolved::Linear { dim, .. }
            | Resolved::Quadratic { dim, .. }
            | Resolved::HighlyNonlinear { dim, .. } => dim,
            Resolved::Frame { .. } => 102,
            _ => 2,
        })
    }

    /// Builds the counted model in standard normal space.
    pub fn build(&self) -> Result<LimitStateModel> {
        let evaluator: Arc<dyn LimitState> = match self.resolve()? {
            Resolved::Convex => Arc::new(Convex),
            Resolved::Parabolic { r, kappa, e } => Arc::new(Parabolic { r, kappa, e }),
            Resolved::Quartic => Arc::new(Quartic),
            Resolved::FourBranch => Arc::new(FourBranch),
            Resolved::Cantilever { y0 } => Arc::new(Cantilever { y0 }),
            Resolved::Linear { beta, dim } => Arc::new(Linear { beta, dim }),
            Resolved::Quadratic { gamma, dim } => Arc::new(Quadratic { gamma, dim }),
            Resolved::HighlyNonlinear {
                y0,
                gamma,
                delta,
                lambda,
                dim,
            } => Arc::new(HighlyNonlinear {
                y0,
                gamma,
                delta,
                lambda,
                dim,
            }),
            Resolved::Frame { y0 } => Arc::new(Frame { y0 }),
        };
        Ok(LimitStateModel::new(self.label(), evaluator))
    }

    /// Human-readable instance label, e.g. `example6(beta=4,dim=100)`.
    pub fn label(&self) -> String {
        let Ok(resolved) = self.resolve() else {
            return self.id.to_string();
        };
        let args = match resolved {
            Resolved::Parabolic { r, kappa, e } => format!("(r={r},kappa={kappa},e={e})"),
            Resolved::Cantilever { y0 } | Resolved::Frame { y0 } => format!("(y0={y0})"),
            Resolved::Linear { beta, dim } => format!("(beta={beta},dim={dim})"),
            Resolved::Quadratic { gamma, dim } => format!("(gamma={gamma},dim={dim})"),
            Resolved::HighlyNonlinear {
                y0,
                gamma,
                delta,
                lambda,
                dim,
            } => format!("(y0={y0},gamma={gamma},delta={delta},lambda={lambda},dim={dim})"),
            _ => String::new(),
        };
        format!("{}{args}", self.id)
    }

    /// Reference failure probability from the published tables, or the
    /// closed form where one exists. Unlisted parameterizations of
    /// table-only benchmarks have no reference.
    pub fn reference(&self) -> Result<Option<Reference>> {
        let table = |p: f64| {
            Some(Reference {
                probability: p,
                source: ReferenceSource::PaperTable,
            })
        };
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        Ok(match self.resolve()? {
            Resolved::Convex => table(4.73e-6),
            Resolved::Parabolic { r, kappa, e } => {
                (close(r, 6.0) && close(kappa, 0.3) && close(e, 0.1))
                    .then(|| table(3.95e-5))
                    .flatten()
            }
            Resolved::Quartic => table(5.90e-8),
            Resolved::FourBranch => table(2.20e-3),
            Resolved::Cantilever { y0 } => [(4.2, 1.01e-6), (4.5, 1.97e-8)]
                .iter()
                .find(|(y, _)| close(*y, y0))
                .and_then(|(_, p)| table(*p)),
            Resolved::Linear { beta, dim } => {
                let listed = [(4.0, 3.17e-5), (5.0, 2.87e-7), (6.0, 0.99e-9), (7.0, 1.28e-12)];
                match listed.iter().find(|(b, _)| close(*b, beta)) {
                    Some((_, p)) if dim == 100 => table(*p),
                    _ => Some(Reference {
                        probability: normal_cdf(-beta),
                        source: ReferenceSource::Analytic,
                    }),
                }
            }
            Resolved::Quadratic { gamma, dim: 100 } => {
                [(2, 4.73e-6), (5, 2.54e-6), (8, 1.57e-6), (10, 1.15e-6)]
                    .iter()
                    .find(|(g, _)| *g == gamma)
                    .and_then(|(_, p)| table(*p))
            }
            Resolved::HighlyNonlinear {
                y0,
                gamma: 3,
                delta: 6,
                lambda: 9,
                dim: 100,
            } => [(2.4, 1.30e-4), (3.0, 1.85e-5), (4.0, 3.50e-7)]
                .iter()
                .find(|(y, _)| close(*y, y0))
                .and_then(|(_, p)| table(*p)),
            Resolved::Frame { y0 } => [(0.21, 3.47e-4), (0.22, 2.48e-5), (0.23, 1.26e-6), (0.235, 2.56e-7)]
                .iter()
                .find(|(y, _)| close(*y, y0))
                .and_then(|(_, p)| table(*p)),
            _ => None,
        })
    }

    /// Sampler settings used for this benchmark in the published runs.
    pub fn defaults(&self) -> BenchmarkDefaults {
        let d = |sigma, tau, burnin, budget, sus_samples| BenchmarkDefaults {
            sigma,
            tau,
            burnin,
            budget,
            sus_samples,
        };
        let y0 = self.params.y0;
        match self.id {
            BenchmarkId::Example1 => d(0.4, 0.7, 100, 600, 1000),
            BenchmarkId::Example2 => d(0.7, 1.0, 200, 3150, 1000),
            BenchmarkId::Example3 => d(0.5, 0.7, 200, 4000, 1000),
            BenchmarkId::Example4 => d(0.8, 1.0, 200, 2000, 1000),
            BenchmarkId::Example5 => {
                let budget = if y0.unwrap_or(4.2) > 4.3 { 3500 } else { 2000 };
                d(0.2, 0.7, 200, budget, 1000)
            }
            BenchmarkId::Example6 => d(0.4, 0.7, 500, 6000, 1000),
            BenchmarkId::Example7 => d(0.4, 0.7, 500, 8000, 2000),
            BenchmarkId::Example8 => d(0.5, 0.7, 500, 7500, 2000),
            BenchmarkId::Example9 => d(0.4, 0.7, 500, 7000, 2000),
        }
    }
}

/// Builtin benchmarks plus problems registered at runtime.
#[derive(Default, Clone)]
pub struct Registry {
    user: BTreeMap<String, Arc<dyn LimitState>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, evaluator: Arc<dyn LimitState>) -> Result<()> {
        let name = name.into();
        if BenchmarkId::from_str(&name).is_ok() || self.user.contains_key(&name) {
            return Err(Error::Config(format!("problem `{name}` is already registered")));
        }
        self.user.insert(name, evaluator);
        Ok(())
    }

    pub fn user_problems(&self) -> impl Iterator<Item = &str> {
        self.user.keys().map(String::as_str)
    }

    /// Resolves a problem name with benchmark parameters into a fresh model.
    pub fn build(&self, name: &str, params: &BenchmarkParams) -> Result<LimitStateModel> {
        if let Some(eval) = self.user.get(name) {
            if *params != BenchmarkParams::default() {
                return Err(Error::Config(format!(
                    "user problem `{name}` takes no benchmark parameters"
                )));
            }
            return Ok(LimitStateModel::new(name, Arc::clone(eval)));
        }
        let id = BenchmarkId::from_str(name)?;
        BenchmarkSpec { id, params: *params }.build()
    }
}

// θ_a − Σ_{j=a+1}^{b} θ_j with 1-based a, b (empty sum when b ≤ a).
fn chain_difference(theta: &[f64], a: usize, b: usize) -> f64 {
    theta[a - 1] - theta[a..b.max(a)].iter().sum::<f64>()
}

fn add_chain_gradient(grad: &mut [f64], a: usize, b: usize, coeff: f64) {
    grad[a - 1] += coeff;
    for g in &mut grad[a..b.max(a)] {
        *g -= coeff;
    }
}

struct Convex;

impl LimitState for Convex {
    fn dim(&self) -> usize {
        2
    }

    fn value_and_gradient(&self, t: &[f64], grad: &mut [f64]) -> f64 {
        let diff = t[0] - t[1];
        grad[0] = -1.0 / SQRT_2 + 5.0 * diff;
        grad[1] = -1.0 / SQRT_2 - 5.0 * diff;
        4.0 - (t[0] + t[1]) / SQRT_2 + 2.5 * diff * diff
    }
}

struct Parabolic {
    r: f64,
    kappa: f64,
    e: f64,
}

impl LimitState for Parabolic {
    fn dim(&self) -> usize {
        2
    }

    fn value_and_gradient(&self, t: &[f64], grad: &mut [f64]) -> f64 {
        let shifted = t[0] - self.e;
        grad[0] = -2.0 * self.kappa * shifted;
        grad[1] = -1.0;
        self.r - t[1] - self.kappa * shifted * shifted
    }
}

struct Quartic;

impl LimitState for Quartic {
    fn dim(&self) -> usize {
        2
    }

    fn value_and_gradient(&self, t: &[f64], grad: &mut [f64]) -> f64 {
        let diff = t[0] - t[1];
        let slope = -5.0 * diff + 4.0 * diff.powi(3);
        grad[0] = -1.0 / SQRT_2 + slope;
        grad[1] = -1.0 / SQRT_2 - slope;
        6.5 - (t[0] + t[1]) / SQRT_2 - 2.5 * diff * diff + diff.powi(4)
    }
}

struct FourBranch;

impl LimitState for FourBranch {
    fn dim(&self) -> usize {
        2
    }

    fn value_and_gradient(&self, t: &[f64], grad: &mut [f64]) -> f64 {
        let diff = t[0] - t[1];
        let sum = (t[0] + t[1]) / SQRT_2;
        let bowl = 3.0 + 0.1 * diff * diff;
        // (value, ∂/∂θ1, ∂/∂θ2)
        let branches = [
            (bowl - sum, 0.2 * diff - 1.0 / SQRT_2, -0.2 * diff - 1.0 / SQRT_2),
            (bowl + sum, 0.2 * diff + 1.0 / SQRT_2, -0.2 * diff + 1.0 / SQRT_2),
            (7.0 / SQRT_2 + diff, 1.0, -1.0),
            (7.0 / SQRT_2 - diff, -1.0, 1.0),
        ];
        let (value, g0, g1) = branches
            .into_iter()
            .reduce(|best, b| if b.0 < best.0 { b } else { best })
            .expect("four branches");
        grad[0] = g0;
        grad[1] = g1;
        value
    }
}

struct Cantilever {
    y0: f64,
}

impl Cantilever {
    const E: f64 = 30e6;
    const L: f64 = 100.0;
    const W: f64 = 2.0;
    const T: f64 = 4.0;
    const MU_X: f64 = 500.0;
    const SD_X: f64 = 100.0;
    const MU_Y: f64 = 1000.0;
    const SD_Y: f64 = 100.0;
}

impl LimitState for Cantilever {
    fn dim(&self) -> usize {
        2
    }

    fn value_and_gradient(&self, t: &[f64], grad: &mut [f64]) -> f64 {
        let stiffness = 4.0 * Self::L.powi(3) / (Self::E * Self::W * Self::T);
        let px = Self::MU_X + t[0] * Self::SD_X;
        let py = Self::MU_Y + t[1] * Self::SD_Y;
        let a = py / (Self::T * Self::T);
        let b = px / (Self::W * Self::W);
        let radius = a.hypot(b);
        if radius > 0.0 {
            grad[0] = -stiffness * (b / radius) * Self::SD_X / (Self::W * Self::W);
            grad[1] = -stiffness * (a / radius) * Self::SD_Y / (Self::T * Self::T);
        } else {
            grad[0] = 0.0;
            grad[1] = 0.0;
        }
        self.y0 - stiffness * radius
    }
}

struct Linear {
    beta: f64,
    dim: usize,
}

impl LimitState for Linear {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_and_gradient(&self, t: &[f64], grad: &mut [f64]) -> f64 {
        let scale = 1.0 / (self.dim as f64).sqrt();
        grad.fill(-scale);
        self.beta - scale * t.iter().sum::<f64>()
    }
}

struct Quadratic {
    gamma: usize,
    dim: usize,
}

impl LimitState for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_and_gradient(&self, t: &[f64], grad: &mut [f64]) -> f64 {
        let scale = 1.0 / (self.dim as f64).sqrt();
        let q = chain_difference(t, 1, self.gamma);
        grad.fill(-scale);
        add_chain_gradient(grad, 1, self.gamma, 5.0 * q);
        4.0 - scale * t.iter().sum::<f64>() + 2.5 * q * q
    }
}

struct HighlyNonlinear {
    y0: f64,
    gamma: usize,
    delta: usize,
    lambda: usize,
    dim: usize,
}

impl LimitState for HighlyNonlinear {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_and_gradient(&self, t: &[f64], grad: &mut [f64]) -> f64 {
        let scale = 1.0 / (self.dim as f64).sqrt();
        let q2 = chain_difference(t, 1, self.gamma);
        let q4 = chain_difference(t, 4, self.delta);
        let q8 = chain_difference(t, 7, self.lambda);
        grad.fill(-scale);
        add_chain_gradient(grad, 1, self.gamma, 5.0 * q2);
        add_chain_gradient(grad, 4, self.delta, 4.0 * q4.powi(3));
        add_chain_gradient(grad, 7, self.lambda, 8.0 * q8.powi(7));
        self.y0 - scale * t.iter().sum::<f64>() + 2.5 * q2 * q2 + q4.powi(4) + q8.powi(8)
    }
}

/// Thirty-four story shear frame; θ[0..34] are the story loads, θ[34..102]
/// the column stiffnesses (two per story, bottom story first).
struct Frame {
    y0: f64,
}

impl Frame {
    const STORIES: usize = 34;
    const HEIGHT: f64 = 4.0;
    const LOAD_MEAN: f64 = 2.0; // kN
    const LOAD_SD: f64 = 0.8;
    const EI_MEAN: f64 = 20.0; // MN m²
    const EI_SD: f64 = 4.0;
    // kN m³ / (MN m²) -> m
    const UNITS: f64 = 1e-3;
}

impl LimitState for Frame {
    fn dim(&self) -> usize {
        3 * Self::STORIES
    }

    fn value_and_gradient(&self, t: &[f64], grad: &mut [f64]) -> f64 {
        let n = Self::STORIES;
        let h3 = Self::HEIGHT.powi(3) * Self::UNITS / 12.0;
        let loads: Vec<f64> = t[..n].iter().map(|v| Self::LOAD_MEAN + Self::LOAD_SD * v).collect();
        let ei = |k: usize| Self::EI_MEAN + Self::EI_SD * t[n + k];
        grad.fill(0.0);
        let mut shear = 0.0;
        let mut displacement = 0.0;
        // Walk from the top story down so the story shear accumulates.
        let mut compliance_above = 0.0;
        let mut compliance = vec![0.0; n];
        for story in (0..n).rev() {
            shear += loads[story];
            let stiffness = ei(2 * story) + ei(2 * story + 1);
            let drift = shear * h3 / stiffness;
            displacement += drift;
            let d_drift = -drift / stiffness * Self::EI_SD;
            grad[n + 2 * story] = d_drift;
            grad[n + 2 * story + 1] = d_drift;
            compliance[story] = h3 / stiffness;
        }
        // ∂u/∂F_j = Σ_{i ≤ j} H³/(12 D_i).
        for (j, c) in compliance.iter().enumerate() {
            compliance_above += c;
            grad[j] = compliance_above * Self::LOAD_SD;
        }
        for g in grad.iter_mut() {
            *g = -*g;
        }
        self.y0 - displacement
    }
}
