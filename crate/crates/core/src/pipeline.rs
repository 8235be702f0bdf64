//! End-to-end estimation for one chain.

use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmc::{
    find_reasonable_epsilon, hmc_iteration, steps_for, tune_trajectory, DualAveraging, Mass, Transition,
};
use crate::iis::{inverse_importance_sampling, IisConfig, Normalizer, Phase, SampleRecord, SampleSet};
use crate::model::{BenchmarkSpec, LimitStateModel};
use crate::qnp::{finalize_mass, qnp_burnin_iteration, qnp_main_iteration, BfgsState, MassState};
use crate::rng::{seeded, split_seed, ChainRng};
use crate::target::{compute_g_c, mu_from_percentile, AnnealSchedule, AstpaTarget, LikelihoodParams, Point, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Hmc,
    Qnp,
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hmcmc" | "hmc" => Ok(Self::Hmc),
            "qnp-hmcmc" | "qnp" => Ok(Self::Qnp),
            other => Err(Error::Config(format!("unknown sampler `{other}`"))),
        }
    }
}

/// What the annealing counter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnealUnit {
    /// One tick per completed trajectory; `burnin` is an iteration count.
    Iteration,
    /// One tick per leapfrog step; `burnin` is a step count.
    LeapfrogStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AstpaConfig {
    pub sampler: SamplerKind,
    pub sigma: f64,
    pub percentile: f64,
    pub tau: f64,
    pub burnin: usize,
    /// Total model-call budget; the main phase stops once it is reached.
    pub budget: u64,
    pub target_accept: f64,
    pub k_max: usize,
    pub normalizer: Normalizer,
    pub thinning: Option<usize>,
    pub extra_burnin_cap: usize,
    pub anneal_unit: AnnealUnit,
    /// Floor on main-phase samples regardless of budget.
    pub min_main_samples: usize,
    /// ESJD candidates for τ; empty keeps `tau`.
    pub tau_candidates: Vec<f64>,
    pub pilot_iterations: usize,
    /// Length of the step-size check at the start of the main phase; 0
    /// skips it. See [`RETUNE_MARGIN`].
    pub retune_iterations: usize,
    pub start: Option<Vec<f64>>,
}

impl Default for AstpaConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerKind::Qnp,
            sigma: 0.4,
            percentile: 0.1,
            tau: 0.7,
            burnin: 100,
            budget: 1000,
            target_accept: 0.65,
            k_max: 5,
            normalizer: Normalizer::Auto,
            thinning: None,
            extra_burnin_cap: 50,
            anneal_unit: AnnealUnit::Iteration,
            min_main_samples: 50,
            tau_candidates: Vec::new(),
            pilot_iterations: 20,
            retune_iterations: 20,
            start: None,
        }
    }
}

impl AstpaConfig {
    /// Per-benchmark σ, τ, burn-in and budget.
    pub fn for_benchmark(spec: &BenchmarkSpec, sampler: SamplerKind) -> Result<Self> {
        let defaults = spec.defaults();
        Ok(Self {
            sampler,
            sigma: defaults.sigma,
            tau: defaults.tau,
            burnin: defaults.burnin,
            budget: defaults.budget,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.sigma) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(Error::Config(format!("percentile must lie in (0, 1), got {}", self.percentile)));
        }
        if !positive(self.tau) || self.tau_candidates.iter().any(|t| !positive(*t)) {
            return Err(Error::Config("trajectory lengths must be positive".into()));
        }
        if self.burnin < 2 {
            return Err(Error::Config(format!("burn-in needs at least 2 iterations, got {}", self.burnin)));
        }
        if !(0.6..=0.8).contains(&self.target_accept) {
            return Err(Error::Config(format!(
                "target acceptance must lie in [0.6, 0.8], got {}",
                self.target_accept
            )));
        }
        if self.k_max == 0 || self.thinning == Some(0) {
            return Err(Error::Config("k_max and thinning must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub p_hat: f64,
    pub c_h: f64,
    pub variance: f64,
    pub cov_analytic: Option<f64>,
    pub n_used: usize,
    pub n_failures: usize,
    pub thinning_lag: usize,
    pub components: usize,
    pub model_calls: u64,
    pub burnin_calls: u64,
    /// Model calls made while post-processing; always zero.
    pub iis_calls: u64,
    pub accept_rate: f64,
    pub burnin_accept_rate: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub divergences: usize,
    pub g_c: f64,
    pub mass_delta: f64,
    pub extra_burnin: usize,
    pub seed: u64,
    pub wall_ms: Option<f64>,
    pub warnings: Vec<String>,
}

enum Kernel {
    Hmc,
    Qnp(BfgsState),
}

fn burnin_step(
    kernel: &mut Kernel,
    target: &AstpaTarget,
    point: &Point,
    epsilon: f64,
    tau: f64,
    rng: &mut ChainRng,
) -> Result<Transition> {
    match kernel {
        Kernel::Hmc => hmc_iteration(target, point, epsilon, tau, Mass::Identity, rng),
        Kernel::Qnp(bfgs) => qnp_burnin_iteration(target, point, epsilon, tau, bfgs, rng),
    }
}

/// If the first main-phase iterations accept on average less than
/// `target_accept − RETUNE_MARGIN`, they are discarded and ε is re-adapted
/// against the final target and mass. Dual averaging during burn-in averages
/// over annealed targets that are much wider than the final one, which can
/// leave ε too large for it.
pub const RETUNE_MARGIN: f64 = 0.25;

fn main_step(
    target: &AstpaTarget,
    point: &Point,
    epsilon: f64,
    tau: f64,
    mass: Option<&MassState>,
    rng: &mut ChainRng,
) -> Result<Transition> {
    match mass {
        None => hmc_iteration(target, point, epsilon, tau, Mass::Identity, rng),
        Some(m) => qnp_main_iteration(target, point, epsilon, tau, m, rng),
    }
}

/// State handed from the adaptive burn-in to the fixed-parameter main phase.
struct Adapted {
    target: AstpaTarget,
    point: Point,
    epsilon: f64,
    tau: f64,
    mass: Option<MassState>,
    /// Main-phase transitions already run by the step-size check.
    head: Vec<Transition>,
    retuned: bool,
    /// Model calls before the first kept main-phase transition.
    adapt_calls: u64,
    g_c: f64,
    burnin_accept_rate: f64,
    divergences: usize,
    warnings: Vec<String>,
}

/// Annealed burn-in with dual averaging (and BFGS for QNp), followed by the
/// mass-matrix hand-off and optional ESJD choice of τ.
fn adapt(model: &Arc<LimitStateModel>, config: &AstpaConfig, rng: &mut ChainRng) -> Result<Adapted> {
    config.validate()?;
    let start_calls = model.calls();
    let d = model.dim();
    let mut warnings = Vec::new();
    let theta0 = match &config.start {
        Some(s) if s.len() != d => return Err(Error::Dimension { expected: d, got: s.len() }),
        Some(s) => DVector::from_vec(s.clone()),
        None => DVector::zeros(d),
    };
    let eval0 = model.evaluate(theta0.as_slice())?;
    if eval0.g <= 0.0 {
        warnings.push(format!("start point lies in the failure domain (g = {:e}); g_c = 1", eval0.g));
    }
    let g_c = compute_g_c(eval0.g)?;
    let mu_final = mu_from_percentile(config.percentile, config.sigma)?;
    let schedule = AnnealSchedule::new(config.sigma, mu_final, config.burnin)?;
    let (sigma1, mu1) = schedule.at(1);
    let mut target = AstpaTarget::new(Arc::clone(model), LikelihoodParams::new(sigma1, mu1, g_c)?);
    let mut point = target.point_from(theta0, eval0);

    let epsilon0 = find_reasonable_epsilon(&target, &point, Mass::Identity, rng)?;
    let mut adapt = DualAveraging::new(epsilon0, config.target_accept);
    let mut epsilon = epsilon0;
    let mut kernel = match config.sampler {
        SamplerKind::Hmc => Kernel::Hmc,
        SamplerKind::Qnp => Kernel::Qnp(BfgsState::identity(d)),
    };

    let mut tick = 1usize;
    let mut iterations = 0usize;
    let mut accepted = 0usize;
    let mut divergences = 0usize;
    while tick <= config.burnin {
        let (sigma, mu) = schedule.at(tick);
        target.set_params(LikelihoodParams::new(sigma, mu, g_c)?);
        target.rescore(&mut point);
        let t = burnin_step(&mut kernel, &target, &point, epsilon, config.tau, rng)?;
        iterations += 1;
        accepted += usize::from(t.accepted);
        divergences += usize::from(t.divergent);
        tick += match config.anneal_unit {
            AnnealUnit::Iteration => 1,
            AnnealUnit::LeapfrogStep => t.steps,
        };
        point = t.point;
        epsilon = adapt.update(t.accept_prob);
    }
    let epsilon = adapt.final_epsilon();
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Numerical(format!("step-size adaptation produced ε = {epsilon}")));
    }
    target.set_params(LikelihoodParams::new(config.sigma, mu_final, g_c)?);
    target.rescore(&mut point);

    let mass = match &mut kernel {
        Kernel::Hmc => None,
        Kernel::Qnp(bfgs) => {
            let m = finalize_mass(&target, &mut point, bfgs, epsilon, config.tau, config.extra_burnin_cap, rng)?;
            if m.delta > 0.0 {
                warnings.push(format!("mass matrix repaired with δ = {:e}", m.delta));
            }
            Some(m)
        }
    };
    let tau = if config.tau_candidates.is_empty() {
        config.tau
    } else {
        let mass_view = mass.as_ref().map_or(Mass::Identity, MassState::as_mass);
        tune_trajectory(&target, &point, &config.tau_candidates, config.pilot_iterations, epsilon, mass_view, rng)?
    };

    let mut epsilon = epsilon;
    let mut head = Vec::with_capacity(config.retune_iterations);
    let mut retuned = false;
    let mut adapt_calls = model.calls() - start_calls;
    if config.retune_iterations > 0 {
        let mut accept_sum = 0.0;
        for _ in 0..config.retune_iterations {
            let t = main_step(&target, &point, epsilon, tau, mass.as_ref(), rng)?;
            accept_sum += t.accept_prob;
            point = t.point.clone();
            head.push(t);
        }
        if accept_sum / (config.retune_iterations as f64) < config.target_accept - RETUNE_MARGIN {
            divergences += head.iter().filter(|t| t.divergent).count();
            head.clear();
            let mut retune = DualAveraging::new(epsilon, config.target_accept);
            for _ in 0..config.retune_iterations {
                let t = main_step(&target, &point, retune.current(), tau, mass.as_ref(), rng)?;
                divergences += usize::from(t.divergent);
                point = t.point;
                retune.update(t.accept_prob);
            }
            epsilon = retune.final_epsilon();
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(Error::Numerical(format!("step-size re-tuning produced ε = {epsilon}")));
            }
            retuned = true;
            adapt_calls = model.calls() - start_calls;
        }
    }
    Ok(Adapted {
        target,
        point,
        epsilon,
        tau,
        mass,
        head,
        retuned,
        adapt_calls,
        g_c,
        burnin_accept_rate: accepted as f64 / iterations.max(1) as f64,
        divergences,
        warnings,
    })
}

/// Runs annealed burn-in, the main phase up to the call budget, and inverse
/// importance sampling. The model's counter must start at zero.
pub fn estimate(model: Arc<LimitStateModel>, config: &AstpaConfig, seed: u64) -> Result<EstimateReport> {
    let started = Instant::now();
    let start_calls = model.calls();
    let mut rng = seeded(seed);
    let Adapted {
        target,
        mut point,
        epsilon,
        tau,
        mass,
        head,
        retuned,
        adapt_calls: burnin_calls,
        g_c,
        burnin_accept_rate,
        mut divergences,
        mut warnings,
    } = adapt(&model, config, &mut rng)?;
    if retuned {
        warnings.push(format!("main-phase acceptance was low at the burn-in step size; ε re-tuned to {epsilon:e}"));
    }

    let mut samples = SampleSet::new(model.dim(), Phase::Main);
    let mut main_accepted = 0usize;
    for t in head {
        main_accepted += usize::from(t.accepted);
        divergences += usize::from(t.divergent);
        samples.push(SampleRecord::from_point(&t.point)?);
    }
    while model.calls() - start_calls < config.budget || samples.len() < config.min_main_samples {
        let t = main_step(&target, &point, epsilon, tau, mass.as_ref(), &mut rng)?;
        main_accepted += usize::from(t.accepted);
        divergences += usize::from(t.divergent);
        point = t.point;
        samples.push(SampleRecord::from_point(&point)?);
    }

    let calls_before = model.calls();
    let iis = inverse_importance_sampling(
        &samples,
        IisConfig { k_max: config.k_max, normalizer: config.normalizer, thinning: config.thinning },
        split_seed(seed, u64::MAX),
    )?;
    let iis_calls = model.calls() - calls_before;
    if iis.n_failures == 0 {
        warnings.push("no main-phase sample reached the failure domain; estimate is zero".into());
    }
    if divergences > 0 {
        warnings.push(format!("{divergences} divergent trajectories rejected"));
    }

    Ok(EstimateReport {
        p_hat: iis.p_hat,
        c_h: iis.c_h,
        variance: iis.variance,
        cov_analytic: iis.cov_analytic,
        n_used: iis.n_used,
        n_failures: iis.n_failures,
        thinning_lag: iis.thinning_lag,
        components: iis.components,
        model_calls: model.calls() - start_calls,
        burnin_calls,
        iis_calls,
        accept_rate: main_accepted as f64 / samples.len().max(1) as f64,
        burnin_accept_rate,
        epsilon,
        tau,
        divergences,
        g_c,
        mass_delta: mass.as_ref().map_or(0.0, |m| m.delta),
        extra_burnin: mass.as_ref().map_or(0, |m| m.extra_iterations),
        seed,
        wall_ms: Some(started.elapsed().as_secs_f64() * 1e3),
        warnings,
    })
}

/// Outcome of the adaptive phase alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub epsilon: f64,
    pub tau: f64,
    pub steps_per_trajectory: usize,
    pub burnin_accept_rate: f64,
    pub burnin_calls: u64,
    pub divergences: usize,
    pub g_c: f64,
    /// Spectral condition number of the QNp mass matrix.
    pub mass_condition: Option<f64>,
    pub mass_delta: f64,
    /// Whether the main-phase step-size check re-adapted ε.
    pub retuned: bool,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Runs only the burn-in adaptation (and the ESJD pilot when candidates are
/// configured) and reports the parameters the main phase would use.
pub fn tune(model: Arc<LimitStateModel>, config: &AstpaConfig, seed: u64) -> Result<TuneReport> {
    let mut rng = seeded(seed);
    let a = adapt(&model, config, &mut rng)?;
    Ok(TuneReport {
        epsilon: a.epsilon,
        tau: a.tau,
        steps_per_trajectory: steps_for(a.tau, a.epsilon),
        burnin_accept_rate: a.burnin_accept_rate,
        burnin_calls: a.adapt_calls,
        divergences: a.divergences,
        g_c: a.g_c,
        mass_condition: a.mass.as_ref().map(MassState::condition_number),
        mass_delta: a.mass.as_ref().map_or(0.0, |m| m.delta),
        retuned: a.retuned,
        seed,
        warnings: a.warnings,
    })
}
