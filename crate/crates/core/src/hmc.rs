//! Standard Hamiltonian MCMC: leapfrog integration, Metropolis correction,
//! dual-averaging step-size adaptation and ESJD trajectory-length selection.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::standard_normal_vector;
use crate::target::{Point, Target};

/// Energy error beyond which a trajectory counts as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcConfig {
    pub epsilon: f64,
    pub tau: f64,
    pub target_accept: f64,
}

impl HmcConfig {
    pub fn new(epsilon: f64, tau: f64, target_accept: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {epsilon}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("trajectory length must be positive, got {tau}")));
        }
        if !(0.6..=0.8).contains(&target_accept) {
            return Err(Error::Config(format!(
                "target acceptance rate must lie in [0.6, 0.8], got {target_accept}"
            )));
        }
        Ok(Self { epsilon, tau, target_accept })
    }
}

/// Uniform draw in `[0.9τ, 1.1τ]`.
pub fn jitter_tau<R: Rng + ?Sized>(tau: f64, rng: &mut R) -> f64 {
    tau * (0.9 + 0.2 * rng.random::<f64>())
}

/// Safety cap on leapfrog steps per trajectory.
pub const MAX_STEPS: usize = 1000;

/// Leapfrog step count `max(1, round(τ/ε))`, capped at [`MAX_STEPS`].
pub fn steps_for(tau: f64, epsilon: f64) -> usize {
    let steps = (tau / epsilon).round();
    if steps >= MAX_STEPS as f64 {
        MAX_STEPS
    } else {
        (steps as usize).max(1)
    }
}

/// Kinetic-energy metric. `Dense` holds `M⁻¹` and the lower Cholesky factor of `M`.
#[derive(Debug, Clone, Copy)]
pub enum Mass<'a> {
    Identity,
    Dense {
        inverse: &'a DMatrix<f64>,
        factor: &'a DMatrix<f64>,
    },
}

impl Mass<'_> {
    /// `z ~ N(0, M)`.
    pub fn sample_momentum<R: Rng + ?Sized>(&self, rng: &mut R, dim: usize) -> DVector<f64> {
        let xi = standard_normal_vector(rng, dim);
        match self {
            Mass::Identity => xi,
            Mass::Dense { factor, .. } => *factor * xi,
        }
    }

    /// `M⁻¹ z`.
    pub fn velocity(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            Mass::Identity => z.clone(),
            Mass::Dense { inverse, .. } => *inverse * z,
        }
    }

    /// `½ zᵀ M⁻¹ z`.
    pub fn kinetic(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&self.velocity(z))
    }
}

/// One leapfrog step. Costs exactly one target evaluation unless the new
/// position is non-finite, in which case `None` signals divergence.
pub fn leapfrog<T: Target + ?Sized>(
    target: &T,
    point: &Point,
    momentum: &DVector<f64>,
    epsilon: f64,
    mass: Mass<'_>,
) -> Result<Option<(Point, DVector<f64>)>> {
    let z_half = momentum + &point.grad * (0.5 * epsilon);
    let theta = &point.theta + mass.velocity(&z_half) * epsilon;
    if theta.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let next = target.evaluate(theta)?;
    let z = z_half + &next.grad * (0.5 * epsilon);
    if !next.log_density.is_finite() || z.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    Ok(Some((next, z)))
}

/// `steps` leapfrog steps; `None` on divergence.
pub fn trajectory<T: Target + ?Sized>(
    target: &T,
    start: &Point,
    momentum: DVector<f64>,
    epsilon: f64,
    steps: usize,
    mass: Mass<'_>,
) -> Result<Option<(Point, DVector<f64>)>> {
    let mut point = start.clone();
    let mut z = momentum;
    for _ in 0..steps {
        match leapfrog(target, &point, &z, epsilon, mass)? {
            Some((p, m)) => {
                point = p;
                z = m;
            }
            None => return Ok(None),
        }
    }
    Ok(Some((point, z)))
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub point: Point,
    pub accepted: bool,
    pub accept_prob: f64,
    pub divergent: bool,
    pub steps: usize,
}

/// Metropolis decision from the energy change; draws exactly one uniform.
pub(crate) fn metropolis<R: Rng + ?Sized>(
    h_start: f64,
    h_end: Option<f64>,
    rng: &mut R,
) -> (bool, f64, bool) {
    let u: f64 = rng.random();
    let Some(h_end) = h_end else {
        return (false, 0.0, true);
    };
    let delta = h_end - h_start;
    if !delta.is_finite() || delta.abs() > DIVERGENCE_THRESHOLD {
        return (false, 0.0, true);
    }
    let accept_prob = (-delta).exp().min(1.0);
    (u < accept_prob, accept_prob, false)
}

/// One HMC iteration at fixed target parameters and step size.
pub fn hmc_iteration<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &Point,
    epsilon: f64,
    tau: f64,
    mass: Mass<'_>,
    rng: &mut R,
) -> Result<Transition> {
    let steps = steps_for(jitter_tau(tau, rng), epsilon);
    let z0 = mass.sample_momentum(rng, current.theta.len());
    let h_start = mass.kinetic(&z0) - current.log_density;
    let proposal = trajectory(target, current, z0, epsilon, steps, mass)?;
    let h_end = proposal.as_ref().map(|(p, z)| mass.kinetic(z) - p.log_density);
    let (accepted, accept_prob, divergent) = metropolis(h_start, h_end, rng);
    let point = match proposal {
        Some((p, _)) if accepted => p,
        _ => current.clone(),
    };
    Ok(Transition { point, accepted, accept_prob, divergent, steps })
}

/// Dual averaging of `ln ε` towards a target acceptance probability.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAveraging {
    pub mu: f64,
    pub target_accept: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
    log_epsilon: f64,
    log_epsilon_bar: f64,
    h_bar: f64,
    count: u64,
}

impl DualAveraging {
    pub fn new(initial_epsilon: f64, target_accept: f64) -> Self {
        Self {
            mu: (10.0 * initial_epsilon).ln(),
            target_accept,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            log_epsilon: initial_epsilon.ln(),
            log_epsilon_bar: 0.0,
            h_bar: 0.0,
            count: 0,
        }
    }

    /// Feeds one acceptance probability and returns the next step size.
    pub fn update(&mut self, accept_prob: f64) -> f64 {
        let accept_prob = if accept_prob.is_finite() { accept_prob.clamp(0.0, 1.0) } else { 0.0 };
        self.count += 1;
        let m = self.count as f64;
        let eta = 1.0 / (m + self.t0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target_accept - accept_prob);
        self.log_epsilon = self.mu - m.sqrt() / self.gamma * self.h_bar;
        let w = m.powf(-self.kappa);
        self.log_epsilon_bar = w * self.log_epsilon + (1.0 - w) * self.log_epsilon_bar;
        self.log_epsilon.exp()
    }

    pub fn current(&self) -> f64 {
        self.log_epsilon.exp()
    }

    /// The averaged step size used once adaptation stops.
    pub fn final_epsilon(&self) -> f64 {
        if self.count == 0 {
            self.current()
        } else {
            self.log_epsilon_bar.exp()
        }
    }

    pub fn iterations(&self) -> u64 {
        self.count
    }
}

/// Doubling/halving search for a step size whose single-step acceptance
/// probability crosses one half. Each trial costs one target evaluation.
pub fn find_reasonable_epsilon<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    start: &Point,
    mass: Mass<'_>,
    rng: &mut R,
) -> Result<f64> {
    const MAX_TRIALS: usize = 60;
    let mut epsilon = 1.0;
    let z0 = mass.sample_momentum(rng, start.theta.len());
    let h0 = mass.kinetic(&z0) - start.log_density;
    let log_ratio = |eps: f64| -> Result<f64> {
        Ok(match leapfrog(target, start, &z0, eps, mass)? {
            Some((p, z)) => {
                let r = h0 - (mass.kinetic(&z) - p.log_density);
                if r.is_finite() { r } else { f64::NEG_INFINITY }
            }
            None => f64::NEG_INFINITY,
        })
    };
    let half = 0.5f64.ln();
    let first = log_ratio(epsilon)?;
    let direction = if first > half { 1.0 } else { -1.0 };
    let mut current = first;
    for _ in 0..MAX_TRIALS {
        if direction * current <= direction * half {
            break;
        }
        let next = epsilon * 2f64.powf(direction);
        if !(1e-10..=1e3).contains(&next) {
            break;
        }
        epsilon = next;
        current = log_ratio(epsilon)?;
    }
    Ok(epsilon)
}

/// Picks the trajectory length maximizing `τ^{-1/2}·E‖Δθ‖²` over pilot runs.
/// Each pilot iteration uses step `min(ε, τ_m)` so short candidates stay short.
pub fn tune_trajectory<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    start: &Point,
    candidates: &[f64],
    pilot_iters: usize,
    epsilon: f64,
    mass: Mass<'_>,
    rng: &mut R,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Tuning("no trajectory-length candidates".into()));
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for &tau in &sorted {
        let mut point = start.clone();
        let mut total = 0.0;
        let mut healthy = 0usize;
        for _ in 0..pilot_iters {
            let tau_m = jitter_tau(tau, rng);
            let eps = epsilon.min(tau_m);
            let steps = steps_for(tau_m, eps);
            let z0 = mass.sample_momentum(rng, point.theta.len());
            let h_start = mass.kinetic(&z0) - point.log_density;
            let proposal = trajectory(target, &point, z0, eps, steps, mass)?;
            let h_end = proposal.as_ref().map(|(p, z)| mass.kinetic(z) - p.log_density);
            let (accepted, _, divergent) = metropolis(h_start, h_end, rng);
            if !divergent {
                healthy += 1;
            }
            if let (true, Some((p, _))) = (accepted, proposal) {
                total += (&p.theta - &point.theta).norm_squared();
                point = p;
            }
        }
        if healthy == 0 {
            continue;
        }
        let esjd = total / pilot_iters.max(1) as f64 / tau.sqrt();
        if best.is_none_or(|(_, b)| esjd > b) {
            best = Some((tau, esjd));
        }
    }
    best.map(|(tau, _)| tau)
        .ok_or_else(|| Error::Tuning("every trajectory-length candidate diverged".into()))
}
