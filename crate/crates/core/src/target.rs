//! The approximate sampling target.
//!
//! The target weights the standard normal density by a scaled logistic CDF of
//! the normalized limit-state value:
//!
//! ```text
//! h̃(θ) = Ω · F(−g(θ)/g_c | μ_g, σ) · φ_d(θ)
//! F    = 1 / (1 + exp(u)),   u = (g(θ)/g_c + μ_g) / c,   c = (√3/π)·σ
//! Ω    = (1 + exp(μ_g/c)) / (4c)
//! ```
//!
//! so `ln h̃ = ln Ω − softplus(u) − (d/2)·ln 2π − ‖θ‖²/2`. Everything is kept
//! in log space; `u` routinely exceeds 700 deep inside the safe domain.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Evaluation, LimitStateModel};

const LOGISTIC_SCALE: f64 = 0.551_328_895_421_792_1; // √3/π
const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Starting offset of the annealed location parameter.
const MU_START_OFFSET: f64 = 1e-4;

/// `ln(1 + e^u)` without overflow.
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Normalizing constant for the limit-state value: `g(0)` when `g(0) > 8` or
/// `0 < g(0) < 1`, otherwise 1 (including an origin inside the failure domain).
pub fn compute_g_c(g_at_origin: f64) -> Result<f64> {
    if !g_at_origin.is_finite() {
        return Err(Error::InvalidInput(format!("g(0) = {g_at_origin} is not finite")));
    }
    Ok(if g_at_origin > 8.0 || (g_at_origin > 0.0 && g_at_origin < 1.0) {
        g_at_origin
    } else {
        1.0
    })
}

/// Logistic location placing percentile `p` on the limit-state surface.
pub fn mu_from_percentile(p: f64, sigma: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidInput(format!("percentile must lie in (0, 1), got {p}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    Ok(-LOGISTIC_SCALE * sigma * (p / (1.0 - p)).ln())
}

fn ln_omega(mu_g: f64, scale: f64) -> f64 {
    -(4.0 * scale).ln() + softplus(mu_g / scale)
}

/// Weight matching the logistic PDF and CDF at `g = 0`.
pub fn weight_omega(mu_g: f64, sigma: f64) -> f64 {
    ln_omega(mu_g, LOGISTIC_SCALE * sigma).exp().min(f64::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodParams {
    pub sigma: f64,
    pub mu_g: f64,
    pub g_c: f64,
    scale: f64,
    ln_omega: f64,
}

impl LikelihoodParams {
    pub fn new(sigma: f64, mu_g: f64, g_c: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
        }
        if !(g_c > 0.0 && g_c.is_finite()) {
            return Err(Error::InvalidInput(format!("g_c must be positive, got {g_c}")));
        }
        if !mu_g.is_finite() {
            return Err(Error::InvalidInput("mu_g must be finite".into()));
        }
        let scale = LOGISTIC_SCALE * sigma;
        Ok(Self {
            sigma,
            mu_g,
            g_c,
            scale,
            ln_omega: ln_omega(mu_g, scale),
        })
    }

    /// Logistic scale `c = (√3/π)·σ`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn omega(&self) -> f64 {
        self.ln_omega.exp().min(f64::MAX)
    }

    pub fn ln_omega(&self) -> f64 {
        self.ln_omega
    }

    fn argument(&self, g: f64) -> f64 {
        (g / self.g_c + self.mu_g) / self.scale
    }

    /// `ln ℓ(g) = ln Ω − softplus(u)`.
    pub fn log_likelihood(&self, g: f64) -> f64 {
        self.ln_omega - softplus(self.argument(g))
    }

    /// `d ln ℓ / dg`.
    pub fn log_likelihood_slope(&self, g: f64) -> f64 {
        -sigmoid(self.argument(g)) / (self.g_c * self.scale)
    }
}

/// Exponential burn-in schedule taking `σ` from 1 down to its final value and
/// `μ_g` from `10⁻⁴` up to its final value over `N_BI` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub sigma_0: f64,
    pub sigma_final: f64,
    pub mu_final: f64,
    pub mu_p50: f64,
    pub n_burnin: usize,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl AnnealSchedule {
    pub fn new(sigma_final: f64, mu_final: f64, n_burnin: usize) -> Result<Self> {
        if n_burnin < 2 {
            return Err(Error::Config(format!(
                "annealing needs at least 2 burn-in iterations, got {n_burnin}"
            )));
        }
        if !(sigma_final > 0.0 && sigma_final.is_finite()) || !mu_final.is_finite() {
            return Err(Error::Config("annealing endpoints must be finite, sigma positive".into()));
        }
        let sigma_0 = 1.0;
        let span = (n_burnin - 1) as f64;
        // A flat schedule is encoded as an infinite decay constant.
        let a2 = span / (sigma_0 / sigma_final).ln();
        let a1 = if a2.is_finite() { sigma_0 / (-1.0 / a2).exp() } else { sigma_0 };
        let mu_p50 = 0.0;
        let mu_t = mu_final + mu_p50;
        let start = MU_START_OFFSET.copysign(mu_t);
        let b2 = if mu_t == 0.0 { f64::INFINITY } else { span / (start / mu_t).ln() };
        let b1 = if b2.is_finite() { start / (-1.0 / b2).exp() } else { mu_t };
        Ok(Self {
            sigma_0,
            sigma_final,
            mu_final,
            mu_p50,
            n_burnin,
            a1,
            a2,
            b1,
            b2,
        })
    }

    /// `(σ_iter, μ_iter)` for a 1-based iteration counter; past the end of
    /// burn-in the final constants are returned.
    pub fn at(&self, iter: usize) -> (f64, f64) {
        if iter > self.n_burnin {
            return (self.sigma_final, self.mu_final);
        }
        let it = iter.max(1) as f64;
        let sigma = if self.a2.is_finite() {
            self.a1 * (-it / self.a2).exp()
        } else {
            self.sigma_final
        };
        let mu = if self.b2.is_finite() {
            self.b1 * (-it / self.b2).exp() + self.mu_p50
        } else {
            self.b1 + self.mu_p50
        };
        (sigma, mu)
    }
}

/// Cached model output attached to a point of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitStateCache {
    pub g: f64,
    pub grad_g: DVector<f64>,
    pub log_likelihood: f64,
}

/// A position with its log-density and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub theta: DVector<f64>,
    pub log_density: f64,
    pub grad: DVector<f64>,
    pub cache: Option<LimitStateCache>,
}

/// A differentiable log-density. One `evaluate` is one model call.
pub trait Target {
    fn dim(&self) -> usize;

    fn evaluate(&self, theta: DVector<f64>) -> Result<Point>;

    /// Recomputes log-density and gradient under the current parameters from
    /// the cached model output, without a model call.
    fn rescore(&self, _point: &mut Point) {}
}

#[derive(Debug, Clone)]
pub struct AstpaTarget {
    model: Arc<LimitStateModel>,
    params: LikelihoodParams,
}

impl AstpaTarget {
    pub fn new(model: Arc<LimitStateModel>, params: LikelihoodParams) -> Self {
        Self { model, params }
    }

    pub fn model(&self) -> &LimitStateModel {
        &self.model
    }

    pub fn params(&self) -> &LikelihoodParams {
        &self.params
    }

    pub fn set_params(&mut self, params: LikelihoodParams) {
        self.params = params;
    }

    /// Wraps an existing model evaluation, e.g. the `g(0)` call used for `g_c`.
    pub fn point_from(&self, theta: DVector<f64>, eval: Evaluation) -> Point {
        let mut point = Point {
            log_density: 0.0,
            grad: DVector::zeros(theta.len()),
            theta,
            cache: Some(LimitStateCache {
                g: eval.g,
                grad_g: eval.grad,
                log_likelihood: 0.0,
            }),
        };
        self.rescore(&mut point);
        point
    }

    /// `ln h̃(θ)` for a cached limit-state value.
    pub fn log_density_from(&self, theta: &DVector<f64>, g: f64) -> f64 {
        let d = theta.len() as f64;
        self.params.log_likelihood(g) - 0.5 * d * LN_2PI - 0.5 * theta.norm_squared()
    }
}

impl Target for AstpaTarget {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn evaluate(&self, theta: DVector<f64>) -> Result<Point> {
        let eval = self.model.evaluate(theta.as_slice())?;
        Ok(self.point_from(theta, eval))
    }

    fn rescore(&self, point: &mut Point) {
        let Some(cache) = point.cache.as_mut() else {
            return;
        };
        cache.log_likelihood = self.params.log_likelihood(cache.g);
        let d = point.theta.len() as f64;
        point.log_density =
            cache.log_likelihood - 0.5 * d * LN_2PI - 0.5 * point.theta.norm_squared();
        let slope = self.params.log_likelihood_slope(cache.g);
        point.grad = &cache.grad_g * slope - &point.theta;
    }
}

/// Gaussian log-density `−½ (θ−m)ᵀ P (θ−m)`, counting its evaluations.
#[derive(Debug)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    evaluations: AtomicU64,
}

impl GaussianTarget {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Self {
        Self {
            mean,
            precision,
            evaluations: AtomicU64::new(0),
        }
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim))
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn evaluate(&self, theta: DVector<f64>) -> Result<Point> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let diff = &theta - &self.mean;
        let grad = -(&self.precision * &diff);
        let log_density = 0.5 * diff.dot(&grad);
        Ok(Point {
            theta,
            log_density,
            grad,
            cache: None,
        })
    }
}
