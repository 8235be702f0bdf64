//! Limit-state problems in standard normal space.
//!
//! A [`LimitStateModel`] wraps an immutable evaluator together with an atomic
//! call counter, so chains running on different threads may share one model
//! and every evaluation is still accounted for.

mod benchmarks;
mod oracle;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

pub use benchmarks::{
    BenchmarkDefaults, BenchmarkId, BenchmarkParams, BenchmarkSpec, Reference, ReferenceSource,
    Registry,
};
pub use oracle::{analytic_reference, crude_monte_carlo, normal_cdf, McEstimate};

/// A deterministic limit-state function `g: R^d -> R` with analytic gradient.
///
/// `g(θ) ≤ 0` marks failure.
pub trait LimitState: Send + Sync {
    fn dim(&self) -> usize;

    /// Returns `g(θ)` and writes `∇g(θ)` into `grad`.
    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64;
}

/// One model call: the limit-state value and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub g: f64,
    pub grad: DVector<f64>,
}

struct FnLimitState<F> {
    dim: usize,
    f: F,
}

impl<F> LimitState for FnLimitState<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(theta, grad)
    }
}

pub struct LimitStateModel {
    name: String,
    evaluator: Arc<dyn LimitState>,
    calls: AtomicU64,
}

impl LimitStateModel {
    pub fn new(name: impl Into<String>, evaluator: Arc<dyn LimitState>) -> Self {
        Self {
            name: name.into(),
            evaluator,
            calls: AtomicU64::new(0),
        }
    }

    /// Builds a model from a closure returning `g` and filling the gradient.
    pub fn from_fn<F>(name: impl Into<String>, dim: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, Arc::new(FnLimitState { dim, f }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.evaluator.dim()
    }

    /// Number of [`evaluate`](Self::evaluate) calls so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// A model sharing this evaluator with its own counter starting at zero.
    pub fn fresh(&self) -> Self {
        Self::new(self.name.clone(), Arc::clone(&self.evaluator))
    }

    /// Evaluates `g(θ)` and `∇g(θ)`, counting one model call.
    pub fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        let d = self.dim();
        if theta.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: theta.len(),
            });
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "θ[{i}] = {} is not finite",
                theta[i]
            )));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut grad = DVector::zeros(d);
        let g = self
            .evaluator
            .value_and_gradient(theta, grad.as_mut_slice());
        Ok(Evaluation { g, grad })
    }
}

impl fmt::Debug for LimitStateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LimitStateModel")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("calls", &self.calls())
            .finish()
    }
}
