//! Rare-event probability estimation in standard normal space.
//!
//! The estimator samples an approximate target built from a weighted logistic
//! CDF of the limit-state function, using either standard Hamiltonian MCMC or a
//! quasi-Newton mass-preconditioned variant, and recovers the failure
//! probability afterwards by inverse importance sampling over the samples that
//! were already drawn. A component-wise Metropolis-Hastings Subset Simulation
//! and a crude Monte Carlo oracle are included as baselines, together with a
//! replicated-experiment harness.
//!
//! Model evaluations are the cost unit everywhere: one call returns both
//! `g(θ)` and `∇g(θ)` and is counted by [`model::LimitStateModel`].

// `!(x > 0.0)` is used deliberately so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod hmc;
pub mod iis;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod qnp;
pub mod rng;
pub mod sus;
pub mod target;

pub use error::{Error, Result};
pub use model::{BenchmarkId, BenchmarkSpec, LimitStateModel};
pub use pipeline::{estimate, tune, AstpaConfig, SamplerKind};
