//! Reference oracles: closed forms and crude Monte Carlo.

use serde::{Deserialize, Serialize};

use super::{BenchmarkId, BenchmarkSpec, LimitStateModel};
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Execution};
use crate::rng;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// `Φ(−β)` for the linear benchmark; `None` for every other benchmark.
pub fn analytic_reference(spec: &BenchmarkSpec) -> Option<f64> {
    (spec.id == BenchmarkId::Example6).then(|| normal_cdf(-spec.params.beta.unwrap_or(4.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub p_hat: f64,
    pub n_samples: u64,
    pub failures: u64,
    /// Binomial coefficient of variation; `None` when no failure was observed.
    pub cov: Option<f64>,
    pub seed: u64,
}

const CHUNK: u64 = 1 << 16;

/// Crude Monte Carlo: the fraction of `n` i.i.d. standard normal draws with
/// `g ≤ 0`. Draws are generated in fixed-size chunks, one random stream per
/// chunk, so the estimate does not depend on `execution`.
pub fn crude_monte_carlo(
    model: &LimitStateModel,
    n: u64,
    seed: u64,
    execution: Execution,
) -> Result<McEstimate> {
    if n == 0 {
        return Err(Error::InvalidInput("crude Monte Carlo needs n ≥ 1".into()));
    }
    let d = model.dim();
    let chunks = n.div_ceil(CHUNK);
    let counts = map_indexed(chunks as usize, execution, |c| -> Result<u64> {
        let mut rng = rng::stream(seed, c as u64);
        let len = CHUNK.min(n - c as u64 * CHUNK);
        let mut failures = 0;
        for _ in 0..len {
            let theta = rng::standard_normal_vector(&mut rng, d);
            if model.evaluate(theta.as_slice())?.g <= 0.0 {
                failures += 1;
            }
        }
        Ok(failures)
    });
    let failures = counts.into_iter().sum::<Result<u64>>()?;
    let p_hat = failures as f64 / n as f64;
    let cov = (p_hat > 0.0).then(|| ((1.0 - p_hat) / (n as f64 * p_hat)).sqrt());
    Ok(McEstimate {
        p_hat,
        n_samples: n,
        failures,
        cov,
        seed,
    })
}
