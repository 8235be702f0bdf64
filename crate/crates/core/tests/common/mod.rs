//! Checks shared by the property suite and the acceptance runner. Each
//! returns the quantity the criterion bounds, so callers choose the inputs.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use astpa::harness::{replications_csv, run_experiment, RunConfig};
use astpa::hmc::{trajectory, Mass};
use astpa::iis::{fit_single_gaussian, log_normalizing_constant, log_pf, Phase, SampleRecord, SampleSet};
use astpa::model::{BenchmarkId, BenchmarkSpec, LimitStateModel, Registry};
use astpa::qnp::bfgs_update;
use astpa::target::{mu_from_percentile, AnnealSchedule, AstpaTarget, LikelihoodParams, Target};
use astpa::{estimate, AstpaConfig};

/// `g(θ) = β − θ` in one dimension.
pub fn linear_1d(beta: f64) -> LimitStateModel {
    LimitStateModel::from_fn("linear-1d", 1, move |theta, grad| {
        grad[0] = -1.0;
        beta - theta[0]
    })
}

/// Example 1 under the final target parameters (σ = 0.4, p = 0.1).
pub fn example1_target() -> AstpaTarget {
    let model = Arc::new(BenchmarkSpec::new(BenchmarkId::Example1).build().unwrap());
    let g_c = astpa::target::compute_g_c(model.evaluate(&[0.0, 0.0]).unwrap().g).unwrap();
    let mu = mu_from_percentile(0.1, 0.4).unwrap();
    AstpaTarget::new(model, LikelihoodParams::new(0.4, mu, g_c).unwrap())
}

/// Largest coordinate error after running `steps` leapfrog steps forward,
/// flipping the momentum and running back. `None` if the trajectory diverged.
pub fn reversibility_error(theta: [f64; 2], z: [f64; 2], epsilon: f64, steps: usize) -> Option<f64> {
    let target = example1_target();
    let start = target.evaluate(DVector::from_row_slice(&theta)).unwrap();
    let z0 = DVector::from_row_slice(&z);
    let (end, z1) = trajectory(&target, &start, z0.clone(), epsilon, steps, Mass::Identity).unwrap()?;
    let (back, z2) = trajectory(&target, &end, -z1, epsilon, steps, Mass::Identity).unwrap()?;
    let scale = 1.0 + start.theta.amax().max(z0.amax());
    Some(((back.theta - start.theta).amax().max((z2 + z0).amax())) / scale)
}

fn energy_error<T: Target>(target: &T, theta: &DVector<f64>, z: &DVector<f64>, epsilon: f64, time: f64) -> f64 {
    let start = target.evaluate(theta.clone()).unwrap();
    let steps = (time / epsilon).round() as usize;
    let (end, z1) = trajectory(target, &start, z.clone(), epsilon, steps, Mass::Identity)
        .unwrap()
        .expect("small steps do not diverge");
    let h = |log_density: f64, z: &DVector<f64>| -log_density + 0.5 * z.norm_squared();
    h(end.log_density, &z1) - h(start.log_density, z)
}

/// `|ΔH(ε)| / |ΔH(ε/2)|` over a fixed integration time on the Example 1
/// target; second-order integration gives 4.
pub fn energy_halving_ratio(theta: [f64; 2], z: [f64; 2], epsilon: f64) -> (f64, f64) {
    let target = example1_target();
    let (t, z) = (DVector::from_row_slice(&theta), DVector::from_row_slice(&z));
    let coarse = energy_error(&target, &t, &z, epsilon, 1.0);
    let fine = energy_error(&target, &t, &z, epsilon / 2.0, 1.0);
    (coarse.abs() / fine.abs(), coarse.abs())
}

/// `‖W⁺y − s‖ / ‖s‖` after one inverse-BFGS update from `W = LLᵀ + I`.
pub fn secant_residual(l: &DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> Option<f64> {
    let d = s.len();
    let w = l * l.transpose() + DMatrix::identity(d, d);
    let next = bfgs_update(&w, s, y)?;
    Some((next * y - s).norm() / s.norm())
}

/// `max |W⁺ − I|` for `W = I` and `s = y`.
pub fn fixed_point_error(s: &DVector<f64>) -> f64 {
    let d = s.len();
    let next = bfgs_update(&DMatrix::identity(d, d), s, s).expect("s = y has curvature");
    (next - DMatrix::identity(d, d)).amax()
}

/// Worst relative gap between the analytic gradient and central differences
/// (step 1e-6), measured against `max(1, ‖∇g‖∞)`.
pub fn gradient_fd_error(spec: &BenchmarkSpec, theta: &[f64]) -> f64 {
    let model = spec.build().unwrap();
    let grad = model.evaluate(theta).unwrap().grad;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let scale = grad.amax().max(1.0);
    for i in 0..theta.len() {
        let (mut plus, mut minus) = (theta.to_vec(), theta.to_vec());
        plus[i] += h;
        minus[i] -= h;
        let fd = (model.evaluate(&plus).unwrap().g - model.evaluate(&minus).unwrap().g) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / scale);
    }
    worst
}

/// Relative change of `P̂_F` when every likelihood value of a sample set is
/// multiplied by `k` (the target scales with it), with `Q` fitted once.
pub fn scale_invariance_error(points: &[f64], k: f64) -> f64 {
    let params = LikelihoodParams::new(0.4, mu_from_percentile(0.1, 0.4).unwrap(), 1.0).unwrap();
    let build = |shift: f64| {
        let mut set = SampleSet::new(1, Phase::Main);
        for &x in points {
            let g = 2.0 - x;
            let log_likelihood = params.log_likelihood(g) + shift;
            let log_target = log_likelihood - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * x * x;
            set.push(SampleRecord { theta: DVector::from_element(1, x), g, log_likelihood, log_target, is_failure: g <= 0.0 });
        }
        set
    };
    let (base, scaled) = (build(0.0), build(k.ln()));
    let q = fit_single_gaussian(&base.distinct_positions()).unwrap();
    let p = |set: &SampleSet| log_pf(set, log_normalizing_constant(set, &q).unwrap());
    match (p(&base), p(&scaled)) {
        (Some(a), Some(b)) => ((b - a).exp() - 1.0).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    }
}

/// Model calls made after the main phase, as seen by the report and by the
/// model's own counter.
pub fn post_sampling_calls(seed: u64) -> (u64, u64) {
    let model = Arc::new(BenchmarkSpec::new(BenchmarkId::Example1).build().unwrap());
    let config = AstpaConfig::for_benchmark(&BenchmarkSpec::new(BenchmarkId::Example1), astpa::SamplerKind::Qnp).unwrap();
    let report = estimate(Arc::clone(&model), &config, seed).unwrap();
    (report.iis_calls, model.calls() - report.model_calls)
}

/// Distance of the schedule's first and last burn-in values from
/// `(1, 10⁻⁴)` and `(σ, μ)`, relative to each target value.
pub fn anneal_endpoint_error(sigma: f64, p: f64, n: usize) -> f64 {
    let mu = mu_from_percentile(p, sigma).unwrap();
    let s = AnnealSchedule::new(sigma, mu, n).unwrap();
    let (s1, m1) = s.at(1);
    let (sn, mn) = s.at(n);
    let start_mu = 1e-4_f64.copysign(mu);
    [
        (s1 - 1.0).abs(),
        ((m1 - start_mu) / start_mu).abs(),
        ((sn - sigma) / sigma).abs(),
        ((mn - mu) / mu).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Per-replication CSV of a small experiment.
pub fn experiment_csv(config: &RunConfig) -> String {
    replications_csv(&run_experiment(config, &Registry::new()).unwrap())
}
