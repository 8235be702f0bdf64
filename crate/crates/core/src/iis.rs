//! Inverse importance sampling.
//!
//! Given samples `θ_i ~ h̃/C_h`, an importance density `Q` fitted to those
//! same samples yields `C_h`, and then `P̂_F = C_h · (1/N) Σ I_F(θ_i)/ℓ(θ_i)`.
//! No new model evaluations are made.
//!
//! Averaging `h̃/Q` over draws from `h` rather than `Q` converges to
//! `C_h·(1 + χ²(h‖Q))`, so in mixture dimensions the reciprocal identity
//! `E_h[Q/h̃] = 1/C_h` is used instead, with `Q` cross-fitted between chain
//! halves. In high dimensions a single Gaussian fitted to the very samples it
//! scores is far steadier, and the direct average is kept.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, gaussian_log_density, log_sum_exp};
use crate::rng::seeded;
use crate::target::Point;

/// Largest dimension for which a mixture is fitted instead of one Gaussian.
pub const GMM_MAX_DIM: usize = 10;
const EM_RESTARTS: usize = 3;
const EM_MAX_ITER: usize = 100;
const EM_TOL: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    BurnIn,
    Main,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub theta: DVector<f64>,
    pub g: f64,
    /// `ln ℓ(θ) = ln(Ω·F_cdf)`.
    pub log_likelihood: f64,
    /// `ln h̃(θ)`.
    pub log_target: f64,
    pub is_failure: bool,
}

impl SampleRecord {
    /// Builds a record from a point scored under the final target parameters.
    pub fn from_point(point: &Point) -> Result<Self> {
        let cache = point
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("sample carries no limit-state cache".into()))?;
        Ok(Self {
            theta: point.theta.clone(),
            g: cache.g,
            log_likelihood: cache.log_likelihood,
            log_target: point.log_density,
            is_failure: cache.g <= 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub dim: usize,
    pub phase: Phase,
    pub records: Vec<SampleRecord>,
}

impl SampleSet {
    pub fn new(dim: usize, phase: Phase) -> Self {
        Self { dim, phase, records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: SampleRecord) {
        self.records.push(record);
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.is_failure).count()
    }

    /// Positions with consecutive repeats (rejected moves) removed.
    /// First and second half of the chain.
    pub fn halves(&self) -> (SampleSet, SampleSet) {
        let mid = self.records.len() / 2;
        let part = |records: &[SampleRecord]| SampleSet { dim: self.dim, phase: self.phase, records: records.to_vec() };
        (part(&self.records[..mid]), part(&self.records[mid..]))
    }

    pub fn distinct_positions(&self) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = Vec::with_capacity(self.records.len());
        for r in &self.records {
            if out.last() != Some(&r.theta) {
                out.push(r.theta.clone());
            }
        }
        out
    }
}

/// Gaussian mixture density.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || means.len() != covariances.len() {
            return Err(Error::InvalidInput("mixture parts have mismatched lengths".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput("mixture weights must be non-negative".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        let factors = covariances
            .iter()
            .map(|c| {
                cholesky_lower(c)
                    .ok_or_else(|| Error::Numerical("mixture covariance is singular".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { weights, means, covariances, factors })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let terms: Vec<f64> = (0..self.components())
            .map(|k| self.weights[k].ln() + gaussian_log_density(x, &self.means[k], &self.factors[k]))
            .collect();
        log_sum_exp(terms.iter().copied())
    }

    /// Free parameters, for BIC.
    fn parameter_count(&self) -> usize {
        let d = self.dim();
        let k = self.components();
        k - 1 + k * d + k * d * (d + 1) / 2
    }
}

/// Points as rows of an `n × d` matrix.
fn as_rows(points: &[DVector<f64>]) -> DMatrix<f64> {
    let d = points[0].len();
    DMatrix::from_fn(points.len(), d, |i, j| points[i][j])
}

fn centered(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut diff = x.clone();
    for (j, mut col) in diff.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    diff
}

/// Weighted mean, scatter (normalized by the total weight) and total weight.
fn mean_and_scatter(x: &DMatrix<f64>, weights: Option<&DVector<f64>>) -> (DVector<f64>, DMatrix<f64>, f64) {
    let n = x.nrows();
    let ones = DVector::from_element(n, 1.0);
    let w = weights.unwrap_or(&ones);
    let total = w.sum();
    let mean = x.tr_mul(w) / total;
    let mut diff = centered(x, &mean);
    for (i, mut row) in diff.row_iter_mut().enumerate() {
        row *= w[i].sqrt();
    }
    let cov = diff.tr_mul(&diff) / total;
    (mean, cov, total)
}

/// `log N(x_i; mean, L Lᵀ)` for every row of `x`.
fn gaussian_log_densities(x: &DMatrix<f64>, mean: &DVector<f64>, factor: &DMatrix<f64>) -> DVector<f64> {
    let d = x.ncols() as f64;
    let z = factor
        .solve_lower_triangular(&centered(x, mean).transpose())
        .expect("triangular factor has a non-zero diagonal");
    let log_det: f64 = factor.diagonal().iter().map(|v| v.ln()).sum();
    let constant = -0.5 * d * LN_2PI - log_det;
    DVector::from_iterator(x.nrows(), z.column_iter().map(|c| constant - 0.5 * c.norm_squared()))
}

/// Diagonal regularization `1e-6·tr(Σ)/d` from the global sample covariance.
fn jitter_for(x: &DMatrix<f64>) -> f64 {
    let (_, cov, _) = mean_and_scatter(x, None);
    1e-6 * cov.trace() / cov.nrows() as f64
}

fn add_jitter(cov: &mut DMatrix<f64>, jitter: f64) {
    for i in 0..cov.nrows() {
        cov[(i, i)] += jitter;
    }
}

fn check_size(points: &[DVector<f64>], what: &str) -> Result<usize> {
    let d = points.first().map_or(0, |p| p.len());
    if points.len() < d + 2 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "{what} in {d} dimensions needs at least {} samples, got {}",
            d + 2,
            points.len()
        )));
    }
    Ok(d)
}

fn single_from_rows(x: &DMatrix<f64>, jitter: f64) -> Result<GmmModel> {
    let (mean, mut cov, _) = mean_and_scatter(x, None);
    add_jitter(&mut cov, jitter);
    GmmModel::new(vec![1.0], vec![mean], vec![cov])
}

/// Moment-matched single Gaussian.
pub fn fit_single_gaussian(points: &[DVector<f64>]) -> Result<GmmModel> {
    check_size(points, "a Gaussian fit")?;
    let x = as_rows(points);
    single_from_rows(&x, jitter_for(&x))
}

fn kmeans_pp<R: Rng>(x: &DMatrix<f64>, k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let n = x.nrows();
    let row = |i: usize| x.row(i).transpose();
    let mut centers = vec![row(rng.random_range(0..n))];
    let mut dist: Vec<f64> = (0..n).map(|i| (row(i) - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = row(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min((row(i) - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

fn em_fit<R: Rng>(x: &DMatrix<f64>, k: usize, jitter: f64, rng: &mut R) -> Option<(GmmModel, f64)> {
    let (n, d) = x.shape();
    let centers = kmeans_pp(x, k, rng);
    let mut resp = DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        let p = x.row(i).transpose();
        let nearest = (0..k)
            .min_by(|&a, &b| (&p - &centers[a]).norm_squared().total_cmp(&(&p - &centers[b]).norm_squared()))
            .unwrap_or(0);
        resp[(i, nearest)] = 1.0;
    }
    let mut model = None;
    let mut last_ll = f64::NEG_INFINITY;
    let mut log_terms = DMatrix::<f64>::zeros(n, k);
    for _ in 0..EM_MAX_ITER {
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for c in 0..k {
            let w = resp.column(c).into_owned();
            let (mean, mut cov, total) = mean_and_scatter(x, Some(&w));
            // A component supported by fewer points than a covariance needs has collapsed.
            if !(total > (d + 1) as f64) {
                return None;
            }
            add_jitter(&mut cov, jitter);
            weights.push(total / n as f64);
            means.push(mean);
            covs.push(cov);
        }
        let gmm = GmmModel::new(weights, means, covs).ok()?;
        for c in 0..k {
            let col = gaussian_log_densities(x, &gmm.means[c], &gmm.factors[c]);
            log_terms.set_column(c, &col.add_scalar(gmm.weights[c].ln()));
        }
        let mut ll = 0.0;
        for i in 0..n {
            let lse = log_sum_exp(log_terms.row(i).iter().copied());
            ll += lse;
            for c in 0..k {
                resp[(i, c)] = (log_terms[(i, c)] - lse).exp();
            }
        }
        if !ll.is_finite() {
            return None;
        }
        model = Some(gmm);
        let converged = (ll - last_ll).abs() <= EM_TOL * ll.abs().max(1.0);
        last_ll = ll;
        if converged {
            break;
        }
    }
    model.map(|m| (m, last_ll))
}

/// Mixture fitted by EM for `K = 1..=k_max`, choosing `K` by BIC. Each `K`
/// keeps the best of several k-means++-seeded restarts.
pub fn fit_gmm(points: &[DVector<f64>], k_max: usize, seed: u64) -> Result<GmmModel> {
    let d = check_size(points, "a mixture fit")?;
    let x = as_rows(points);
    let jitter = jitter_for(&x);
    if !(jitter > 0.0) {
        return Err(Error::Numerical("sample cloud is degenerate; covariance is singular".into()));
    }
    let single = single_from_rows(&x, jitter)?;
    let n = points.len() as f64;
    let bic = |m: &GmmModel, ll: f64| -2.0 * ll + m.parameter_count() as f64 * n.ln();
    let single_ll = gaussian_log_densities(&x, &single.means[0], &single.factors[0]).sum();
    let mut best = (bic(&single, single_ll), single);
    let mut rng = seeded(seed);
    for k in 2..=k_max.max(1) {
        if points.len() < k * (d + 2) {
            break;
        }
        let fit = (0..EM_RESTARTS)
            .filter_map(|_| em_fit(&x, k, jitter, &mut rng))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((model, ll)) = fit {
            let score = bic(&model, ll);
            if score < best.0 {
                best = (score, model);
            }
        }
    }
    Ok(best.1)
}

/// `C_h = (1/N) Σ h̃(θ_i)/Q(θ_i)`, summed in log space.
pub fn log_normalizing_constant(samples: &SampleSet, q: &GmmModel) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples for the normalizing constant".into()));
    }
    let mut ratios = Vec::with_capacity(samples.len());
    for (i, r) in samples.records.iter().enumerate() {
        let lq = q.log_density(&r.theta);
        if !lq.is_finite() {
            return Err(Error::Numerical(format!("importance density vanishes at sample {i}")));
        }
        ratios.push(r.log_target - lq);
    }
    Ok(log_sum_exp(ratios.iter().copied()) - (samples.len() as f64).ln())
}

fn reciprocal_terms<'a>(
    records: &'a [SampleRecord],
    q: &'a GmmModel,
) -> impl Iterator<Item = Result<f64>> + 'a {
    records.iter().enumerate().map(|(i, r)| {
        if r.log_target.is_finite() {
            Ok(q.log_density(&r.theta) - r.log_target)
        } else {
            Err(Error::Numerical(format!("target density vanishes at sample {i}")))
        }
    })
}

fn invert_mean(terms: Vec<f64>) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::InvalidInput("no samples for the normalizing constant".into()));
    }
    let n = terms.len() as f64;
    let inverse = log_sum_exp(terms) - n.ln();
    if !inverse.is_finite() {
        return Err(Error::Numerical("importance density vanishes at every sample".into()));
    }
    Ok(-inverse)
}

/// `ln C_h` from `1/C_h = (1/N) Σ Q(θ_i)/h̃(θ_i)`. Consistent when the θ_i
/// follow `h` and `Q` is a normalized density with lighter tails than `h`;
/// `Q` need not cover every mode of `h`.
pub fn log_normalizing_constant_reciprocal(samples: &SampleSet, q: &GmmModel) -> Result<f64> {
    invert_mean(reciprocal_terms(&samples.records, q).collect::<Result<_>>()?)
}

/// Reciprocal estimate with `Q` fitted on each half of the chain and
/// evaluated on the other, so no sample scores a density fitted to itself.
/// Returns `ln C_h` and the larger component count of the two fits.
pub fn log_normalizing_constant_cross_fit<F>(samples: &SampleSet, mut fit: F) -> Result<(f64, usize)>
where
    F: FnMut(&SampleSet) -> Result<GmmModel>,
{
    let (first, second) = samples.halves();
    let q_first = fit(&first)?;
    let q_second = fit(&second)?;
    let terms = reciprocal_terms(&second.records, &q_first)
        .chain(reciprocal_terms(&first.records, &q_second))
        .collect::<Result<Vec<_>>>()?;
    Ok((invert_mean(terms)?, q_first.components().max(q_second.components())))
}

pub fn normalizing_constant(samples: &SampleSet, q: &GmmModel) -> Result<f64> {
    log_normalizing_constant(samples, q).map(f64::exp)
}

/// `ln P̂_F` over all samples; `None` when no sample fails.
pub fn log_pf(samples: &SampleSet, log_c_h: f64) -> Option<f64> {
    let terms: Vec<f64> = samples
        .records
        .iter()
        .filter(|r| r.is_failure)
        .map(|r| -r.log_likelihood)
        .collect();
    if terms.is_empty() || samples.is_empty() {
        return None;
    }
    Some(log_c_h + log_sum_exp(terms.iter().copied()) - (samples.len() as f64).ln())
}

pub fn estimate_pf(samples: &SampleSet, c_h: f64) -> f64 {
    log_pf(samples, c_h.ln()).map_or(0.0, f64::exp)
}

/// Thinning lag for the variance estimate: 5 below 20 dimensions, else 50.
pub fn choose_thinning(dim: usize) -> usize {
    if dim < 20 {
        5
    } else {
        50
    }
}

/// Sample variance of `P̂_F` over every `lag`-th sample and the resulting
/// CoV. The CoV is `None` when `P̂_F = 0` or fewer than two samples remain.
pub fn cov_analytic(samples: &SampleSet, log_c_h: f64, log_p_hat: Option<f64>, lag: usize) -> (f64, Option<f64>) {
    let lag = lag.max(1);
    let n_s = samples.len() / lag;
    let Some(log_p) = log_p_hat else {
        return (0.0, None);
    };
    if n_s < 2 {
        return (0.0, None);
    }
    let sum_sq: f64 = (0..n_s)
        .map(|k| &samples.records[k * lag])
        .map(|r| {
            let rel = if r.is_failure { (log_c_h - r.log_likelihood - log_p).exp() } else { 0.0 };
            (rel - 1.0).powi(2)
        })
        .sum();
    let cov_sq = sum_sq / (n_s as f64 * (n_s as f64 - 1.0));
    let variance = cov_sq * (2.0 * log_p).exp();
    (variance, Some(cov_sq.sqrt()))
}

/// How `C_h` is estimated from the main-phase samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalizer {
    /// Reciprocal in mixture dimensions, direct above them.
    Auto,
    /// `(1/N) Σ h̃/Q` with `Q` fitted to all samples.
    Direct,
    /// Cross-fitted `1/C_h = (1/N) Σ Q/h̃`.
    Reciprocal,
}

impl FromStr for Normalizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "direct" => Ok(Self::Direct),
            "reciprocal" => Ok(Self::Reciprocal),
            other => Err(Error::Config(format!("unknown normalizer `{other}`"))),
        }
    }
}

impl Normalizer {
    pub fn resolve(self, dim: usize) -> Self {
        match self {
            Self::Auto if dim <= GMM_MAX_DIM => Self::Reciprocal,
            Self::Auto => Self::Direct,
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IisConfig {
    pub k_max: usize,
    pub normalizer: Normalizer,
    /// Overrides the dimension-based thinning lag.
    pub thinning: Option<usize>,
}

impl Default for IisConfig {
    fn default() -> Self {
        Self { k_max: 5, normalizer: Normalizer::Auto, thinning: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IisEstimate {
    pub p_hat: f64,
    pub log_p_hat: Option<f64>,
    pub c_h: f64,
    pub log_c_h: f64,
    pub variance: f64,
    pub cov_analytic: Option<f64>,
    pub n_used: usize,
    pub n_failures: usize,
    pub thinning_lag: usize,
    pub components: usize,
}

/// Fits `Q` to the main-phase samples and evaluates the estimator.
pub fn inverse_importance_sampling(samples: &SampleSet, config: IisConfig, seed: u64) -> Result<IisEstimate> {
    if samples.phase != Phase::Main {
        return Err(Error::InvalidInput("estimation uses main-phase samples only".into()));
    }
    let fit = |set: &SampleSet| -> Result<GmmModel> {
        let points = set.distinct_positions();
        if set.dim <= GMM_MAX_DIM && config.k_max > 1 {
            fit_gmm(&points, config.k_max, seed)
        } else {
            fit_single_gaussian(&points)
        }
    };
    let (log_c_h, components) = match config.normalizer.resolve(samples.dim) {
        Normalizer::Reciprocal => log_normalizing_constant_cross_fit(samples, fit)?,
        _ => {
            let q = fit(samples)?;
            (log_normalizing_constant(samples, &q)?, q.components())
        }
    };
    let log_p_hat = log_pf(samples, log_c_h);
    let lag = config.thinning.unwrap_or_else(|| choose_thinning(samples.dim));
    let (variance, cov) = cov_analytic(samples, log_c_h, log_p_hat, lag);
    Ok(IisEstimate {
        p_hat: log_p_hat.map_or(0.0, f64::exp),
        log_p_hat,
        c_h: log_c_h.exp(),
        log_c_h,
        variance,
        cov_analytic: cov,
        n_used: samples.len(),
        n_failures: samples.failures(),
        thinning_lag: lag,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm;
    use crate::rng::standard_normal_vector;
    use crate::target::{mu_from_percentile, LikelihoodParams};

    fn record(theta: Vec<f64>, g: f64, log_likelihood: f64, log_target: f64) -> SampleRecord {
        SampleRecord {
            theta: DVector::from_vec(theta),
            g,
            log_likelihood,
            log_target,
            is_failure: g <= 0.0,
        }
    }

    fn normal_cloud(n: usize, d: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = seeded(seed);
        (0..n).map(|_| standard_normal_vector(&mut rng, d)).collect()
    }

    #[test]
    fn thinning_rule() {
        assert_eq!(choose_thinning(2), 5);
        assert_eq!(choose_thinning(19), 5);
        assert_eq!(choose_thinning(20), 50);
        assert_eq!(choose_thinning(100), 50);
    }

    #[test]
    fn single_gaussian_moments() {
        let cloud = normal_cloud(100_000, 10, 1);
        let q = fit_single_gaussian(&cloud).unwrap();
        assert!(q.means[0].amax() < 0.02);
        assert!(spectral_norm(&(&q.covariances[0] - DMatrix::identity(10, 10))) < 0.05);
    }

    #[test]
    fn single_gaussian_minimum_size() {
        let cloud = normal_cloud(5, 3, 2);
        assert!(fit_single_gaussian(&cloud).is_ok());
        assert!(fit_single_gaussian(&cloud[..4]).is_err());
    }

    #[test]
    fn single_gaussian_spans_clusters() {
        let mut cloud = normal_cloud(500, 2, 3);
        for p in cloud.iter_mut().take(250) {
            p[0] += 10.0;
        }
        let q = fit_single_gaussian(&cloud).unwrap();
        assert!(q.covariances[0][(0, 0)] > 20.0);
        assert!(q.covariances[0][(1, 1)] < 2.0);
    }

    #[test]
    fn identical_samples_are_singular() {
        let cloud = vec![DVector::from_vec(vec![1.0, 2.0]); 50];
        assert!(fit_gmm(&cloud, 3, 1).is_err());
        let mut rng = seeded(4);
        let noisy: Vec<_> = cloud
            .iter()
            .map(|p| p + standard_normal_vector(&mut rng, 2) * 1e-6)
            .collect();
        let q = fit_gmm(&noisy, 3, 1).unwrap();
        assert_eq!(q.components(), 1);
        let mean = noisy.iter().fold(DVector::zeros(2), |acc, p| acc + p) / 50.0;
        assert!((&q.means[0] - mean).amax() < 1e-12);
    }

    #[test]
    fn two_component_recovery() {
        let mut cloud = normal_cloud(5000, 2, 5);
        for (i, p) in cloud.iter_mut().enumerate() {
            let shift = if i % 2 == 0 { 3.0 } else { -3.0 };
            p.add_scalar_mut(shift);
        }
        let q = fit_gmm(&cloud, 5, 7).unwrap();
        assert_eq!(q.components(), 2);
        assert!(q.means[0][0] * q.means[1][0] < 0.0);
        for m in &q.means {
            let target = if m[0] > 0.0 { 3.0 } else { -3.0 };
            assert!((m[0] - target).abs() < 0.1 && (m[1] - target).abs() < 0.1, "{m}");
        }
        for w in &q.weights {
            assert!((w - 0.5).abs() < 0.05);
        }
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_max_one_is_moment_matched() {
        let cloud = normal_cloud(300, 3, 6);
        assert_eq!(fit_gmm(&cloud, 1, 0).unwrap(), fit_single_gaussian(&cloud).unwrap());
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        let q = GmmModel::new(
            vec![0.3, 0.7],
            vec![DVector::from_vec(vec![-1.0, 0.5]), DVector::from_vec(vec![2.0, -1.0])],
            vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
                DMatrix::from_row_slice(2, 2, &[0.8, -0.2, -0.2, 1.2]),
            ],
        )
        .unwrap();
        let h = 0.05;
        let mut total = 0.0;
        for i in 0..400 {
            for j in 0..400 {
                let x = DVector::from_vec(vec![-10.0 + h * i as f64, -10.0 + h * j as f64]);
                total += q.log_density(&x).exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    fn set_from(records: Vec<SampleRecord>) -> SampleSet {
        let dim = records[0].theta.len();
        SampleSet { dim, phase: Phase::Main, records }
    }

    #[test]
    fn normalizing_constant_of_q_itself() {
        let q = fit_single_gaussian(&normal_cloud(50, 2, 8)).unwrap();
        let records = normal_cloud(200, 2, 9)
            .into_iter()
            .map(|t| {
                let lq = q.log_density(&t);
                record(t.as_slice().to_vec(), 1.0, 0.0, lq)
            })
            .collect();
        let set = set_from(records);
        assert!((normalizing_constant(&set, &q).unwrap() - 1.0).abs() < 1e-12);
        let mut doubled = set.clone();
        for r in &mut doubled.records {
            r.log_target += 2f64.ln();
        }
        assert!((normalizing_constant(&doubled, &q).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reciprocal_constant_of_q_itself() {
        let q = fit_single_gaussian(&normal_cloud(50, 2, 8)).unwrap();
        let mut set = set_from(
            normal_cloud(200, 2, 9)
                .into_iter()
                .map(|t| {
                    let lq = q.log_density(&t);
                    record(t.as_slice().to_vec(), 1.0, 0.0, lq + 2f64.ln())
                })
                .collect(),
        );
        assert!((log_normalizing_constant_reciprocal(&set, &q).unwrap().exp() - 2.0).abs() < 1e-12);
        let (log_c, k) = log_normalizing_constant_cross_fit(&set, |_| Ok(q.clone())).unwrap();
        assert!((log_c.exp() - 2.0).abs() < 1e-12);
        assert_eq!(k, 1);
        set.records[0].log_target = f64::NEG_INFINITY;
        assert!(log_normalizing_constant_reciprocal(&set, &q).is_err());
    }

    /// `h̃ = ℓ(2 − θ)·φ(θ)` with σ = 0.4 and μ_g from p = 0.1.
    fn logistic_weighted() -> (impl Fn(f64) -> (f64, f64), f64) {
        let params = LikelihoodParams::new(0.4, mu_from_percentile(0.1, 0.4).unwrap(), 1.0).unwrap();
        let h = move |t: f64| {
            let ll = params.log_likelihood(2.0 - t);
            (ll, ll - 0.5 * t * t - 0.5 * LN_2PI)
        };
        let nodes = 1_000_000;
        let step = 20.0 / nodes as f64;
        let quadrature = (0..=nodes)
            .map(|i| {
                let w = if i == 0 || i == nodes { 0.5 } else { 1.0 };
                w * h(-10.0 + i as f64 * step).1.exp()
            })
            .sum::<f64>()
            * step;
        (h, quadrature)
    }

    #[test]
    fn direct_constant_with_draws_from_q_matches_quadrature() {
        let (h, quadrature) = logistic_weighted();
        let mut rng = seeded(21);
        let pilot: Vec<DVector<f64>> = (0..2000)
            .map(|_| DVector::from_element(1, 1.5 + 0.6 * rng.sample::<f64, _>(rand_distr::StandardNormal)))
            .collect();
        let q = fit_single_gaussian(&pilot).unwrap();
        let draws: Vec<SampleRecord> = (0..200_000)
            .map(|_| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                let t = q.means[0][0] + q.covariances[0][(0, 0)].sqrt() * z;
                let (ll, lt) = h(t);
                record(vec![t], 2.0 - t, ll, lt)
            })
            .collect();
        let c = normalizing_constant(&set_from(draws), &q).unwrap();
        assert!((c / quadrature - 1.0).abs() < 0.01, "{c} vs {quadrature}");
    }

    #[test]
    fn reciprocal_constant_with_draws_from_h_matches_quadrature() {
        let (h, quadrature) = logistic_weighted();
        let params = LikelihoodParams::new(0.4, mu_from_percentile(0.1, 0.4).unwrap(), 1.0).unwrap();
        let mut rng = seeded(22);
        let mut draws = Vec::new();
        // Rejection from φ: ℓ/Ω ≤ 1.
        while draws.len() < 40_000 {
            let t: f64 = rng.sample(rand_distr::StandardNormal);
            let (ll, lt) = h(t);
            if rng.random::<f64>().ln() < ll - params.ln_omega() {
                draws.push(record(vec![t], 2.0 - t, ll, lt));
            }
        }
        let set = set_from(draws);
        let config = IisConfig { normalizer: Normalizer::Reciprocal, ..IisConfig::default() };
        let est = inverse_importance_sampling(&set, config, 5).unwrap();
        assert!((est.c_h / quadrature - 1.0).abs() < 0.02, "{} vs {quadrature}", est.c_h);
    }

    #[test]
    fn normalizer_choice() {
        assert_eq!("auto".parse::<Normalizer>().unwrap(), Normalizer::Auto);
        assert_eq!("direct".parse::<Normalizer>().unwrap(), Normalizer::Direct);
        assert!("harmonic".parse::<Normalizer>().is_err());
        assert_eq!(Normalizer::Auto.resolve(GMM_MAX_DIM), Normalizer::Reciprocal);
        assert_eq!(Normalizer::Auto.resolve(GMM_MAX_DIM + 1), Normalizer::Direct);
        assert_eq!(Normalizer::Direct.resolve(2), Normalizer::Direct);
    }

    #[test]
    fn unit_likelihood_all_failing() {
        let set = set_from((0..10).map(|i| record(vec![i as f64], -1.0, 0.0, 0.0)).collect());
        assert!((estimate_pf(&set, 0.37) - 0.37).abs() < 1e-15);
    }

    #[test]
    fn no_failures_give_zero() {
        let set = set_from((0..10).map(|i| record(vec![i as f64], 1.0, 0.0, 0.0)).collect());
        assert_eq!(estimate_pf(&set, 0.37), 0.0);
        assert_eq!(cov_analytic(&set, 0.0, None, 1), (0.0, None));
    }

    #[test]
    fn constant_terms_have_zero_variance() {
        let set = set_from((0..20).map(|i| record(vec![i as f64], -1.0, -2.0, 0.0)).collect());
        let log_c = 0.5f64.ln();
        let lp = log_pf(&set, log_c);
        let (var, cov) = cov_analytic(&set, log_c, lp, 1);
        assert!(var.abs() < 1e-30);
        assert!(cov.unwrap().abs() < 1e-12);
    }

    #[test]
    fn variance_matches_direct_formula() {
        let records: Vec<_> = (0..40)
            .map(|i| record(vec![i as f64], if i % 3 == 0 { -1.0 } else { 1.0 }, -(i as f64) * 0.1, 0.0))
            .collect();
        let set = set_from(records.clone());
        let c_h = 0.8f64;
        let lp = log_pf(&set, c_h.ln());
        let p = lp.unwrap().exp();
        for lag in [1, 5] {
            let n_s = 40 / lag;
            let terms: Vec<f64> = (0..n_s)
                .map(|k| &records[k * lag])
                .map(|r| if r.is_failure { c_h / r.log_likelihood.exp() } else { 0.0 })
                .collect();
            let direct: f64 =
                terms.iter().map(|t| (t - p).powi(2)).sum::<f64>() / (n_s as f64 * (n_s as f64 - 1.0));
            let (var, cov) = cov_analytic(&set, c_h.ln(), lp, lag);
            assert!((var - direct).abs() < 1e-12 * direct);
            assert!((cov.unwrap() - direct.sqrt() / p).abs() < 1e-12);
        }
    }

    #[test]
    fn likelihood_scale_invariance() {
        let records: Vec<_> = normal_cloud(400, 2, 10)
            .into_iter()
            .map(|t| {
                let g = 1.5 - t[0];
                let ll = -(1.0 + (g / 0.3).exp()).ln();
                let lt = ll - 0.5 * t.norm_squared();
                record(t.as_slice().to_vec(), g, ll, lt)
            })
            .collect();
        let set = set_from(records);
        let base = inverse_importance_sampling(&set, IisConfig::default(), 3).unwrap();
        let mut scaled = set.clone();
        let ln_k = 7.3;
        for r in &mut scaled.records {
            r.log_likelihood += ln_k;
            r.log_target += ln_k;
        }
        let other = inverse_importance_sampling(&scaled, IisConfig::default(), 3).unwrap();
        assert!((other.p_hat - base.p_hat).abs() <= 1e-12 * base.p_hat);
    }

    #[test]
    fn burn_in_samples_are_refused() {
        let mut set = set_from(vec![record(vec![0.0], 1.0, 0.0, 0.0)]);
        set.phase = Phase::BurnIn;
        assert!(inverse_importance_sampling(&set, IisConfig::default(), 0).is_err());
    }

    #[test]
    fn distinct_positions_drop_repeats() {
        let set = set_from(vec![
            record(vec![0.0], 1.0, 0.0, 0.0),
            record(vec![0.0], 1.0, 0.0, 0.0),
            record(vec![1.0], 1.0, 0.0, 0.0),
            record(vec![0.0], 1.0, 0.0, 0.0),
        ]);
        assert_eq!(set.distinct_positions().len(), 3);
    }
}
