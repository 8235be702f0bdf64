//! Quasi-Newton mass-preconditioned HMC.
//!
//! During burn-in the dynamics are preconditioned by a snapshot `B` of a BFGS
//! inverse-Hessian approximation `W`, which is updated after every leapfrog
//! step and rolled back when the proposal is rejected. After burn-in the
//! frozen `W` defines the mass matrix `M = W⁻¹` of an ordinary HMC chain.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::hmc::{hmc_iteration, jitter_tau, metropolis, steps_for, Mass, Transition};
use crate::linalg::{cholesky_lower, min_eigenvalue, spd_inverse, symmetrize};
use crate::rng::standard_normal_vector;
use crate::target::{Point, Target};

/// Smallest eigenvalue accepted as positive definite.
const SPD_THRESHOLD: f64 = 1e-10;
const MAX_REPAIR_DOUBLINGS: usize = 60;

/// Inverse BFGS update `W' = (I − ρsyᵀ) W (I − ρysᵀ) + ρssᵀ`, `ρ = 1/yᵀs`.
/// Returns `None` when the curvature `|yᵀs|` is negligible.
pub fn bfgs_update(w: &DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> Option<DMatrix<f64>> {
    let ys = y.dot(s);
    if !ys.is_finite() || ys.abs() <= 1e-12 * y.norm() * s.norm() || ys == 0.0 {
        return None;
    }
    let rho = 1.0 / ys;
    let wy = w * y;
    let ywy = y.dot(&wy);
    let mut next = w - (s * wy.transpose() + &wy * s.transpose()) * rho;
    next += s * s.transpose() * (rho * rho * ywy + rho);
    symmetrize(&mut next);
    next.iter().all(|v| v.is_finite()).then_some(next)
}

/// Default curvature floor `yᵀs ≥ c·sᵀs` for accepting a secant pair. The
/// standard normal prior alone contributes unit curvature, so far smaller
/// ratios come from kinks or saddles of the limit-state surface.
pub const MIN_CURVATURE: f64 = 1e-2;
/// Companion angle condition `yᵀs ≥ c·‖y‖‖s‖`; nearly orthogonal pairs
/// inflate `W` along directions the pair says nothing about.
pub const MIN_COSINE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsState {
    pub w: DMatrix<f64>,
    pub updates: usize,
    pub skipped: usize,
    /// When set, `W` is never updated (used to compare against plain HMC).
    pub frozen: bool,
    /// Pairs with `yᵀs < min_curvature·sᵀs` are skipped; `None` only
    /// skips numerically zero curvature, letting `W` become indefinite.
    pub min_curvature: Option<f64>,
}

impl BfgsState {
    pub fn identity(dim: usize) -> Self {
        Self {
            w: DMatrix::identity(dim, dim),
            updates: 0,
            skipped: 0,
            frozen: false,
            min_curvature: Some(MIN_CURVATURE),
        }
    }

    /// Applies one secant pair; returns whether `W` changed.
    pub fn update(&mut self, s: &DVector<f64>, y: &DVector<f64>) -> bool {
        if self.frozen {
            return false;
        }
        if let Some(c) = self.min_curvature {
            let ys = y.dot(s);
            if !(ys >= c * s.norm_squared() && ys >= MIN_COSINE * y.norm() * s.norm()) {
                self.skipped += 1;
                return false;
            }
        }
        match bfgs_update(&self.w, s, y) {
            Some(w) => {
                self.w = w;
                self.updates += 1;
                true
            }
            None => {
                self.skipped += 1;
                false
            }
        }
    }

    pub fn is_spd(&self) -> bool {
        is_spd(&self.w)
    }
}

fn is_spd(w: &DMatrix<f64>) -> bool {
    cholesky_lower(w).is_some() && min_eigenvalue(w).is_some_and(|l| l > SPD_THRESHOLD)
}

/// Shifts `W` by `δI` until it is safely positive definite.
pub fn ensure_spd(w: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let mut w = w.clone();
    symmetrize(&mut w);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("cannot repair a non-finite matrix".into()));
    }
    let lambda_min = min_eigenvalue(&w).unwrap_or(f64::NAN);
    if lambda_min > SPD_THRESHOLD && cholesky_lower(&w).is_some() {
        return Ok((w, 0.0));
    }
    let mut delta = if lambda_min.is_finite() { 1.01 * lambda_min.abs() + 1e-8 } else { 1e-8 };
    let identity = DMatrix::<f64>::identity(w.nrows(), w.ncols());
    for _ in 0..MAX_REPAIR_DOUBLINGS {
        let shifted = &w + &identity * delta;
        if cholesky_lower(&shifted).is_some() {
            return Ok((shifted, delta));
        }
        delta *= 2.0;
    }
    Err(Error::Numerical(format!(
        "positive-definite repair failed (λ_min = {lambda_min:e}, last δ = {delta:e})"
    )))
}

/// Burn-in leapfrog step with preconditioner `B` on both half-kicks and the drift.
pub fn leapfrog_burnin<T: Target + ?Sized>(
    target: &T,
    point: &Point,
    momentum: &DVector<f64>,
    epsilon: f64,
    b: &DMatrix<f64>,
) -> Result<Option<(Point, DVector<f64>)>> {
    let z_half = momentum + b * &point.grad * (0.5 * epsilon);
    let theta = &point.theta + b * &z_half * epsilon;
    if theta.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let next = target.evaluate(theta)?;
    let z = z_half + b * &next.grad * (0.5 * epsilon);
    if !next.log_density.is_finite() || z.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    Ok(Some((next, z)))
}

/// Secant pair for the inverse Hessian of the potential `−L`.
fn secant_pair(from: &Point, to: &Point) -> (DVector<f64>, DVector<f64>) {
    (&to.theta - &from.theta, &from.grad - &to.grad)
}

/// One burn-in iteration: identity-mass momentum, dynamics under the
/// iteration-start snapshot of `W`, per-step BFGS updates, rollback on rejection.
pub fn qnp_burnin_iteration<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &Point,
    epsilon: f64,
    tau: f64,
    bfgs: &mut BfgsState,
    rng: &mut R,
) -> Result<Transition> {
    let steps = steps_for(jitter_tau(tau, rng), epsilon);
    let z0 = standard_normal_vector(rng, current.theta.len());
    let h_start = 0.5 * z0.norm_squared() - current.log_density;
    let snapshot = bfgs.clone();
    let b = &snapshot.w;

    let mut point = current.clone();
    let mut z = z0;
    let mut diverged = false;
    for _ in 0..steps {
        match leapfrog_burnin(target, &point, &z, epsilon, b)? {
            Some((next, m)) => {
                let (s, y) = secant_pair(&point, &next);
                bfgs.update(&s, &y);
                point = next;
                z = m;
            }
            None => {
                diverged = true;
                break;
            }
        }
    }
    let h_end = (!diverged).then(|| 0.5 * z.norm_squared() - point.log_density);
    let (accepted, accept_prob, divergent) = metropolis(h_start, h_end, rng);
    if !accepted {
        *bfgs = snapshot;
        point = current.clone();
    }
    Ok(Transition { point, accepted, accept_prob, divergent, steps })
}

/// Frozen preconditioned mass: `W`, `M = W⁻¹` and the lower factor of `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassState {
    pub w: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub factor: DMatrix<f64>,
    pub delta: f64,
    pub extra_iterations: usize,
}

impl MassState {
    pub fn from_w(w: DMatrix<f64>, delta: f64) -> Result<Self> {
        let m = spd_inverse(&w)
            .ok_or_else(|| Error::Numerical("mass matrix inversion failed".into()))?;
        let factor = cholesky_lower(&m)
            .ok_or_else(|| Error::Numerical("mass matrix is not positive definite".into()))?;
        Ok(Self { w, m, factor, delta, extra_iterations: 0 })
    }

    pub fn as_mass(&self) -> Mass<'_> {
        Mass::Dense { inverse: &self.w, factor: &self.factor }
    }

    pub fn condition_number(&self) -> f64 {
        let eig = self.w.clone().symmetric_eigen().eigenvalues;
        eig.max() / eig.min()
    }
}

/// Turns the burn-in `W` into a mass matrix. A non-SPD `W` first gets up to
/// `extra_cap` more burn-in iterations, then a diagonal shift.
pub fn finalize_mass<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &mut Point,
    bfgs: &mut BfgsState,
    epsilon: f64,
    tau: f64,
    extra_cap: usize,
    rng: &mut R,
) -> Result<MassState> {
    let mut extra = 0;
    while !bfgs.is_spd() && extra < extra_cap {
        let t = qnp_burnin_iteration(target, current, epsilon, tau, bfgs, rng)?;
        *current = t.point;
        extra += 1;
    }
    let (w, delta) = ensure_spd(&bfgs.w)?;
    let mut state = MassState::from_w(w, delta)?;
    state.extra_iterations = extra;
    Ok(state)
}

/// Main-phase iteration with frozen mass `M = W⁻¹`.
pub fn qnp_main_iteration<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &Point,
    epsilon: f64,
    tau: f64,
    mass: &MassState,
    rng: &mut R,
) -> Result<Transition> {
    hmc_iteration(target, current, epsilon, tau, mass.as_mass(), rng)
}
