//! Dense linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Lower Cholesky factor, or `None` when the matrix is not numerically SPD.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let factor = m.clone().cholesky()?.unpack();
    // nalgebra accepts tiny positive pivots; reject factors that cannot be inverted sanely.
    (0..factor.nrows())
        .all(|i| factor[(i, i)] > 0.0 && factor[(i, i)].is_finite())
        .then_some(factor)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Option<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.iter().copied().reduce(f64::min)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut inv = m.clone().cholesky()?.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor has a non-zero diagonal")
}

/// `log N(x; mean, L Lᵀ)` given the lower Cholesky factor `L`.
pub fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, chol: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let w = solve_lower(chol, &(x - mean));
    let log_det: f64 = (0..chol.nrows()).map(|i| chol[(i, i)].ln()).sum();
    -0.5 * d * (2.0 * std::f64::consts::PI).ln() - log_det - 0.5 * w.norm_squared()
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_log_density_matches_closed_form() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let chol = cholesky_lower(&cov).unwrap();
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let mean = DVector::from_vec(vec![0.1, 0.2]);
        let diff = &x - &mean;
        let inv = cov.clone().try_inverse().unwrap();
        let expected = -(2.0 * std::f64::consts::PI).ln()
            - 0.5 * cov.determinant().ln()
            - 0.5 * (diff.transpose() * inv * &diff)[(0, 0)];
        assert!((gaussian_log_density(&x, &mean, &chol) - expected).abs() < 1e-12);
    }

    #[test]
    fn indefinite_matrix_has_no_factor() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(cholesky_lower(&m).is_none());
        assert!((min_eigenvalue(&m).unwrap() + 0.5).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_is_shift_stable() {
        let v = log_sum_exp([1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp([f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
