//! Dense symmetric solves and bootstrap sample covariance.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is singular within the rank tolerance")]
    Singular,
    #[error("sample covariance needs at least two rows")]
    TooFewRows,
}

/// Solution of `A x = B` through a symmetric factorization.
#[derive(Debug, Clone)]
pub struct PsdSolution {
    pub x: DMatrix<f64>,
    /// Set when a diagonal ridge had to be applied to factor `A`.
    pub ridged: bool,
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<(), LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSymmetric);
    }
    let scale = a.amax().max(1.0);
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-8 * scale {
                return Err(LinalgError::NotSymmetric);
            }
        }
    }
    Ok(())
}

fn cholesky_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    // A factorization that slips through on a numerically singular matrix is
    // caught by the pivot ratio.
    let l = chol.l_dirty();
    let mut min_p = f64::INFINITY;
    let mut max_p: f64 = 0.0;
    for i in 0..a.nrows() {
        let p = l[(i, i)];
        min_p = min_p.min(p);
        max_p = max_p.max(p);
    }
    if !(min_p > 0.0) || min_p * min_p <= 1e-13 * max_p * max_p {
        return None;
    }
    Some(chol.solve(b))
}

/// Strict SPD solve: errors out instead of ridging on rank deficiency.
pub fn solve_spd_strict(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    check_symmetric(a)?;
    let sym = (a + a.transpose()) * 0.5;
    cholesky_solve(&sym, b).ok_or(LinalgError::Singular)
}

/// Solves `A x = B` for symmetric `A`, applying a diagonal ridge of
/// `1e-10 * tr(A) / dim` (grown geometrically if needed) when `A` is singular
/// within tolerance. The applied ridge is reported through `ridged`.
pub fn solve_psd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<PsdSolution, LinalgError> {
    check_symmetric(a)?;
    let sym = (a + a.transpose()) * 0.5;
    if let Some(x) = cholesky_solve(&sym, b) {
        return Ok(PsdSolution { x, ridged: false });
    }
    let d = a.nrows() as f64;
    let base = (a.trace().abs() / d).max(a.amax()).max(1e-300);
    let mut ridge = 1e-10 * base;
    for _ in 0..60 {
        let mut regularized = sym.clone();
        for i in 0..a.nrows() {
            regularized[(i, i)] += ridge;
        }
        if let Some(x) = cholesky_solve(&regularized, b) {
            return Ok(PsdSolution { x, ridged: true });
        }
        ridge *= 10.0;
    }
    Err(LinalgError::Singular)
}

/// Convenience wrapper for a vector right-hand side.
pub fn solve_psd_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, bool), LinalgError> {
    let sol = solve_psd(a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok((DVector::from_column_slice(sol.x.as_slice()), sol.ridged))
}

/// Sample covariance of the rows of `rows` with denominator `B - 1`.
pub fn sample_cov(rows: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let b = rows.nrows();
    if b < 2 {
        return Err(LinalgError::TooFewRows);
    }
    let d = rows.ncols();
    let mut means = DVector::zeros(d);
    for j in 0..d {
        means[j] = rows.column(j).sum() / b as f64;
    }
    let mut centered = rows.clone();
    for i in 0..b {
        for j in 0..d {
            centered[(i, j)] -= means[j];
        }
    }
    Ok(centered.transpose() * centered / (b as f64 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn identity_returns_rhs() {
        let a = DMatrix::identity(3, 3);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let sol = solve_psd(&a, &b).unwrap();
        assert!(!sol.ridged);
        assert!((sol.x - b).amax() < 1e-14);
    }

    #[test]
    fn diagonal_inverse() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let sol = solve_psd(&a, &DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(sol.x[(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.x[(1, 1)], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            solve_psd(&a, &DMatrix::identity(2, 2)),
            Err(LinalgError::NotSymmetric)
        ));
    }

    /// Inverse by cofactor expansion, the brute-force oracle for small cases.
    fn cofactor_inverse_3x3(a: &DMatrix<f64>) -> DMatrix<f64> {
        let m = |i: usize, j: usize| a[(i, j)];
        let det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
            - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
            + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
        let mut inv = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let mut sub = Vec::with_capacity(4);
                for r in 0..3 {
                    for c in 0..3 {
                        if r != i && c != j {
                            sub.push(m(r, c));
                        }
                    }
                }
                let minor = sub[0] * sub[3] - sub[1] * sub[2];
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                inv[(j, i)] = sign * minor / det;
            }
        }
        inv
    }

    #[test]
    fn random_spd_matches_cofactor_oracle() {
        let mut rng = crate::numerics::seeded_rng(5, 0);
        for _ in 0..20 {
            let raw = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let a = &raw * raw.transpose() + DMatrix::identity(3, 3) * 0.5;
            let inv = solve_psd(&a, &DMatrix::identity(3, 3)).unwrap();
            let oracle = cofactor_inverse_3x3(&a);
            assert!((inv.x - oracle).amax() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_takes_ridge_path() {
        // Rank-one matrix: strict solve refuses, ridged solve goes through.
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let a = &v * v.transpose();
        let b = DMatrix::identity(2, 2);
        assert!(matches!(
            solve_spd_strict(&a, &b),
            Err(LinalgError::Singular)
        ));
        let sol = solve_psd(&a, &b).unwrap();
        assert!(sol.ridged);
    }

    #[test]
    fn residual_is_small_on_well_conditioned_solves() {
        let mut rng = crate::numerics::seeded_rng(6, 0);
        for _ in 0..20 {
            let raw = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let a = &raw * raw.transpose() + DMatrix::identity(5, 5);
            let b = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
            let sol = solve_psd(&a, &b).unwrap();
            let resid = (&a * &sol.x - &b).amax();
            assert!(resid <= 1e-8 * b.amax().max(1e-12));
        }
    }

    #[test]
    fn sample_cov_hand_cases() {
        let rows = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let cov = sample_cov(&rows).unwrap();
        assert_abs_diff_eq!(cov[(0, 0)], 2.0, epsilon = 1e-14);

        let identical = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(sample_cov(&identical).unwrap().amax() < 1e-14);

        let cross = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let cov = sample_cov(&cross).unwrap();
        assert_abs_diff_eq!(cov[(0, 0)], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cov[(1, 1)], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cov[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn sample_cov_single_row_is_rejected() {
        let rows = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(matches!(sample_cov(&rows), Err(LinalgError::TooFewRows)));
    }

    #[test]
    fn sample_cov_is_psd() {
        let mut rng = crate::numerics::seeded_rng(8, 0);
        for _ in 0..10 {
            let rows = DMatrix::from_fn(12, 4, |_, _| rng.random_range(-2.0..2.0));
            let cov = sample_cov(&rows).unwrap();
            let eig = cov.clone().symmetric_eigen();
            let floor = -1e-10 * cov.trace().abs();
            assert!(eig.eigenvalues.iter().all(|&l| l >= floor));
        }
    }
}
