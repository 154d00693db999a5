//! The asymptotic-variance formula of the update estimator, as a plug-in
//! diagnostic. Used by tests to verify the optimality of the projection; the
//! estimation path itself works through bootstrap blocks.

use super::UpdateError;
use crate::numerics::solve_spd_strict;
use nalgebra::DMatrix;

/// Monte Carlo plug-in of
/// `E(psi psi'/pi) - E((1-pi)/pi psi phi') E((1-pi)/pi phi phi')^-1 E((1-pi)/pi phi psi')`
/// over equally weighted draws.
pub fn theorem1_variance(
    psi: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    pi: &[f64],
) -> Result<DMatrix<f64>, UpdateError> {
    let weights = vec![1.0 / psi.nrows() as f64; psi.nrows()];
    theorem1_variance_weighted(psi, phi, pi, &weights)
}

/// Same formula with explicit draw weights; with cell probabilities as
/// weights this is an exact enumeration over a finite law.
pub fn theorem1_variance_weighted(
    psi: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    pi: &[f64],
    weights: &[f64],
) -> Result<DMatrix<f64>, UpdateError> {
    let n = psi.nrows();
    if phi.nrows() != n || pi.len() != n || weights.len() != n {
        return Err(UpdateError::DimensionMismatch);
    }
    let p = psi.ncols();
    let q = phi.ncols();
    let mut first = DMatrix::<f64>::zeros(p, p);
    let mut cross = DMatrix::<f64>::zeros(p, q);
    let mut middle = DMatrix::<f64>::zeros(q, q);
    for i in 0..n {
        let w = weights[i];
        let inv_pi = 1.0 / pi[i];
        let odds = (1.0 - pi[i]) * inv_pi;
        for a in 0..p {
            for b in 0..p {
                first[(a, b)] += w * inv_pi * psi[(i, a)] * psi[(i, b)];
            }
            for b in 0..q {
                cross[(a, b)] += w * odds * psi[(i, a)] * phi[(i, b)];
            }
        }
        for a in 0..q {
            for b in 0..q {
                middle[(a, b)] += w * odds * phi[(i, a)] * phi[(i, b)];
            }
        }
    }
    let solved = solve_spd_strict(&middle, &cross.transpose())
        .map_err(|_| UpdateError::SingularMiddleBlock)?;
    Ok(first - cross * solved)
}
