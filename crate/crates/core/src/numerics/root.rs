//! Root finding for small dense nonlinear systems.
//!
//! Two methods are provided: Newton with a forward-difference Jacobian and
//! Broyden's rank-one secant update. The estimating equations solved here are
//! smooth and low-dimensional, so a damped Newton step with a handful of
//! backtracking halvings is enough; Broyden serves as the fallback when the
//! finite-difference Jacobian comes out singular.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Which iteration to run inside [`solve_root`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootMethod {
    /// Newton iteration with forward-difference Jacobian.
    NewtonFd,
    /// Broyden's method: forward-difference Jacobian at the start, rank-one
    /// secant updates afterwards.
    Broyden,
}

/// Tolerances and iteration caps for [`solve_root`].
#[derive(Debug, Clone, Copy)]
pub struct RootConfig {
    /// Convergence threshold on the residual sup-norm.
    pub tol: f64,
    /// Maximum number of iterations.
    pub max_iter: usize,
    pub method: RootMethod,
}

impl Default for RootConfig {
    fn default() -> Self {
        RootConfig {
            tol: 1e-8,
            max_iter: 100,
            method: RootMethod::NewtonFd,
        }
    }
}

#[derive(Debug, Error)]
pub enum RootError {
    #[error("root solver did not converge within the iteration cap (residual {residual:.3e})")]
    NonConvergence { last: DVector<f64>, residual: f64 },
    #[error("Jacobian is singular at the current iterate")]
    SingularJacobian,
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn fd_jacobian<F>(f: &mut F, x: &DVector<f64>, fx: &DVector<f64>) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(fx.len(), n);
    let mut xh = x.clone();
    for j in 0..n {
        let h = f64::EPSILON.sqrt() * x[j].abs().max(1.0);
        xh[j] = x[j] + h;
        let fh = f(&xh);
        xh[j] = x[j];
        for i in 0..fx.len() {
            jac[(i, j)] = (fh[i] - fx[i]) / h;
        }
    }
    jac
}

fn solve_step(jac: &DMatrix<f64>, fx: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = jac.clone().lu();
    let step = lu.solve(&(-fx))?;
    if step.iter().all(|v| v.is_finite()) {
        Some(step)
    } else {
        None
    }
}

/// Solves `f(x) = 0` starting from `x0`.
///
/// Returns `x` with `sup-norm of f(x) <= cfg.tol`. Steps that increase the
/// residual are halved up to eight times; the best trial point is accepted
/// either way so the iteration can cross flat regions.
pub fn solve_root<F>(
    mut f: F,
    x0: &DVector<f64>,
    cfg: &RootConfig,
) -> Result<DVector<f64>, RootError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut x = x0.clone();
    let mut fx = f(&x);
    assert_eq!(fx.len(), x.len(), "system must be square");
    let mut res = sup_norm(&fx);
    if !res.is_finite() {
        return Err(RootError::NonConvergence {
            last: x,
            residual: res,
        });
    }
    if res <= cfg.tol {
        return Ok(x);
    }

    let mut jac = fd_jacobian(&mut f, &x, &fx);
    for _ in 0..cfg.max_iter {
        let step = solve_step(&jac, &fx).ok_or(RootError::SingularJacobian)?;

        // Backtracking: halve until the residual stops growing, then accept
        // the best candidate seen.
        let mut scale = 1.0;
        let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
        for _ in 0..8 {
            let xt = &x + &step * scale;
            let ft = f(&xt);
            let rt = sup_norm(&ft);
            if rt.is_finite() && best.as_ref().is_none_or(|(_, _, rb)| rt < *rb) {
                best = Some((xt, ft, rt));
            }
            if rt.is_finite() && rt < res * (1.0 - 1e-4) {
                break;
            }
            scale *= 0.5;
        }
        let Some((xt, ft, rt)) = best else {
            return Err(RootError::NonConvergence {
                last: x,
                residual: res,
            });
        };

        match cfg.method {
            RootMethod::NewtonFd => {
                x = xt;
                fx = ft;
                res = rt;
                if res <= cfg.tol {
                    return Ok(x);
                }
                jac = fd_jacobian(&mut f, &x, &fx);
            }
            RootMethod::Broyden => {
                let dx = &xt - &x;
                let df = &ft - &fx;
                let denom = dx.dot(&dx);
                if denom > 0.0 {
                    let corr = (&df - &jac * &dx) * (1.0 / denom);
                    jac += corr * dx.transpose();
                }
                x = xt;
                fx = ft;
                res = rt;
                if res <= cfg.tol {
                    return Ok(x);
                }
            }
        }
    }
    Err(RootError::NonConvergence {
        last: x,
        residual: res,
    })
}

/// Newton first, Broyden retry on a singular Jacobian.
pub fn solve_root_robust<F>(
    mut f: F,
    x0: &DVector<f64>,
    cfg: &RootConfig,
) -> Result<DVector<f64>, RootError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let newton = RootConfig {
        method: RootMethod::NewtonFd,
        ..*cfg
    };
    match solve_root(&mut f, x0, &newton) {
        Err(RootError::SingularJacobian) => {
            let broyden = RootConfig {
                method: RootMethod::Broyden,
                ..*cfg
            };
            solve_root(&mut f, x0, &broyden)
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn affine_converges_in_one_step() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] - 3.0]);
        let root = solve_root(f, &DVector::zeros(1), &RootConfig::default()).unwrap();
        assert_abs_diff_eq!(root[0], 3.0, epsilon = 1e-10);
    }

    #[test]
    fn two_dimensional_system() {
        // Roots of (x1^2 - 4, x2 - x1), starting near the positive branch.
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[0] - 4.0, x[1] - x[0]]);
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        for method in [RootMethod::NewtonFd, RootMethod::Broyden] {
            let cfg = RootConfig {
                method,
                ..RootConfig::default()
            };
            let root = solve_root(f, &x0, &cfg).unwrap();
            assert_abs_diff_eq!(root[0], 2.0, epsilon = 1e-6);
            assert_abs_diff_eq!(root[1], 2.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn no_real_root_reports_nonconvergence() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[0] + 1.0]);
        let err = solve_root(f, &DVector::zeros(1), &RootConfig::default()).unwrap_err();
        match err {
            RootError::NonConvergence { residual, .. } => assert!(residual >= 1.0),
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn linear_system_matches_direct_solve() {
        // On an affine system Newton reproduces the exact linear solve.
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.7]);
        let direct = a.clone().lu().solve(&b).unwrap();
        let f = |x: &DVector<f64>| &a * x - &b;
        let root = solve_root(f, &DVector::zeros(3), &RootConfig::default()).unwrap();
        assert!((root - direct).amax() < 1e-8);
    }
}
