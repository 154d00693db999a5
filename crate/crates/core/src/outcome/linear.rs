//! Weighted least squares and its influence function pieces.

use super::{FitError, FitResult, LinearNuisance, Nuisance, Regressors};
use crate::data::{DataView, Outcome};
use crate::numerics::solve_spd_strict;
use nalgebra::{DMatrix, DVector};

pub(super) fn fit(view: &DataView, regs: &Regressors) -> Result<FitResult, FitError> {
    let x_dim = view.dataset().x_dim();
    let dim = regs.dim(x_dim);
    if dim == 0 {
        return Err(FitError::RankDeficient);
    }
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut wbuf = vec![0.0; dim];
    let mut sum_w = 0.0;
    let mut sum_wy2 = 0.0;
    for (subject, weight) in view.iter() {
        let Outcome::Continuous(y) = subject.outcome else {
            return Err(FitError::OutcomeMismatch);
        };
        fill(regs, subject, &mut wbuf)?;
        for i in 0..dim {
            for j in 0..dim {
                gram[(i, j)] += weight * wbuf[i] * wbuf[j];
            }
            rhs[i] += weight * wbuf[i] * y;
        }
        sum_w += weight;
        sum_wy2 += weight * y * y;
    }
    let theta_mat = solve_spd_strict(&gram, &DMatrix::from_column_slice(dim, 1, rhs.as_slice()))
        .map_err(|_| FitError::RankDeficient)?;
    let theta = DVector::from_column_slice(theta_mat.as_slice());

    // Weighted MLE of the residual variance.
    let mut rss = 0.0;
    let mut score = DVector::<f64>::zeros(dim);
    for (subject, weight) in view.iter() {
        let Outcome::Continuous(y) = subject.outcome else {
            unreachable!()
        };
        fill(regs, subject, &mut wbuf)?;
        let mut fitted = 0.0;
        for (t, w) in theta.iter().zip(&wbuf) {
            fitted += t * w;
        }
        let resid = y - fitted;
        rss += weight * resid * resid;
        for (s, w) in score.iter_mut().zip(&wbuf) {
            *s += weight * resid * w;
        }
    }
    let sigma2 = rss / sum_w;
    let y_scale = (sum_wy2 / sum_w).max(1e-300);
    let degenerate = sigma2 <= 1e-24 * y_scale;

    Ok(FitResult {
        theta,
        nuisance: Nuisance::Linear(LinearNuisance {
            sigma: sigma2.sqrt(),
        }),
        converged: true,
        score_norm: score.amax(),
        degenerate,
    })
}

fn fill(
    regs: &Regressors,
    subject: &crate::data::Subject,
    out: &mut [f64],
) -> Result<(), FitError> {
    if regs.use_x {
        let x = subject
            .x
            .as_ref()
            .ok_or(FitError::MissingExpensiveCovariate)?;
        regs.fill_design(x.as_slice(), &subject.z, out);
    } else {
        regs.fill_design(&[], &subject.z, out);
    }
    Ok(())
}
