//! Weighted logistic regression by Newton iteration.

use super::{FitError, FitResult, Nuisance, Regressors};
use crate::data::{DataView, Outcome};
use crate::numerics::solve_spd_strict;
use nalgebra::{DMatrix, DVector};

const MAX_ITER: usize = 100;
const DIVERGENCE_BOUND: f64 = 50.0;

struct Scored {
    score: DVector<f64>,
    info: DMatrix<f64>,
    norm: f64,
}

fn score_info(
    view: &DataView,
    regs: &Regressors,
    theta: &DVector<f64>,
    wbuf: &mut [f64],
) -> Result<Scored, FitError> {
    let dim = theta.len();
    let mut score = DVector::<f64>::zeros(dim);
    let mut info = DMatrix::<f64>::zeros(dim, dim);
    for (subject, weight) in view.iter() {
        let Outcome::Binary(y) = subject.outcome else {
            return Err(FitError::OutcomeMismatch);
        };
        if regs.use_x {
            let x = subject
                .x
                .as_ref()
                .ok_or(FitError::MissingExpensiveCovariate)?;
            regs.fill_design(x.as_slice(), &subject.z, wbuf);
        } else {
            regs.fill_design(&[], &subject.z, wbuf);
        }
        let mut eta = 0.0;
        for (t, w) in theta.iter().zip(wbuf.iter()) {
            eta += t * w;
        }
        let p = 1.0 / (1.0 + (-eta).exp());
        let resid = y as f64 - p;
        let curv = weight * p * (1.0 - p);
        for i in 0..dim {
            score[i] += weight * resid * wbuf[i];
            for j in 0..dim {
                info[(i, j)] += curv * wbuf[i] * wbuf[j];
            }
        }
    }
    let norm = score.amax();
    Ok(Scored { score, info, norm })
}

fn perfectly_classified(
    view: &DataView,
    regs: &Regressors,
    theta: &DVector<f64>,
    wbuf: &mut [f64],
) -> Result<bool, FitError> {
    if theta.amax() < 1.0 {
        return Ok(false);
    }
    for (subject, _) in view.iter() {
        let Outcome::Binary(y) = subject.outcome else {
            return Err(FitError::OutcomeMismatch);
        };
        if regs.use_x {
            let x = subject
                .x
                .as_ref()
                .ok_or(FitError::MissingExpensiveCovariate)?;
            regs.fill_design(x.as_slice(), &subject.z, wbuf);
        } else {
            regs.fill_design(&[], &subject.z, wbuf);
        }
        let mut eta = 0.0;
        for (t, w) in theta.iter().zip(wbuf.iter()) {
            eta += t * w;
        }
        let p = 1.0 / (1.0 + (-eta).exp());
        if (y as f64 - p).abs() > 1e-6 {
            return Ok(false);
        }
    }
    Ok(true)
}

pub(super) fn fit(view: &DataView, regs: &Regressors) -> Result<FitResult, FitError> {
    let x_dim = view.dataset().x_dim();
    let dim = regs.dim(x_dim);
    if dim == 0 {
        return Err(FitError::RankDeficient);
    }
    let sum_w: f64 = (0..view.len()).map(|i| view.weight(i)).sum();
    let tol = 1e-9 * sum_w.max(1.0);
    let mut wbuf = vec![0.0; dim];
    let mut theta = DVector::<f64>::zeros(dim);
    let mut current = score_info(view, regs, &theta, &mut wbuf)?;

    for iter in 0..MAX_ITER {
        if current.norm <= tol {
            // A zero score can also mean the iterates ran off to perfectly
            // classified probabilities; that is separation, not a fit.
            if perfectly_classified(view, regs, &theta, &mut wbuf)? {
                return Err(FitError::Separation);
            }
            return Ok(FitResult {
                theta,
                nuisance: Nuisance::None,
                converged: true,
                score_norm: current.norm,
                degenerate: false,
            });
        }
        let rhs = DMatrix::from_column_slice(dim, 1, current.score.as_slice());
        let step = match solve_spd_strict(&current.info, &rhs) {
            Ok(step) => DVector::from_column_slice(step.as_slice()),
            // A singular information matrix at the start is collinearity;
            // later on it means the fitted probabilities have saturated.
            Err(_) if iter == 0 => return Err(FitError::RankDeficient),
            Err(_) => return Err(FitError::Separation),
        };

        // Halve the step while the score norm grows.
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..6 {
            let trial = &theta + &step * scale;
            let scored = score_info(view, regs, &trial, &mut wbuf)?;
            if scored.norm.is_finite() && scored.norm < current.norm {
                accepted = Some((trial, scored));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((trial, scored)) => {
                theta = trial;
                current = scored;
            }
            None => {
                // No descent direction left: either diverging or stuck.
                theta += &step;
                current = score_info(view, regs, &theta, &mut wbuf)?;
            }
        }
        if theta.amax() > DIVERGENCE_BOUND {
            return Err(FitError::Separation);
        }
    }
    Err(FitError::NonConvergence {
        score_norm: current.norm,
    })
}
