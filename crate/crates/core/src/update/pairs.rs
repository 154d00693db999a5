//! Working-estimator pairs: the subsample/full-sample solutions of the
//! projected estimating equations, plain working-model fits, the outlier
//! rule, and ridge-parameter selection.

use super::phi_star::{EquationSide, PhiStarEquations};
use super::UpdateError;
use crate::covariate::ConditionalDist;
use crate::data::DataView;
use crate::numerics::{solve_root_robust, RootConfig};
use crate::outcome::{ModelKind, Nuisance, OutcomeModel, Regressors};
use nalgebra::DVector;

/// How the ridge term scales with the sample size.
///
/// The penalized equations carry `-2 lambda n^(-1/3) theta`; whether that
/// term attaches to the averaged or to the summed equation is ambiguous in
/// the write-up, so both readings are available. The default attaches it to
/// the per-observation average; either choice vanishes asymptotically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyScaling {
    AveragedEquation,
    SummedEquation,
}

impl PenaltyScaling {
    pub fn as_str(&self) -> &'static str {
        match self {
            PenaltyScaling::AveragedEquation => "averaged-equation",
            PenaltyScaling::SummedEquation => "summed-equation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSide {
    Subsample,
    Full,
}

/// A working-estimator pair sharing one influence function.
#[derive(Debug, Clone)]
pub struct WorkingPair {
    pub vartheta_s: DVector<f64>,
    pub vartheta_f: DVector<f64>,
    pub lambda_used: f64,
}

impl WorkingPair {
    pub fn diff(&self) -> DVector<f64> {
        &self.vartheta_s - &self.vartheta_f
    }

    pub fn dim(&self) -> usize {
        self.vartheta_s.len()
    }
}

/// Solves the penalized projected equations on the subsample (inverse
/// probability weighted) and on the full sample, both warm-started at
/// `theta_init` (the original estimator, whose limit the working estimators
/// share under correct specification).
pub fn solve_working_pair(
    full_view: &DataView,
    theta_init: &DVector<f64>,
    model: &OutcomeModel,
    nuisance: &Nuisance,
    dist: &dyn ConditionalDist,
    lambda: f64,
    scaling: PenaltyScaling,
    root: &RootConfig,
) -> Result<WorkingPair, UpdateError> {
    let equations = PhiStarEquations::build(full_view, model, nuisance, dist)?;
    let mut scratch = equations.scratch();
    let mut solve = |side: EquationSide| -> Result<DVector<f64>, UpdateError> {
        let g = |theta: &DVector<f64>| equations.eval(theta, side, lambda, scaling, &mut scratch);
        solve_root_robust(g, theta_init, root).map_err(|e| match e {
            crate::numerics::RootError::NonConvergence { residual, .. } => {
                UpdateError::WorkingNonConvergence {
                    side: match side {
                        EquationSide::Subsample => PairSide::Subsample,
                        EquationSide::Full => PairSide::Full,
                    },
                    residual,
                }
            }
            crate::numerics::RootError::SingularJacobian => UpdateError::WorkingNonConvergence {
                side: match side {
                    EquationSide::Subsample => PairSide::Subsample,
                    EquationSide::Full => PairSide::Full,
                },
                residual: f64::INFINITY,
            },
        })
    };
    let vartheta_s = solve(EquationSide::Subsample)?;
    let vartheta_f = solve(EquationSide::Full)?;
    Ok(WorkingPair {
        vartheta_s,
        vartheta_f,
        lambda_used: lambda,
    })
}

/// Standard working-outcome-model pair: the model of `y` on a `z` subset,
/// fitted by IPW on the subsample and unweighted on the full sample.
pub fn default_outcome_pair(
    full_view: &DataView,
    kind: ModelKind,
    regs: &Regressors,
) -> Result<WorkingPair, UpdateError> {
    let model = OutcomeModel::new(kind, regs.clone());
    let sub = full_view.subsample();
    let fit_s = model.fit(&sub)?;
    let fit_f = model.fit(full_view)?;
    Ok(WorkingPair {
        vartheta_s: fit_s.theta,
        vartheta_f: fit_f.theta,
        lambda_used: 0.0,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

const OUTLIER_MAD_FACTOR: f64 = 6.0;
const OUTLIER_ABS_BOUND: f64 = 50.0;

/// Bootstrap outlier rule: a replicate pair is an outlier if its solver
/// failed, any component exceeds 50 in absolute value, or any component sits
/// more than six median absolute deviations from the replicate median.
pub fn detect_outliers(pairs: &[Option<WorkingPair>]) -> bool {
    if pairs.iter().any(|p| p.is_none()) {
        return true;
    }
    let dim = match pairs.first().and_then(|p| p.as_ref()) {
        Some(p) => p.dim(),
        None => return false,
    };
    // Components of both sides, screened one coordinate at a time.
    for side in 0..2 {
        for d in 0..dim {
            let values: Vec<f64> = pairs
                .iter()
                .map(|p| {
                    let p = p.as_ref().unwrap();
                    if side == 0 {
                        p.vartheta_s[d]
                    } else {
                        p.vartheta_f[d]
                    }
                })
                .collect();
            if values.iter().any(|v| !v.is_finite() || v.abs() > OUTLIER_ABS_BOUND) {
                return true;
            }
            let mut sorted = values.clone();
            let med = median(&mut sorted);
            let mut devs: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
            let mad = median(&mut devs);
            if mad > 0.0 && values.iter().any(|v| (v - med).abs() > OUTLIER_MAD_FACTOR * mad) {
                return true;
            }
        }
    }
    false
}

/// The selection rule over an ascending grid: the smallest value without
/// bootstrap outliers, or the largest one (flagged) when every value has
/// some.
pub fn choose_lambda(grid: &[f64], has_outliers: &[bool]) -> (f64, bool) {
    assert_eq!(grid.len(), has_outliers.len());
    assert!(!grid.is_empty(), "lambda grid must be nonempty");
    for (lam, &bad) in grid.iter().zip(has_outliers) {
        if !bad {
            return (*lam, false);
        }
    }
    (*grid.last().unwrap(), true)
}
