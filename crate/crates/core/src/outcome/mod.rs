//! Outcome models: weighted fits, influence functions, and conditional
//! densities for the linear, logistic, and Cox regressions.
//!
//! Every fit solves an inverse-probability-weighted score equation, so a
//! census (`r = 1`, `pi = 1`) reproduces the classical unweighted estimator.
//! The influence function `psi` and the conditional density `f(y | x, z)` are
//! exposed separately because the update machinery integrates them over
//! candidate values of the expensive covariates.

mod cox;
mod linear;
mod logistic;

pub use cox::{breslow_nuisance_at, CoxNuisance};

use crate::data::{DataView, Outcome, Subject};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Logistic,
    Cox,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Logistic => "logistic",
            ModelKind::Cox => "cox",
        }
    }
}

/// Which covariates form the regressor vector `W`.
///
/// Layout: the expensive covariates (when `use_x`), then the selected `z`
/// columns, then an intercept column of ones (when `intercept`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Regressors {
    pub use_x: bool,
    pub z_cols: Vec<usize>,
    pub intercept: bool,
}

impl Regressors {
    /// Main-model regressors: all of `x` plus the given adjustment columns.
    pub fn with_x(z_cols: Vec<usize>) -> Self {
        Regressors {
            use_x: true,
            z_cols,
            intercept: false,
        }
    }

    /// Working-model regressors on cheap covariates only.
    pub fn z_only(z_cols: Vec<usize>) -> Self {
        Regressors {
            use_x: false,
            z_cols,
            intercept: false,
        }
    }

    pub fn dim(&self, x_dim: usize) -> usize {
        (if self.use_x { x_dim } else { 0 }) + self.z_cols.len() + usize::from(self.intercept)
    }

    /// Writes `W` into `out`; `x` may be empty when `use_x` is false.
    #[inline]
    pub fn fill_design(&self, x: &[f64], z: &DVector<f64>, out: &mut [f64]) {
        let mut k = 0;
        if self.use_x {
            out[..x.len()].copy_from_slice(x);
            k = x.len();
        }
        for &c in &self.z_cols {
            out[k] = z[c];
            k += 1;
        }
        if self.intercept {
            out[k] = 1.0;
        }
    }

}

/// An outcome-model family bound to a regressor layout.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub kind: ModelKind,
    pub regs: Regressors,
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("design matrix is rank deficient on this view")]
    RankDeficient,
    #[error("perfect separation: estimates diverged during iteration")]
    Separation,
    #[error("no events in the view")]
    NoEvents,
    #[error("fit did not converge (score norm {score_norm:.3e})")]
    NonConvergence { score_norm: f64 },
    #[error("view has no usable observations")]
    InsufficientCompleteCases,
    #[error("regressors require expensive covariates but the view has missing x")]
    MissingExpensiveCovariate,
    #[error("outcome type does not match the model")]
    OutcomeMismatch,
}

/// Model-specific nuisance parameters estimated alongside `theta`.
#[derive(Debug, Clone)]
pub enum Nuisance {
    /// The logistic likelihood has none.
    None,
    Linear(LinearNuisance),
    Cox(CoxNuisance),
}

#[derive(Debug, Clone)]
pub struct LinearNuisance {
    /// Residual standard deviation (weighted MLE).
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: DVector<f64>,
    pub nuisance: Nuisance,
    pub converged: bool,
    pub score_norm: f64,
    /// Exact fit (linear) or flat partial likelihood (Cox).
    pub degenerate: bool,
}

impl OutcomeModel {
    pub fn new(kind: ModelKind, regs: Regressors) -> Self {
        OutcomeModel { kind, regs }
    }

    pub fn dim(&self, x_dim: usize) -> usize {
        self.regs.dim(x_dim)
    }

    /// Weighted fit on a view. Subjects lacking `x` are rejected when the
    /// regressors need it.
    pub fn fit(&self, view: &DataView) -> Result<FitResult, FitError> {
        if view.is_empty() {
            return Err(FitError::InsufficientCompleteCases);
        }
        match self.kind {
            ModelKind::Linear => linear::fit(view, &self.regs),
            ModelKind::Logistic => logistic::fit(view, &self.regs),
            ModelKind::Cox => cox::fit(view, &self.regs),
        }
    }

    /// Influence function evaluated at the subject's own covariates.
    pub fn influence(
        &self,
        subject: &Subject,
        theta: &DVector<f64>,
        nuisance: &Nuisance,
    ) -> Result<DVector<f64>, FitError> {
        let x_dim = subject.x.as_ref().map_or(0, |x| x.len());
        if self.regs.use_x && subject.x.is_none() {
            return Err(FitError::MissingExpensiveCovariate);
        }
        let eval = self.evaluator(theta.clone(), nuisance, true);
        let dim = self.regs.dim(x_dim);
        let mut psi = DVector::zeros(dim);
        let mut wbuf = vec![0.0; dim];
        let prep = eval.prepare_subject(&subject.outcome)?;
        let empty: [f64; 0] = [];
        let x: &[f64] = subject.x.as_ref().map_or(&empty, |x| x.as_slice());
        eval.eval(
            &prep,
            &subject.outcome,
            x,
            &subject.z,
            psi.as_mut_slice(),
            &mut wbuf,
        );
        Ok(psi)
    }

    /// Conditional density (or mass) of the outcome given covariates.
    pub fn cond_density(
        &self,
        outcome: &Outcome,
        x: &[f64],
        z: &DVector<f64>,
        theta: &DVector<f64>,
        nuisance: &Nuisance,
        include_cox_jump: bool,
    ) -> Result<f64, FitError> {
        let eval = self.evaluator(theta.clone(), nuisance, include_cox_jump);
        let dim = self.regs.dim(x.len());
        let mut psi = vec![0.0; dim];
        let mut wbuf = vec![0.0; dim];
        let prep = eval.prepare_subject(outcome)?;
        let logf = eval.eval(&prep, outcome, x, z, &mut psi, &mut wbuf);
        Ok(logf.exp())
    }

    /// Builds the per-theta evaluator used by the update equations. For the
    /// Cox model this precomputes the risk-set averages at `theta`.
    pub fn evaluator<'a>(
        &'a self,
        theta: DVector<f64>,
        nuisance: &'a Nuisance,
        include_cox_jump: bool,
    ) -> PsiEvaluator<'a> {
        let cox = match (self.kind, nuisance) {
            (ModelKind::Cox, Nuisance::Cox(nu)) => Some(cox::ThetaCache::new(nu, &theta)),
            _ => None,
        };
        PsiEvaluator {
            model: self,
            theta,
            nuisance,
            cox,
            include_cox_jump,
        }
    }
}

/// Per-theta evaluation context for `psi` and `log f`.
pub struct PsiEvaluator<'a> {
    model: &'a OutcomeModel,
    theta: DVector<f64>,
    nuisance: &'a Nuisance,
    cox: Option<cox::ThetaCache>,
    include_cox_jump: bool,
}

/// Quantities that depend on the subject but not on the candidate `x` or on
/// `theta`, hoisted out of the integration and Newton loops.
#[derive(Debug, Clone, Copy, Default)]
pub struct SubjectPrep {
    // Cox fields; unused by the other models.
    cum_hazard: f64,
    log_jump: f64,
    n_events_le_t: usize,
    risk_pos: usize,
}

/// Builds the theta-independent per-subject context.
pub fn prepare_subject(
    kind: ModelKind,
    nuisance: &Nuisance,
    outcome: &Outcome,
    include_cox_jump: bool,
) -> Result<SubjectPrep, FitError> {
    match (kind, outcome) {
        (ModelKind::Linear, Outcome::Continuous(_)) => Ok(SubjectPrep::default()),
        (ModelKind::Logistic, Outcome::Binary(_)) => Ok(SubjectPrep::default()),
        (ModelKind::Cox, Outcome::Survival { time, event }) => {
            let Nuisance::Cox(nu) = nuisance else {
                return Err(FitError::OutcomeMismatch);
            };
            Ok(SubjectPrep {
                cum_hazard: nu.cum_hazard(*time),
                log_jump: if *event && include_cox_jump {
                    nu.log_jump_at(*time)
                } else {
                    0.0
                },
                n_events_le_t: nu.n_events_le(*time),
                risk_pos: nu.risk_position(*time),
            })
        }
        _ => Err(FitError::OutcomeMismatch),
    }
}

impl PsiEvaluator<'_> {
    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn prepare_subject(&self, outcome: &Outcome) -> Result<SubjectPrep, FitError> {
        prepare_subject(self.model.kind, self.nuisance, outcome, self.include_cox_jump)
    }

    /// Writes `psi(y, x, z)` into `psi` and returns `log f(y | x, z)`.
    ///
    /// `x` stands in for the subject's expensive covariates (it is the
    /// integration variable of the update equations); `wbuf` is scratch of
    /// the regressor dimension.
    #[inline]
    pub fn eval(
        &self,
        prep: &SubjectPrep,
        outcome: &Outcome,
        x: &[f64],
        z: &DVector<f64>,
        psi: &mut [f64],
        wbuf: &mut [f64],
    ) -> f64 {
        self.model.regs.fill_design(x, z, wbuf);
        let mut eta = 0.0;
        for (t, w) in self.theta.iter().zip(wbuf.iter()) {
            eta += t * w;
        }
        match (self.model.kind, outcome, self.nuisance) {
            (ModelKind::Linear, Outcome::Continuous(y), Nuisance::Linear(nu)) => {
                let resid = y - eta;
                for (p, w) in psi.iter_mut().zip(wbuf.iter()) {
                    *p = resid * w;
                }
                let s = resid / nu.sigma;
                -0.5 * s * s - nu.sigma.ln() - 0.918_938_533_204_672_7
            }
            (ModelKind::Logistic, Outcome::Binary(y), _) => {
                let yf = *y as f64;
                let p = 1.0 / (1.0 + (-eta).exp());
                let score = yf - p;
                for (ps, w) in psi.iter_mut().zip(wbuf.iter()) {
                    *ps = score * w;
                }
                // log f = y*eta - log(1 + exp(eta)), computed stably.
                yf * eta - (eta.max(0.0) + (-eta.abs()).exp().ln_1p())
            }
            (ModelKind::Cox, Outcome::Survival { event, .. }, Nuisance::Cox(_)) => {
                let cache = self.cox.as_ref().expect("cox cache built with evaluator");
                let exp_eta = eta.exp();
                cache.psi_into(prep, *event, exp_eta, wbuf, psi);
                let mut logf = -prep.cum_hazard * exp_eta;
                if *event {
                    logf += eta + prep.log_jump;
                }
                logf
            }
            _ => panic!("outcome/nuisance mismatch; prepare_subject validates this"),
        }
    }
}
