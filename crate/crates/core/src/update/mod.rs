//! The two-step update machinery: conditional-expectation projections of the
//! influence function, penalized working-estimator pairs, tuning-parameter
//! selection, bootstrap covariance blocks, and the joint/sequential update
//! formulas.

mod bootstrap;
mod combine;
mod diagnostics;
mod driver;
mod pairs;
mod phi_star;

pub use bootstrap::{bootstrap_sigma, resample_indices};
pub use combine::{sequential_update, update, SigmaBlocks, UpdateResult};
pub use diagnostics::{theorem1_variance, theorem1_variance_weighted};
pub use driver::{
    run_menu, select_lambda, CondDistRecipe, MenuConfig, MenuOutput, MethodDef, MethodOutput,
    WorkingSpecDef, WorkingSpecKind,
};
pub use pairs::{
    choose_lambda, default_outcome_pair, detect_outliers, solve_working_pair, PairSide,
    PenaltyScaling, WorkingPair,
};
pub use phi_star::phi_star;

use crate::covariate::CovariateError;
use crate::numerics::LinalgError;
use crate::outcome::FitError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UpdateError {
    #[error("original estimator failed: {0}")]
    MainFit(#[from] FitError),
    #[error("conditional-distribution model failed: {0}")]
    Covariate(#[from] CovariateError),
    #[error("working equation ({side:?}) did not converge (residual {residual:.3e})")]
    WorkingNonConvergence { side: PairSide, residual: f64 },
    #[error("dimension mismatch between estimates and covariance blocks")]
    DimensionMismatch,
    #[error("{dropped} of {total} bootstrap replicates failed (more than 10%)")]
    TooManyFailures { dropped: usize, total: usize },
    #[error("middle block of the variance formula is singular")]
    SingularMiddleBlock,
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] LinalgError),
    #[error("bootstrap produced fewer than two usable replicates")]
    NotEnoughReplicates,
}
