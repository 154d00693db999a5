//! Efficiency-improved regression estimation for two-phase studies.
//!
//! In a two-phase design the outcome and cheap covariates are observed for
//! everyone while expensive covariates exist only on a Phase II subsample.
//! The complete-case (possibly inverse-probability-weighted) estimator is
//! consistent but wasteful; this crate updates it with a zero-consistent
//! contrast between subsample and full-sample working estimators, which
//! never hurts asymptotic efficiency and attains the optimal gain when the
//! working influence function is the conditional expectation of the original
//! one given the Phase I data.
//!
//! The crate provides the three standard outcome models (linear, logistic,
//! Cox), kernel/parametric/known conditional-covariate laws, the penalized
//! working-pair solver with bootstrap-based ridge selection, joint and
//! sequential updating, and a simulation harness that reproduces the
//! accompanying Monte Carlo studies.

pub mod covariate;
pub mod data;
pub mod numerics;
pub mod outcome;
pub mod simulation;
pub mod update;
