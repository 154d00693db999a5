//! Monte Carlo harness: data generators for the three outcome models under
//! the one- and two-covariate designs, MCAR and outcome-dependent sampling,
//! and the replication loop producing bias/efficiency tables.

mod calibrate;
mod generate;
mod study;
mod tables;

pub use calibrate::{calibrate, Calibration};
pub use generate::{csv_schema, generate, Generated};
pub use study::{parse_methods, run_study, scenario_specs, StudyConfig, StudyResult};
pub use tables::{rows_to_csv, rows_to_json, rows_to_markdown};

use crate::outcome::ModelKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Covariate design of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateLayout {
    /// One expensive covariate plus its noisy surrogate.
    OneCovariate,
    /// Expensive covariate correlated with a cheap one, additive surrogate.
    TwoCovSettingOne,
    /// Log-normal cheap covariate and a detection-limited surrogate.
    TwoCovSettingTwo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingDesign {
    Mcar,
    Mar,
}

/// Everything the generator needs for one scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub model: ModelKind,
    pub layout: CovariateLayout,
    /// Correlation between the expensive covariate and its surrogate.
    pub rho: f64,
    pub design: SamplingDesign,
    pub n: usize,
    pub n2: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "rho must lie strictly between 0 and 1, got {}",
                self.rho
            )));
        }
        if self.n2 == 0 || self.n2 >= self.n {
            return Err(SimError::InvalidConfig(format!(
                "need 0 < n2 < n, got n2 = {}, n = {}",
                self.n2, self.n
            )));
        }
        Ok(())
    }

    /// True coefficient vector of the outcome model.
    pub fn truth(&self) -> Vec<f64> {
        match (self.layout, self.model) {
            (CovariateLayout::OneCovariate, ModelKind::Linear) => vec![0.5],
            (CovariateLayout::OneCovariate, ModelKind::Logistic) => vec![0.5],
            (CovariateLayout::OneCovariate, ModelKind::Cox) => vec![2f64.ln()],
            (_, ModelKind::Linear) => vec![1.0, 0.5],
            (_, ModelKind::Logistic) => vec![1.0, 0.5],
            (_, ModelKind::Cox) => vec![2f64.ln(), 0.5],
        }
    }

    /// Coefficient display names.
    pub fn coef_names(&self) -> Vec<String> {
        match self.layout {
            CovariateLayout::OneCovariate => vec!["theta".to_string()],
            _ => vec!["beta".to_string(), "gamma".to_string()],
        }
    }
}

/// One row of a results table: per-coefficient metrics for one method.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub coef: Vec<CoefMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefMetrics {
    pub name: String,
    /// Mean estimate minus the truth.
    pub bias: f64,
    /// Sample standard deviation of the estimates.
    pub ssd: f64,
    /// Mean bootstrap standard error.
    pub ese: f64,
    /// Coverage of the nominal 95% normal interval.
    pub cp: f64,
    /// Squared SSD ratio against the original estimator.
    pub re: f64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{failed} of {reps} replicates failed (more than 5%)")]
    TooManyReplicateFailures { failed: usize, reps: usize },
    #[error("estimation failed: {0}")]
    Update(#[from] crate::update::UpdateError),
    #[error("data error: {0}")]
    Data(#[from] crate::data::DataError),
}
