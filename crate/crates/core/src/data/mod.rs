//! Two-phase dataset container, design weights, and views.
//!
//! Phase I observes the outcome and the cheap covariates `z` for everyone;
//! Phase II observes the expensive covariates `x` for the subjects with
//! `r = 1`. The selection probability `pi` is stored per subject even under
//! simple random sampling so every estimator downstream can be written once
//! in inverse-probability-weighted form.

mod csv_io;

pub use csv_io::{load_csv, write_csv, CsvSchema, OutcomeColumns};

use nalgebra::DVector;
use thiserror::Error;

/// Outcome of one subject.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Continuous(f64),
    Binary(u8),
    Survival { time: f64, event: bool },
}

impl Outcome {
    /// The response value used by regression-type fits.
    pub fn response(&self) -> f64 {
        match self {
            Outcome::Continuous(y) => *y,
            Outcome::Binary(y) => *y as f64,
            Outcome::Survival { time, .. } => *time,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        match self {
            Outcome::Continuous(y) if y.is_finite() => Ok(()),
            Outcome::Binary(y) if *y <= 1 => Ok(()),
            Outcome::Survival { time, .. } if time.is_finite() && *time >= 0.0 => Ok(()),
            _ => Err(DataError::InvalidOutcome),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Subject {
    pub outcome: Outcome,
    /// Cheap covariates; auxiliary surrogates for `x` live here too.
    pub z: DVector<f64>,
    /// Expensive covariates, present exactly when `r` is set.
    pub x: Option<DVector<f64>>,
    pub r: bool,
    /// Selection probability, in (0, 1].
    pub pi: f64,
}

/// How the Phase II subsample was drawn. `Supplied` marks externally loaded
/// data whose weights came in a column.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Mcar { n2: usize },
    Stratified { samples: Vec<usize> },
    Supplied,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("outcome value outside its domain")]
    InvalidOutcome,
    #[error("covariate dimensions differ across subjects")]
    DimensionMismatch,
    #[error("expensive covariates present iff r = 1 is violated at row {row}")]
    InconsistentMissingness { row: usize },
    #[error("selection probability must lie in (0, 1] (row {row})")]
    NonPositiveWeight { row: usize },
    #[error("stratum {stratum} is empty")]
    EmptyStratum { stratum: usize },
    #[error("stratum {stratum} has {size} members but {requested} were requested")]
    OverSampledStratum {
        stratum: usize,
        size: usize,
        requested: usize,
    },
    #[error("stratum assignment does not cover every subject")]
    IncompleteStrata,
    #[error("CSV schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Immutable container for one two-phase sample.
#[derive(Debug, Clone)]
pub struct TwoPhaseDataset {
    subjects: Vec<Subject>,
    x_dim: usize,
    z_dim: usize,
    design: Design,
}

impl TwoPhaseDataset {
    pub fn new(
        subjects: Vec<Subject>,
        x_dim: usize,
        z_dim: usize,
        design: Design,
    ) -> Result<Self, DataError> {
        for (row, s) in subjects.iter().enumerate() {
            s.outcome.validate()?;
            if s.z.len() != z_dim {
                return Err(DataError::DimensionMismatch);
            }
            match (&s.x, s.r) {
                (Some(x), true) if x.len() == x_dim => {}
                (None, false) => {}
                (Some(_), true) => return Err(DataError::DimensionMismatch),
                _ => return Err(DataError::InconsistentMissingness { row }),
            }
            if !(s.pi > 0.0 && s.pi <= 1.0) {
                return Err(DataError::NonPositiveWeight { row });
            }
        }
        Ok(TwoPhaseDataset {
            subjects,
            x_dim,
            z_dim,
            design,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn n_complete(&self) -> usize {
        self.subjects.iter().filter(|s| s.r).count()
    }

    /// Whether enough complete cases exist to fit a model with all
    /// covariates plus nuisances.
    pub fn has_sufficient_complete_cases(&self) -> bool {
        self.n_complete() >= self.x_dim + self.z_dim + 2
    }

    /// Read-only view of the Phase II subsample (`r = 1`, weighted by `1/pi`).
    pub fn subsample(&self) -> DataView<'_> {
        let indices = (0..self.subjects.len())
            .filter(|&i| self.subjects[i].r)
            .collect();
        DataView {
            data: self,
            indices,
            weighted: true,
        }
    }

    /// Read-only view of the full Phase I sample, unweighted.
    pub fn full(&self) -> DataView<'_> {
        DataView {
            data: self,
            indices: (0..self.subjects.len()).collect(),
            weighted: false,
        }
    }

    /// The (subsample, full sample) pair of views.
    pub fn split(&self) -> (DataView<'_>, DataView<'_>) {
        (self.subsample(), self.full())
    }

    /// View over an explicit multiset of subject indices, as produced by
    /// bootstrap resampling.
    pub fn view_of(&self, indices: Vec<usize>, weighted: bool) -> DataView<'_> {
        DataView {
            data: self,
            indices,
            weighted,
        }
    }
}

/// A read-only multiset of subjects from one dataset. Weighted views return
/// `1/pi` as the subject weight; unweighted views return 1.
#[derive(Debug, Clone)]
pub struct DataView<'a> {
    data: &'a TwoPhaseDataset,
    indices: Vec<usize>,
    weighted: bool,
}

impl<'a> DataView<'a> {
    pub fn dataset(&self) -> &'a TwoPhaseDataset {
        self.data
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn subject(&self, pos: usize) -> &'a Subject {
        &self.data.subjects[self.indices[pos]]
    }

    pub fn weight(&self, pos: usize) -> f64 {
        if self.weighted {
            1.0 / self.data.subjects[self.indices[pos]].pi
        } else {
            1.0
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a Subject, f64)> + '_ {
        (0..self.len()).map(move |pos| (self.subject(pos), self.weight(pos)))
    }

    /// Restriction of this view to its complete cases, weighted by `1/pi`.
    pub fn subsample(&self) -> DataView<'a> {
        DataView {
            data: self.data,
            indices: self
                .indices
                .iter()
                .copied()
                .filter(|&i| self.data.subjects[i].r)
                .collect(),
            weighted: true,
        }
    }
}

/// Specification for [`compute_design_weights`]: either simple random
/// sampling of `n2` subjects or stratified sampling with `samples[h]` drawn
/// from the subjects whose `strata` label is `h`.
#[derive(Debug, Clone)]
pub enum DesignSpec {
    Mcar { n2: usize },
    Stratified { strata: Vec<usize>, samples: Vec<usize> },
}

/// Fills `pi` from the sampling design: `n_h / N_h` within each stratum, or
/// `n2 / n` for all subjects under MCAR.
pub fn compute_design_weights(
    dataset: &mut TwoPhaseDataset,
    design: &DesignSpec,
) -> Result<(), DataError> {
    match design {
        DesignSpec::Mcar { n2 } => {
            let n = dataset.subjects.len();
            if *n2 == 0 || *n2 > n {
                return Err(DataError::OverSampledStratum {
                    stratum: 0,
                    size: n,
                    requested: *n2,
                });
            }
            let pi = *n2 as f64 / n as f64;
            for s in &mut dataset.subjects {
                s.pi = pi;
            }
            dataset.design = Design::Mcar { n2: *n2 };
        }
        DesignSpec::Stratified { strata, samples } => {
            if strata.len() != dataset.subjects.len() {
                return Err(DataError::IncompleteStrata);
            }
            let h = samples.len();
            let mut sizes = vec![0usize; h];
            for &label in strata {
                if label >= h {
                    return Err(DataError::IncompleteStrata);
                }
                sizes[label] += 1;
            }
            for (stratum, (&size, &requested)) in sizes.iter().zip(samples).enumerate() {
                if size == 0 {
                    return Err(DataError::EmptyStratum { stratum });
                }
                if requested > size {
                    return Err(DataError::OverSampledStratum {
                        stratum,
                        size,
                        requested,
                    });
                }
            }
            for (s, &label) in dataset.subjects.iter_mut().zip(strata) {
                s.pi = samples[label] as f64 / sizes[label] as f64;
            }
            dataset.design = Design::Stratified {
                samples: samples.clone(),
            };
        }
    }
    Ok(())
}
