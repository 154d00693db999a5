//! End-to-end runner for one dataset and a menu of estimators: original fit,
//! nuisance and conditional-law estimation, working pairs, ridge selection,
//! bootstrap covariance blocks, and the update step per method.

use super::bootstrap::{resample_indices, rows_to_sigma};
use super::combine::{update, SigmaBlocks};
use super::pairs::{
    choose_lambda, default_outcome_pair, detect_outliers, solve_working_pair, PenaltyScaling,
    WorkingPair,
};
use super::UpdateError;
use crate::covariate::{fit_normal_linear, CondDist, KernelCondDist, KnownCondDist, KnownCondDistEval};
use crate::data::{DataView, TwoPhaseDataset};
use crate::numerics::{seeded_rng, RootConfig};
use crate::outcome::{Nuisance, OutcomeModel, Regressors};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// How to (re)build a conditional law from a subsample.
#[derive(Debug, Clone)]
pub enum CondDistRecipe {
    /// Kernel estimator conditioning on the given `z` columns, Silverman
    /// bandwidth computed on the subsample at hand.
    Kernel { cond_cols: Vec<usize> },
    /// Normal working model with mean linear in the given `z` columns.
    NormalLinear { reg_cols: Vec<usize> },
    /// Known analytic law (simulation designs).
    Known(KnownCondDist),
}

impl CondDistRecipe {
    pub fn build(&self, subsample: &DataView) -> Result<CondDist, UpdateError> {
        Ok(match self {
            CondDistRecipe::Kernel { cond_cols } => CondDist::Discrete(
                KernelCondDist::from_subsample(subsample, cond_cols.clone(), None)?,
            ),
            CondDistRecipe::NormalLinear { reg_cols } => {
                CondDist::NormalLinear(fit_normal_linear(subsample, reg_cols.clone())?)
            }
            CondDistRecipe::Known(known) => {
                CondDist::Known(KnownCondDistEval::new(known.clone()))
            }
        })
    }
}

/// One working-estimator specification.
#[derive(Debug, Clone)]
pub enum WorkingSpecKind {
    /// The outcome-model family refit on a cheap-covariate subset.
    DefaultOutcome { regs: Regressors },
    /// Projected-influence equations under a conditional-law recipe, with a
    /// ridge grid (ascending).
    PhiStar {
        recipe: CondDistRecipe,
        lambda_grid: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct WorkingSpecDef {
    pub name: String,
    pub kind: WorkingSpecKind,
}

/// A method is a labelled subset of the working specs; an empty subset is
/// the original estimator.
#[derive(Debug, Clone)]
pub struct MethodDef {
    pub label: String,
    pub spec_indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MenuConfig {
    pub model: OutcomeModel,
    pub specs: Vec<WorkingSpecDef>,
    pub methods: Vec<MethodDef>,
    pub boot: usize,
    pub base_seed: u64,
    /// Bootstrap replicate `b` draws from stream `stream_offset + b`.
    pub stream_offset: u64,
    pub penalty: PenaltyScaling,
    pub root: RootConfig,
    pub parallel_bootstrap: bool,
}

#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub label: String,
    pub estimate: DVector<f64>,
    pub se: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub ridged: bool,
}

#[derive(Debug, Clone)]
pub struct MenuOutput {
    pub theta_s: DVector<f64>,
    pub methods: Vec<MethodOutput>,
    /// Selected ridge value per spec (projection specs only).
    pub lambda_selected: Vec<Option<f64>>,
    /// Whether every grid value still had outliers for that spec.
    pub lambda_warning: Vec<bool>,
    pub dropped_bootstrap: usize,
}

struct RepBase {
    indices: Vec<usize>,
    theta: DVector<f64>,
    nuisance: Nuisance,
}

fn spec_pairs(
    dataset: &TwoPhaseDataset,
    cfg: &MenuConfig,
    spec: &WorkingSpecKind,
    lambda: f64,
    reps: &[Option<RepBase>],
) -> Vec<Option<WorkingPair>> {
    let one = |rep: &Option<RepBase>| -> Option<WorkingPair> {
        let rep = rep.as_ref()?;
        let full_b = dataset.view_of(rep.indices.clone(), false);
        match spec {
            WorkingSpecKind::DefaultOutcome { regs } => {
                default_outcome_pair(&full_b, cfg.model.kind, regs).ok()
            }
            WorkingSpecKind::PhiStar { recipe, .. } => {
                let sub_b = full_b.subsample();
                let dist = recipe.build(&sub_b).ok()?;
                solve_working_pair(
                    &full_b,
                    &rep.theta,
                    &cfg.model,
                    &rep.nuisance,
                    &dist,
                    lambda,
                    cfg.penalty,
                    &cfg.root,
                )
                .ok()
            }
        }
    };
    if cfg.parallel_bootstrap {
        reps.par_iter().map(one).collect()
    } else {
        reps.iter().map(one).collect()
    }
}

/// Selects the ridge value for one projection spec by rerunning its bootstrap
/// pairs along the ascending grid until no replicate is an outlier.
pub fn select_lambda(
    dataset: &TwoPhaseDataset,
    cfg: &MenuConfig,
    spec_index: usize,
) -> Result<(f64, bool), UpdateError> {
    let WorkingSpecKind::PhiStar { lambda_grid, .. } = &cfg.specs[spec_index].kind else {
        return Err(UpdateError::DimensionMismatch);
    };
    let reps = replicate_bases(dataset, cfg);
    let (_, lambda, warning) =
        scan_lambda(dataset, cfg, &cfg.specs[spec_index].kind, lambda_grid, &reps);
    Ok((lambda, warning))
}

fn replicate_bases(dataset: &TwoPhaseDataset, cfg: &MenuConfig) -> Vec<Option<RepBase>> {
    let one = |b: usize| -> Option<RepBase> {
        let mut rng = seeded_rng(cfg.base_seed, cfg.stream_offset + b as u64);
        let indices = resample_indices(dataset, &mut rng);
        let full_b = dataset.view_of(indices.clone(), false);
        let fit = cfg.model.fit(&full_b.subsample()).ok()?;
        Some(RepBase {
            indices,
            theta: fit.theta,
            nuisance: fit.nuisance,
        })
    };
    if cfg.parallel_bootstrap {
        (0..cfg.boot).into_par_iter().map(one).collect()
    } else {
        (0..cfg.boot).map(one).collect()
    }
}

fn scan_lambda(
    dataset: &TwoPhaseDataset,
    cfg: &MenuConfig,
    spec: &WorkingSpecKind,
    grid: &[f64],
    reps: &[Option<RepBase>],
) -> (Vec<Option<WorkingPair>>, f64, bool) {
    assert!(!grid.is_empty(), "ridge grid must be nonempty");
    let mut level = 0;
    let mut pairs = spec_pairs(dataset, cfg, spec, grid[0], reps);
    let mut outcomes = vec![true; 0];
    loop {
        // Outliers are judged over replicates whose base fit succeeded; a
        // failed base fit is a dropped replicate, not evidence about lambda.
        let attempted: Vec<Option<WorkingPair>> = pairs
            .iter()
            .zip(reps)
            .filter(|(_, rep)| rep.is_some())
            .map(|(p, _)| p.clone())
            .collect();
        let bad = detect_outliers(&attempted);
        outcomes.push(bad);
        if !bad || level + 1 >= grid.len() {
            let (lambda, warning) = choose_lambda(&grid[..=level], &outcomes);
            return (pairs, lambda, warning);
        }
        level += 1;
        pairs = spec_pairs(dataset, cfg, spec, grid[level], reps);
    }
}

/// Runs the full pipeline; see the module docs for the step ordering.
pub fn run_menu(dataset: &TwoPhaseDataset, cfg: &MenuConfig) -> Result<MenuOutput, UpdateError> {
    let n = dataset.len();
    let sub = dataset.subsample();
    let full = dataset.full();

    // Step 1-2: original estimator and nuisances on the subsample.
    let main_fit = cfg.model.fit(&sub)?;
    let theta_s = main_fit.theta.clone();
    let p = theta_s.len();

    // Step 4 groundwork: resample and refit the original estimator per
    // bootstrap replicate.
    let reps = replicate_bases(dataset, cfg);

    // Steps 3-4 per spec: bootstrap pairs with ridge selection.
    let mut boot_pairs: Vec<Vec<Option<WorkingPair>>> = Vec::with_capacity(cfg.specs.len());
    let mut lambda_selected = vec![None; cfg.specs.len()];
    let mut lambda_warning = vec![false; cfg.specs.len()];
    for (s, spec) in cfg.specs.iter().enumerate() {
        match &spec.kind {
            WorkingSpecKind::DefaultOutcome { .. } => {
                boot_pairs.push(spec_pairs(dataset, cfg, &spec.kind, 0.0, &reps));
            }
            WorkingSpecKind::PhiStar { lambda_grid, .. } => {
                let (pairs, lambda, warning) =
                    scan_lambda(dataset, cfg, &spec.kind, lambda_grid, &reps);
                boot_pairs.push(pairs);
                lambda_selected[s] = Some(lambda);
                lambda_warning[s] = warning;
            }
        }
    }

    // Main-data pairs at the selected ridge values.
    let mut main_pairs: Vec<WorkingPair> = Vec::with_capacity(cfg.specs.len());
    for (s, spec) in cfg.specs.iter().enumerate() {
        let pair = match &spec.kind {
            WorkingSpecKind::DefaultOutcome { regs } => {
                default_outcome_pair(&full, cfg.model.kind, regs)?
            }
            WorkingSpecKind::PhiStar { recipe, .. } => {
                let dist = recipe.build(&sub)?;
                solve_working_pair(
                    &full,
                    &theta_s,
                    &cfg.model,
                    &main_fit.nuisance,
                    &dist,
                    lambda_selected[s].unwrap_or(0.0),
                    cfg.penalty,
                    &cfg.root,
                )?
            }
        };
        main_pairs.push(pair);
    }

    // Assemble the stacked bootstrap rows; a replicate survives only when
    // the base fit and every spec's pair are available.
    let draws: Vec<Option<(DVector<f64>, DVector<f64>)>> = (0..cfg.boot)
        .map(|b| {
            let rep = reps[b].as_ref()?;
            let mut diffs: Vec<f64> = Vec::new();
            for pairs in &boot_pairs {
                let pair = pairs[b].as_ref()?;
                diffs.extend(pair.diff().iter());
            }
            Some((rep.theta.clone(), DVector::from_vec(diffs)))
        })
        .collect();
    let (sigma, dropped) = rows_to_sigma(draws, n, cfg.boot)?;

    // Coordinate ranges of each spec inside the concatenated difference.
    let mut spec_ranges: Vec<std::ops::Range<usize>> = Vec::with_capacity(cfg.specs.len());
    let mut at = 0;
    for pair in &main_pairs {
        spec_ranges.push(at..at + pair.dim());
        at += pair.dim();
    }

    // Steps 5-6 per method.
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for method in &cfg.methods {
        if method.spec_indices.is_empty() {
            let cov = &sigma.s11 / n as f64;
            let se = DVector::from_iterator(p, (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()));
            methods.push(MethodOutput {
                label: method.label.clone(),
                estimate: theta_s.clone(),
                se,
                cov,
                ridged: false,
            });
            continue;
        }
        let coords: Vec<usize> = method
            .spec_indices
            .iter()
            .flat_map(|&s| spec_ranges[s].clone())
            .collect();
        let pairs: Vec<WorkingPair> = method
            .spec_indices
            .iter()
            .map(|&s| main_pairs[s].clone())
            .collect();
        let sub_sigma: SigmaBlocks = sigma.select(&coords);
        let result = update(&theta_s, &pairs, &sub_sigma, n)?;
        let se = DVector::from_iterator(
            p,
            (0..p).map(|j| result.cov[(j, j)].max(0.0).sqrt()),
        );
        methods.push(MethodOutput {
            label: method.label.clone(),
            estimate: result.theta_bar,
            se,
            cov: result.cov,
            ridged: result.ridged,
        });
    }

    Ok(MenuOutput {
        theta_s,
        methods,
        lambda_selected,
        lambda_warning,
        dropped_bootstrap: dropped,
    })
}
