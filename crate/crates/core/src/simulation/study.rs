//! The replication loop: generate, estimate under every requested method,
//! and aggregate bias/variability/coverage/efficiency metrics.

use super::{
    calibrate, generate, Calibration, CoefMetrics, CovariateLayout, MetricsRow, ScenarioConfig,
    SimError,
};
use crate::covariate::KnownCondDist;
use crate::numerics::RootConfig;
use crate::outcome::{ModelKind, OutcomeModel, Regressors};
use crate::update::{
    run_menu, CondDistRecipe, MenuConfig, MethodDef, PenaltyScaling, WorkingSpecDef,
    WorkingSpecKind,
};
use nalgebra::DVector;
use rayon::prelude::*;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub scenario: ScenarioConfig,
    /// Method labels; specs joined by `+` denote a joint update.
    pub methods: Vec<String>,
    pub reps: usize,
    pub boot: usize,
    pub lambda_grid: Vec<f64>,
    pub base_seed: u64,
    pub penalty: PenaltyScaling,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub rows: Vec<MetricsRow>,
    pub calibration: Calibration,
    /// Ridge values selected across replicates, per projection spec.
    pub lambda_counts: Vec<(String, BTreeMap<String, usize>)>,
    pub failed_replicates: usize,
    pub warnings: Vec<String>,
}

/// The working-estimator menu of a scenario: the standard working outcome
/// model on the cheap covariates, and the projection specs the design
/// supports (kernel in the one-covariate scenarios, the true-model linear
/// working law and the known law with two covariates).
pub fn scenario_specs(
    config: &ScenarioConfig,
    calib: &Calibration,
    lambda_grid: &[f64],
) -> Vec<WorkingSpecDef> {
    // The ridge is only needed where the working estimators are unstable,
    // which the studies hit for the logistic model.
    let grid = if config.model == ModelKind::Logistic {
        lambda_grid.to_vec()
    } else {
        vec![0.0]
    };
    match config.layout {
        CovariateLayout::OneCovariate => vec![
            WorkingSpecDef {
                name: "default".into(),
                kind: WorkingSpecKind::DefaultOutcome {
                    regs: Regressors::z_only(vec![0]),
                },
            },
            WorkingSpecDef {
                name: "optimal".into(),
                kind: WorkingSpecKind::PhiStar {
                    recipe: CondDistRecipe::Kernel { cond_cols: vec![0] },
                    lambda_grid: grid,
                },
            },
        ],
        CovariateLayout::TwoCovSettingOne | CovariateLayout::TwoCovSettingTwo => {
            let known = match config.layout {
                CovariateLayout::TwoCovSettingOne => KnownCondDist::BivariateNormalPosterior {
                    sigma_e: calib.sigma_e,
                    corr_xz: 0.7,
                    xstar_col: 1,
                    z_col: 0,
                },
                _ => KnownCondDist::CensoredAuxiliary {
                    sigma_e: calib.sigma_e,
                    corr_xlogz: 0.7,
                    censor_at: -1.0,
                    xstar_col: 1,
                    z_col: 0,
                },
            };
            vec![
                WorkingSpecDef {
                    name: "default".into(),
                    kind: WorkingSpecKind::DefaultOutcome {
                        regs: Regressors::z_only(vec![0, 1]),
                    },
                },
                WorkingSpecDef {
                    name: "linear".into(),
                    kind: WorkingSpecKind::PhiStar {
                        recipe: CondDistRecipe::NormalLinear {
                            reg_cols: vec![0, 1],
                        },
                        lambda_grid: grid.clone(),
                    },
                },
                WorkingSpecDef {
                    name: "optimal".into(),
                    kind: WorkingSpecKind::PhiStar {
                        recipe: CondDistRecipe::Known(known),
                        lambda_grid: grid,
                    },
                },
            ]
        }
    }
}

/// Resolves method labels like `default+optimal` against the spec names.
pub fn parse_methods(
    labels: &[String],
    specs: &[WorkingSpecDef],
) -> Result<Vec<MethodDef>, SimError> {
    let mut out = Vec::with_capacity(labels.len());
    for label in labels {
        let trimmed = label.trim();
        if trimmed.eq_ignore_ascii_case("original") {
            out.push(MethodDef {
                label: "original".into(),
                spec_indices: vec![],
            });
            continue;
        }
        let mut indices = Vec::new();
        for part in trimmed.split('+') {
            let part = part.trim();
            let Some(idx) = specs.iter().position(|s| s.name == part) else {
                return Err(SimError::InvalidConfig(format!(
                    "unknown method component `{part}` (available: original, {})",
                    specs
                        .iter()
                        .map(|s| s.name.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            };
            if indices.contains(&idx) {
                return Err(SimError::InvalidConfig(format!(
                    "method `{trimmed}` repeats `{part}`"
                )));
            }
            indices.push(idx);
        }
        out.push(MethodDef {
            label: trimmed.to_string(),
            spec_indices: indices,
        });
    }
    Ok(out)
}

/// The main-model regressors of a scenario.
pub(super) fn scenario_model(config: &ScenarioConfig) -> OutcomeModel {
    let regs = match config.layout {
        CovariateLayout::OneCovariate => Regressors::with_x(vec![]),
        _ => Regressors::with_x(vec![0]),
    };
    OutcomeModel::new(config.model, regs)
}

struct ReplicateOutcome {
    estimates: Vec<DVector<f64>>,
    ses: Vec<DVector<f64>>,
    lambdas: Vec<Option<f64>>,
    shortfall: bool,
}

/// Runs the full study. Replicate `r` generates from stream `r` and its
/// bootstrap replicates use streams `reps + r * boot + b`, so the result is
/// independent of scheduling.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult, SimError> {
    cfg.scenario.validate()?;
    if cfg.reps == 0 {
        return Err(SimError::InvalidConfig("reps must be at least 1".into()));
    }
    if cfg.boot < 2 {
        return Err(SimError::InvalidConfig("boot must be at least 2".into()));
    }
    if cfg.lambda_grid.is_empty() {
        return Err(SimError::InvalidConfig("lambda grid must be nonempty".into()));
    }
    let calibration = calibrate(&cfg.scenario, cfg.base_seed);
    let specs = scenario_specs(&cfg.scenario, &calibration, &cfg.lambda_grid);

    // The original estimator is always computed; its row is emitted only
    // when requested, but the efficiency ratios need it either way.
    let mut labels = cfg.methods.clone();
    if !labels.iter().any(|l| l.trim().eq_ignore_ascii_case("original")) {
        labels.insert(0, "original".into());
    }
    let methods = parse_methods(&labels, &specs)?;
    let model = scenario_model(&cfg.scenario);
    let truth = cfg.scenario.truth();

    let run_one = |rep: usize| -> Option<ReplicateOutcome> {
        let gen = generate(&cfg.scenario, &calibration, cfg.base_seed, rep as u64).ok()?;
        let menu = MenuConfig {
            model: model.clone(),
            specs: specs.clone(),
            methods: methods.clone(),
            boot: cfg.boot,
            base_seed: cfg.base_seed,
            stream_offset: cfg.reps as u64 + (rep * cfg.boot) as u64,
            penalty: cfg.penalty,
            root: RootConfig::default(),
            parallel_bootstrap: false,
        };
        let out = run_menu(&gen.dataset, &menu).ok()?;
        Some(ReplicateOutcome {
            estimates: out.methods.iter().map(|m| m.estimate.clone()).collect(),
            ses: out.methods.iter().map(|m| m.se.clone()).collect(),
            lambdas: out.lambda_selected,
            shortfall: gen.shortfall,
        })
    };
    let outcomes: Vec<Option<ReplicateOutcome>> =
        (0..cfg.reps).into_par_iter().map(run_one).collect();

    let kept: Vec<&ReplicateOutcome> = outcomes.iter().flatten().collect();
    let failed = cfg.reps - kept.len();
    if failed * 20 > cfg.reps {
        return Err(SimError::TooManyReplicateFailures {
            failed,
            reps: cfg.reps,
        });
    }
    if kept.len() < 2 {
        return Err(SimError::TooManyReplicateFailures {
            failed,
            reps: cfg.reps,
        });
    }

    // Aggregate per method and coefficient.
    let coef_names = cfg.scenario.coef_names();
    let p = truth.len();
    let reps_f = kept.len() as f64;
    let mut ssd = vec![vec![0.0; p]; methods.len()];
    let mut rows = Vec::with_capacity(methods.len());
    for (m, method) in methods.iter().enumerate() {
        let mut coef = Vec::with_capacity(p);
        for j in 0..p {
            let ests: Vec<f64> = kept.iter().map(|r| r.estimates[m][j]).collect();
            let mean = ests.iter().sum::<f64>() / reps_f;
            let var = ests.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
                / (reps_f - 1.0);
            let sd = var.sqrt();
            let ese = kept.iter().map(|r| r.ses[m][j]).sum::<f64>() / reps_f;
            let covered = kept
                .iter()
                .filter(|r| (r.estimates[m][j] - truth[j]).abs() <= 1.96 * r.ses[m][j])
                .count();
            ssd[m][j] = sd;
            coef.push(CoefMetrics {
                name: coef_names[j].clone(),
                bias: mean - truth[j],
                ssd: sd,
                ese,
                cp: covered as f64 / reps_f,
                re: f64::NAN, // filled against the original below
            });
        }
        rows.push(MetricsRow {
            method: method.label.clone(),
            coef,
        });
    }
    let orig_idx = methods
        .iter()
        .position(|m| m.spec_indices.is_empty())
        .expect("original always present");
    for (m, row) in rows.iter_mut().enumerate() {
        for (j, c) in row.coef.iter_mut().enumerate() {
            if m == orig_idx {
                c.re = 1.0;
            } else {
                let ratio = ssd[orig_idx][j] / c.ssd;
                c.re = ratio * ratio;
            }
        }
    }

    // Ridge usage per projection spec.
    let mut lambda_counts = Vec::new();
    for (s, spec) in specs.iter().enumerate() {
        if matches!(spec.kind, WorkingSpecKind::PhiStar { .. }) {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for r in &kept {
                if let Some(lam) = r.lambdas[s] {
                    *counts.entry(format!("{lam}")).or_default() += 1;
                }
            }
            lambda_counts.push((spec.name.clone(), counts));
        }
    }

    let mut warnings = Vec::new();
    if failed > 0 {
        warnings.push(format!("{failed} of {} replicates failed", cfg.reps));
    }
    let shortfalls = kept.iter().filter(|r| r.shortfall).count();
    if shortfalls > 0 {
        warnings.push(format!(
            "{shortfalls} replicates had an undersized stratum and shifted \
             selections to the other stratum"
        ));
    }

    // Emit only the requested method rows, in the requested order.
    let requested: Vec<String> = cfg
        .methods
        .iter()
        .map(|l| l.trim().to_string())
        .collect();
    let rows = requested
        .iter()
        .filter_map(|label| rows.iter().find(|r| r.method.eq_ignore_ascii_case(label)))
        .cloned()
        .collect();

    Ok(StudyResult {
        rows,
        calibration,
        lambda_counts,
        failed_replicates: failed,
        warnings,
    })
}
