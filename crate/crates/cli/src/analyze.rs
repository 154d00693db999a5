//! The `analyze` subcommand: the estimator menu on a user-supplied CSV.

use crate::simulate::{format_extension, parse_model, parse_penalty, sidecar_path};
use crate::CliError;
use clap::Args;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::path::{Path, PathBuf};
use tpu_core::data::{load_csv, CsvSchema, DesignSpec, OutcomeColumns, TwoPhaseDataset};
use tpu_core::numerics::RootConfig;
use tpu_core::outcome::{ModelKind, OutcomeModel, Regressors};
use tpu_core::update::{
    run_menu, CondDistRecipe, MenuConfig, MenuOutput, MethodDef, UpdateError, WorkingSpecDef,
    WorkingSpecKind,
};

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Input CSV path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Outcome model: linear, logistic, cox.
    #[arg(long)]
    model: Option<String>,
    /// Outcome column, or `time,status` for survival.
    #[arg(long, value_delimiter = ',')]
    outcome: Vec<String>,
    /// Expensive covariate columns (missing exactly when r = 0).
    #[arg(long, value_delimiter = ',')]
    expensive: Vec<String>,
    /// Auxiliary (surrogate) columns.
    #[arg(long, value_delimiter = ',')]
    aux: Vec<String>,
    /// Fully observed adjustment covariates entering the outcome model.
    #[arg(long, value_delimiter = ',')]
    adjust: Vec<String>,
    /// Selection-indicator column.
    #[arg(long)]
    r: Option<String>,
    /// Selection-probability column.
    #[arg(long, conflicts_with = "design_file")]
    pi: Option<String>,
    /// JSON file declaring the sampling design when no pi column exists.
    #[arg(long)]
    design_file: Option<PathBuf>,
    /// Methods to run; components joined by `+` form a joint update.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, default_value_t = 200)]
    boot: usize,
    /// Ridge grid for the projection-based working estimators.
    #[arg(long, value_delimiter = ',', default_values_t = [0.005, 0.01, 0.02, 0.04])]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
    /// Include an intercept in the outcome and working models (not for Cox).
    #[arg(long)]
    intercept: bool,
    #[arg(long, default_value = "averaged-equation")]
    penalty: String,
    /// Re-run from a previous sidecar; other flags are ignored.
    #[arg(long, conflicts_with_all = ["data", "model", "methods"])]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedAnalyze {
    pub data: PathBuf,
    pub model: String,
    pub outcome: Vec<String>,
    pub expensive: Vec<String>,
    pub aux: Vec<String>,
    pub adjust: Vec<String>,
    pub r: String,
    pub pi: Option<String>,
    pub design_file: Option<PathBuf>,
    pub methods: Vec<String>,
    pub boot: usize,
    pub lambda: Vec<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub format: String,
    pub intercept: bool,
    pub penalty: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum DesignFile {
    Mcar { n2: usize },
    Stratified { column: String, samples: Vec<usize> },
}

fn resolve(args: &AnalyzeArgs) -> Result<ResolvedAnalyze, CliError> {
    let data = args
        .data
        .clone()
        .ok_or_else(|| CliError::config("--data is required"))?;
    let model_raw = args
        .model
        .as_deref()
        .ok_or_else(|| CliError::config("--model is required"))?;
    let model = parse_model(model_raw)?;
    match (model, args.outcome.len()) {
        (ModelKind::Cox, 2) | (ModelKind::Linear | ModelKind::Logistic, 1) => {}
        (ModelKind::Cox, n) => {
            return Err(CliError::config(format!(
                "--outcome needs time,status columns for the cox model (got {n})"
            )))
        }
        (_, n) => {
            return Err(CliError::config(format!(
                "--outcome needs exactly one column for this model (got {n})"
            )))
        }
    }
    if model == ModelKind::Cox && args.intercept {
        return Err(CliError::config(
            "--intercept does not apply to the cox model",
        ));
    }
    if args.expensive.is_empty() {
        return Err(CliError::config("--expensive needs at least one column"));
    }
    if args.aux.is_empty() && args.adjust.is_empty() {
        return Err(CliError::config(
            "at least one of --aux or --adjust is required to form a working model",
        ));
    }
    let r = args
        .r
        .clone()
        .ok_or_else(|| CliError::config("--r is required"))?;
    if args.pi.is_none() && args.design_file.is_none() {
        return Err(CliError::config(
            "either --pi or --design-file must be given",
        ));
    }
    format_extension(&args.format)?;
    parse_penalty(&args.penalty)?;
    let methods = args.methods.clone().unwrap_or_else(|| {
        vec![
            "original".into(),
            "default".into(),
            "linear".into(),
            "default+linear".into(),
        ]
    });
    let ext = format_extension(&args.format)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("tpu_estimates.{ext}")));
    Ok(ResolvedAnalyze {
        data,
        model: model.as_str().into(),
        outcome: args.outcome.clone(),
        expensive: args.expensive.clone(),
        aux: args.aux.clone(),
        adjust: args.adjust.clone(),
        r,
        pi: args.pi.clone(),
        design_file: args.design_file.clone(),
        methods,
        boot: args.boot,
        lambda: args.lambda.clone(),
        seed: args.seed,
        out,
        format: args.format.to_ascii_lowercase(),
        intercept: args.intercept,
        penalty: args.penalty.to_ascii_lowercase(),
    })
}

fn read_strata_column(path: &Path, column: &str) -> Result<Vec<usize>, CliError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = body.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::config("empty CSV file"))?;
    let idx = header
        .split(',')
        .position(|h| h.trim() == column)
        .ok_or_else(|| CliError::config(format!("missing stratum column `{column}`")))?;
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let field = line.split(',').nth(idx).unwrap_or("").trim();
        let label: usize = field.parse().map_err(|_| {
            CliError::config(format!(
                "column `{column}` row {row}: stratum label `{field}` is not an integer"
            ))
        })?;
        out.push(label);
    }
    Ok(out)
}

fn load(resolved: &ResolvedAnalyze) -> Result<TwoPhaseDataset, CliError> {
    let outcome = match parse_model(&resolved.model)? {
        ModelKind::Linear => OutcomeColumns::Continuous {
            y: resolved.outcome[0].clone(),
        },
        ModelKind::Logistic => OutcomeColumns::Binary {
            y: resolved.outcome[0].clone(),
        },
        ModelKind::Cox => OutcomeColumns::Survival {
            time: resolved.outcome[0].clone(),
            status: resolved.outcome[1].clone(),
        },
    };
    // The z vector is the adjustment columns followed by the auxiliaries.
    let mut z = resolved.adjust.clone();
    z.extend(resolved.aux.iter().cloned());
    let schema = CsvSchema {
        outcome,
        z,
        x: resolved.expensive.clone(),
        r: resolved.r.clone(),
        pi: resolved.pi.clone(),
    };
    let design = match &resolved.design_file {
        None => None,
        Some(path) => {
            let body = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
            let parsed: DesignFile = serde_json::from_str(&body)
                .map_err(|e| CliError::config(format!("bad design file: {e}")))?;
            Some(match parsed {
                DesignFile::Mcar { n2 } => DesignSpec::Mcar { n2 },
                DesignFile::Stratified { column, samples } => DesignSpec::Stratified {
                    strata: read_strata_column(&resolved.data, &column)?,
                    samples,
                },
            })
        }
    };
    load_csv(&resolved.data, &schema, design.as_ref())
        .map_err(|e| CliError::config(e.to_string()))
}

fn specs_for(resolved: &ResolvedAnalyze) -> (Vec<WorkingSpecDef>, OutcomeModel) {
    let n_adjust = resolved.adjust.len();
    let n_aux = resolved.aux.len();
    let all_z: Vec<usize> = (0..n_adjust + n_aux).collect();
    let aux_cols: Vec<usize> = if n_aux > 0 {
        (n_adjust..n_adjust + n_aux).collect()
    } else {
        all_z.clone()
    };
    let intercept = resolved.intercept;
    let model = OutcomeModel::new(
        parse_model(&resolved.model).expect("validated"),
        Regressors {
            use_x: true,
            z_cols: (0..n_adjust).collect(),
            intercept,
        },
    );
    let specs = vec![
        WorkingSpecDef {
            name: "default".into(),
            kind: WorkingSpecKind::DefaultOutcome {
                regs: Regressors {
                    use_x: false,
                    z_cols: all_z.clone(),
                    intercept,
                },
            },
        },
        WorkingSpecDef {
            name: "linear".into(),
            kind: WorkingSpecKind::PhiStar {
                recipe: CondDistRecipe::NormalLinear { reg_cols: all_z },
                lambda_grid: resolved.lambda.clone(),
            },
        },
        WorkingSpecDef {
            name: "optimal".into(),
            kind: WorkingSpecKind::PhiStar {
                recipe: CondDistRecipe::Kernel {
                    cond_cols: aux_cols,
                },
                lambda_grid: resolved.lambda.clone(),
            },
        },
    ];
    (specs, model)
}

fn parse_method_labels(
    labels: &[String],
    specs: &[WorkingSpecDef],
) -> Result<Vec<MethodDef>, CliError> {
    let mut out = Vec::new();
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
            let idx = specs
                .iter()
                .position(|s| s.name == part)
                .ok_or_else(|| {
                    CliError::config(format!(
                        "unknown method component `{part}` (available: original, default, linear, optimal)"
                    ))
                })?;
            indices.push(idx);
        }
        out.push(MethodDef {
            label: trimmed.into(),
            spec_indices: indices,
        });
    }
    Ok(out)
}

struct EstimateRow {
    method: String,
    coefficient: String,
    estimate: f64,
    se: f64,
    z: f64,
    p: f64,
}

fn estimate_rows(resolved: &ResolvedAnalyze, output: &MenuOutput) -> Vec<EstimateRow> {
    let mut names: Vec<String> = resolved.expensive.clone();
    names.extend(resolved.adjust.iter().cloned());
    if resolved.intercept {
        names.push("intercept".into());
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut rows = Vec::new();
    for method in &output.methods {
        for (j, name) in names.iter().enumerate() {
            let estimate = method.estimate[j];
            let se = method.se[j];
            let z = if se > 0.0 { estimate / se } else { f64::NAN };
            let p = if z.is_finite() {
                2.0 * (1.0 - normal.cdf(z.abs()))
            } else {
                f64::NAN
            };
            rows.push(EstimateRow {
                method: method.label.clone(),
                coefficient: name.clone(),
                estimate,
                se,
                z,
                p,
            });
        }
    }
    rows
}

fn render(rows: &[EstimateRow], format: &str) -> String {
    match format {
        "md" => {
            let mut out = String::from(
                "| Method | Coefficient | Est | SE | z | p-value |\n|---|---|---|---|---|---|\n",
            );
            for r in rows {
                out.push_str(&format!(
                    "| {} | {} | {:.4} | {:.4} | {:.3} | {:.3e} |\n",
                    r.method, r.coefficient, r.estimate, r.se, r.z, r.p
                ));
            }
            out
        }
        "json" => {
            let values: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "method": r.method,
                        "coefficient": r.coefficient,
                        "estimate": r.estimate,
                        "se": r.se,
                        "z": r.z,
                        "p": r.p,
                    })
                })
                .collect();
            let mut body =
                serde_json::to_string_pretty(&values).expect("estimate rows serialize");
            body.push('\n');
            body
        }
        _ => {
            let mut out = String::from("method,coefficient,estimate,se,z,p\n");
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.method, r.coefficient, r.estimate, r.se, r.z, r.p
                ));
            }
            out
        }
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    version: &'a str,
    command: &'a str,
    config: &'a ResolvedAnalyze,
    lambda_selected: Vec<(String, Option<f64>)>,
    lambda_warning: Vec<bool>,
    dropped_bootstrap: usize,
}

fn estimation_error(err: UpdateError) -> CliError {
    match err {
        UpdateError::Covariate(e) => CliError::estimation(e.to_string()),
        other => CliError::estimation(other.to_string()),
    }
}

fn run_resolved(resolved: &ResolvedAnalyze) -> Result<(), CliError> {
    let dataset = load(resolved)?;
    if !dataset.has_sufficient_complete_cases() {
        return Err(CliError::config(format!(
            "only {} complete cases for {} covariates; not enough to fit",
            dataset.n_complete(),
            dataset.x_dim() + dataset.z_dim()
        )));
    }
    let (specs, model) = specs_for(resolved);
    let methods = parse_method_labels(&resolved.methods, &specs)?;
    let menu = MenuConfig {
        model,
        specs,
        methods,
        boot: resolved.boot,
        base_seed: resolved.seed,
        stream_offset: 0,
        penalty: parse_penalty(&resolved.penalty)?,
        root: RootConfig::default(),
        parallel_bootstrap: true,
    };
    let output = run_menu(&dataset, &menu).map_err(estimation_error)?;
    let rows = estimate_rows(resolved, &output);
    let table = render(&rows, &resolved.format);
    std::fs::write(&resolved.out, &table)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", resolved.out.display())))?;
    print!("{table}");

    let lambda_selected: Vec<(String, Option<f64>)> = menu_lambdas(&menu, &output);
    for (name, lam) in &lambda_selected {
        if let Some(lam) = lam {
            eprintln!("lambda selected ({name}): {lam}");
        }
    }
    if output.dropped_bootstrap > 0 {
        eprintln!(
            "warning: {} bootstrap replicates dropped",
            output.dropped_bootstrap
        );
    }
    let sidecar = Sidecar {
        version: env!("CARGO_PKG_VERSION"),
        command: "analyze",
        config: resolved,
        lambda_selected,
        lambda_warning: output.lambda_warning.clone(),
        dropped_bootstrap: output.dropped_bootstrap,
    };
    let path = sidecar_path(&resolved.out);
    let body = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| CliError::config(format!("sidecar serialization failed: {e}")))?;
    std::fs::write(&path, body + "\n")
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
    eprintln!("run sidecar: {}", path.display());
    Ok(())
}

fn menu_lambdas(menu: &MenuConfig, output: &MenuOutput) -> Vec<(String, Option<f64>)> {
    menu.specs
        .iter()
        .zip(&output.lambda_selected)
        .map(|(s, lam)| (s.name.clone(), *lam))
        .collect()
}

pub fn run(args: AnalyzeArgs) -> Result<(), CliError> {
    let resolved = match &args.config {
        Some(path) => {
            let body = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
            let parsed: serde_json::Value = serde_json::from_str(&body)
                .map_err(|e| CliError::config(format!("bad sidecar JSON: {e}")))?;
            let config = parsed.get("config").unwrap_or(&parsed);
            serde_json::from_value::<ResolvedAnalyze>(config.clone())
                .map_err(|e| CliError::config(format!("bad sidecar config: {e}")))?
        }
        None => resolve(&args)?,
    };
    run_resolved(&resolved)
}
