//! The `simulate` subcommand.

use crate::CliError;
use clap::Args;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use tpu_core::data::write_csv;
use tpu_core::outcome::ModelKind;
use tpu_core::simulation::{
    calibrate, csv_schema, generate, parse_methods, rows_to_csv, rows_to_json, rows_to_markdown,
    run_study, scenario_specs, CovariateLayout, SamplingDesign, ScenarioConfig, SimError,
    StudyConfig, StudyResult,
};
use tpu_core::update::PenaltyScaling;

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario: s1, s2, s3 (one covariate; model implied), two-cov-1,
    /// two-cov-2 (model required).
    #[arg(long)]
    scenario: Option<String>,
    /// Outcome model: linear, logistic, cox.
    #[arg(long)]
    model: Option<String>,
    /// Sampling design: mcar or mar.
    #[arg(long, default_value = "mcar")]
    design: String,
    /// Correlation between the expensive covariate and its surrogate.
    #[arg(long, default_value_t = 0.7)]
    rho: f64,
    /// Phase I sample size.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Phase II subsample size.
    #[arg(long, default_value_t = 200)]
    n2: usize,
    /// Number of Monte Carlo replicates.
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Bootstrap replicates per Monte Carlo replicate.
    #[arg(long, default_value_t = 200)]
    boot: usize,
    /// Ridge grid, comma separated and ascending.
    #[arg(long, value_delimiter = ',', default_values_t = [0.005, 0.01, 0.02, 0.04])]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Methods to report (default depends on the scenario).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Output table path; the run sidecar lands next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table format: csv, md, or json.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Also dump the first replicate's dataset as a CSV fixture.
    #[arg(long)]
    emit_csv: Option<PathBuf>,
    /// Ridge attachment: averaged-equation or summed-equation.
    #[arg(long, default_value = "averaged-equation")]
    penalty: String,
    /// Re-run from a sidecar written by a previous invocation; other flags
    /// are ignored.
    #[arg(long, conflicts_with_all = ["scenario", "model", "methods"])]
    config: Option<PathBuf>,
}

/// Fully resolved simulate run; serialized into the sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedSimulate {
    pub scenario: String,
    pub model: String,
    pub layout: CovariateLayout,
    pub design: SamplingDesign,
    pub rho: f64,
    pub n: usize,
    pub n2: usize,
    pub reps: usize,
    pub boot: usize,
    pub lambda: Vec<f64>,
    pub seed: u64,
    pub methods: Vec<String>,
    pub format: String,
    pub out: PathBuf,
    pub emit_csv: Option<PathBuf>,
    pub penalty: String,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    version: &'a str,
    command: &'a str,
    config: &'a ResolvedSimulate,
    calibration: &'a tpu_core::simulation::Calibration,
    lambda_selected: Vec<(String, std::collections::BTreeMap<String, usize>)>,
    failed_replicates: usize,
    warnings: &'a [String],
}

pub fn parse_model(raw: &str) -> Result<ModelKind, CliError> {
    match raw.to_ascii_lowercase().as_str() {
        "linear" => Ok(ModelKind::Linear),
        "logistic" => Ok(ModelKind::Logistic),
        "cox" => Ok(ModelKind::Cox),
        other => Err(CliError::config(format!(
            "--model must be linear, logistic, or cox, got `{other}`"
        ))),
    }
}

fn parse_design(raw: &str) -> Result<SamplingDesign, CliError> {
    match raw.to_ascii_lowercase().as_str() {
        "mcar" => Ok(SamplingDesign::Mcar),
        "mar" => Ok(SamplingDesign::Mar),
        other => Err(CliError::config(format!(
            "--design must be mcar or mar, got `{other}`"
        ))),
    }
}

pub fn parse_penalty(raw: &str) -> Result<PenaltyScaling, CliError> {
    match raw.to_ascii_lowercase().as_str() {
        "averaged-equation" => Ok(PenaltyScaling::AveragedEquation),
        "summed-equation" => Ok(PenaltyScaling::SummedEquation),
        other => Err(CliError::config(format!(
            "--penalty must be averaged-equation or summed-equation, got `{other}`"
        ))),
    }
}

pub fn format_extension(format: &str) -> Result<&'static str, CliError> {
    match format.to_ascii_lowercase().as_str() {
        "csv" => Ok("csv"),
        "md" => Ok("md"),
        "json" => Ok("json"),
        other => Err(CliError::config(format!(
            "--format must be csv, md, or json, got `{other}`"
        ))),
    }
}

fn resolve(args: &SimulateArgs) -> Result<ResolvedSimulate, CliError> {
    let scenario_raw = args
        .scenario
        .as_deref()
        .ok_or_else(|| CliError::config("--scenario is required"))?
        .to_ascii_lowercase();
    let (layout, implied_model) = match scenario_raw.as_str() {
        "s1" => (CovariateLayout::OneCovariate, Some(ModelKind::Linear)),
        "s2" => (CovariateLayout::OneCovariate, Some(ModelKind::Logistic)),
        "s3" => (CovariateLayout::OneCovariate, Some(ModelKind::Cox)),
        "two-cov-1" => (CovariateLayout::TwoCovSettingOne, None),
        "two-cov-2" => (CovariateLayout::TwoCovSettingTwo, None),
        other => {
            return Err(CliError::config(format!(
                "--scenario must be one of s1, s2, s3, two-cov-1, two-cov-2; got `{other}`"
            )))
        }
    };
    let model = match (&args.model, implied_model) {
        (None, Some(m)) => m,
        (Some(raw), Some(m)) => {
            let parsed = parse_model(raw)?;
            if parsed != m {
                return Err(CliError::config(format!(
                    "--model {raw} contradicts scenario {scenario_raw} (implies {})",
                    m.as_str()
                )));
            }
            parsed
        }
        (Some(raw), None) => parse_model(raw)?,
        (None, None) => {
            return Err(CliError::config(format!(
                "--model is required for scenario {scenario_raw}"
            )))
        }
    };
    if !(args.rho > 0.0 && args.rho < 1.0) {
        return Err(CliError::config(format!(
            "--rho must lie strictly between 0 and 1, got {}",
            args.rho
        )));
    }
    let methods = match &args.methods {
        Some(m) => m.clone(),
        None => match layout {
            CovariateLayout::OneCovariate => {
                vec!["original".into(), "default".into(), "optimal".into()]
            }
            _ => vec![
                "original".into(),
                "default".into(),
                "linear".into(),
                "default+linear".into(),
                "optimal".into(),
                "default+optimal".into(),
            ],
        },
    };
    let ext = format_extension(&args.format)?;
    parse_penalty(&args.penalty)?;
    parse_design(&args.design)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("tpu_results.{ext}")));
    Ok(ResolvedSimulate {
        scenario: scenario_raw,
        model: model.as_str().to_string(),
        layout,
        design: parse_design(&args.design)?,
        rho: args.rho,
        n: args.n,
        n2: args.n2,
        reps: args.reps,
        boot: args.boot,
        lambda: args.lambda.clone(),
        seed: args.seed,
        methods,
        format: args.format.to_ascii_lowercase(),
        out,
        emit_csv: args.emit_csv.clone(),
        penalty: args.penalty.to_ascii_lowercase(),
    })
}

fn study_error(err: SimError) -> CliError {
    match err {
        SimError::InvalidConfig(msg) => CliError::config(msg),
        SimError::TooManyReplicateFailures { .. } => CliError::abort(err.to_string()),
        other => CliError::abort(other.to_string()),
    }
}

pub fn render(rows: &[tpu_core::simulation::MetricsRow], format: &str) -> String {
    match format {
        "md" => rows_to_markdown(rows),
        "json" => rows_to_json(rows),
        _ => rows_to_csv(rows),
    }
}

fn run_resolved(resolved: &ResolvedSimulate) -> Result<(), CliError> {
    let scenario = ScenarioConfig {
        model: parse_model(&resolved.model)?,
        layout: resolved.layout,
        rho: resolved.rho,
        design: resolved.design,
        n: resolved.n,
        n2: resolved.n2,
    };
    scenario
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    let calib = calibrate(&scenario, resolved.seed);
    // Validate method names before the long run.
    let specs = scenario_specs(&scenario, &calib, &resolved.lambda);
    parse_methods(&resolved.methods, &specs).map_err(|e| CliError::config(e.to_string()))?;

    if let Some(path) = &resolved.emit_csv {
        let gen = generate(&scenario, &calib, resolved.seed, 0)
            .map_err(|e| CliError::config(e.to_string()))?;
        write_csv(path, &gen.dataset, &csv_schema(&scenario))
            .map_err(|e| CliError::config(e.to_string()))?;
        eprintln!("wrote fixture dataset to {}", path.display());
    }

    let cfg = StudyConfig {
        scenario,
        methods: resolved.methods.clone(),
        reps: resolved.reps,
        boot: resolved.boot,
        lambda_grid: resolved.lambda.clone(),
        base_seed: resolved.seed,
        penalty: parse_penalty(&resolved.penalty)?,
    };
    let result = run_study(&cfg).map_err(study_error)?;

    let table = render(&result.rows, &resolved.format);
    std::fs::write(&resolved.out, &table)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", resolved.out.display())))?;
    print!("{table}");
    log_run(resolved, &result);
    write_sidecar(&resolved.out, resolved, &result)?;
    Ok(())
}

fn log_run(resolved: &ResolvedSimulate, result: &StudyResult) {
    eprintln!(
        "calibration: sigma_e = {:.6}{}",
        result.calibration.sigma_e,
        result
            .calibration
            .tau
            .map(|t| format!(", tau = {t:.6}"))
            .unwrap_or_default()
    );
    for (spec, counts) in &result.lambda_counts {
        let pretty: Vec<String> = counts.iter().map(|(l, c)| format!("{l} x{c}")).collect();
        eprintln!("lambda selected ({spec}): {}", pretty.join(", "));
    }
    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }
    eprintln!(
        "penalty scaling: {}; wrote {}",
        resolved.penalty,
        resolved.out.display()
    );
}

fn write_sidecar(
    out: &Path,
    resolved: &ResolvedSimulate,
    result: &StudyResult,
) -> Result<(), CliError> {
    let sidecar = Sidecar {
        version: env!("CARGO_PKG_VERSION"),
        command: "simulate",
        config: resolved,
        calibration: &result.calibration,
        lambda_selected: result.lambda_counts.clone(),
        failed_replicates: result.failed_replicates,
        warnings: &result.warnings,
    };
    let path = sidecar_path(out);
    let body = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| CliError::config(format!("sidecar serialization failed: {e}")))?;
    std::fs::write(&path, body + "\n")
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
    eprintln!("run sidecar: {}", path.display());
    Ok(())
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_owned();
    os.push(".run.json");
    PathBuf::from(os)
}

pub fn run(args: SimulateArgs) -> Result<(), CliError> {
    let resolved = match &args.config {
        Some(path) => {
            let body = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
            let parsed: serde_json::Value = serde_json::from_str(&body)
                .map_err(|e| CliError::config(format!("bad sidecar JSON: {e}")))?;
            let config = parsed.get("config").unwrap_or(&parsed);
            serde_json::from_value::<ResolvedSimulate>(config.clone())
                .map_err(|e| CliError::config(format!("bad sidecar config: {e}")))?
        }
        None => resolve(&args)?,
    };
    run_resolved(&resolved)
}
