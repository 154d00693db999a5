use tpu_core::outcome::ModelKind;
use tpu_core::simulation::{run_study, rows_to_markdown, CovariateLayout, SamplingDesign, ScenarioConfig, StudyConfig};
use tpu_core::update::PenaltyScaling;

fn main() {
    let t0 = std::time::Instant::now();
    let cfg = StudyConfig {
        scenario: ScenarioConfig {
            model: ModelKind::Linear,
            layout: CovariateLayout::OneCovariate,
            rho: 0.7,
            design: SamplingDesign::Mcar,
            n: 1000,
            n2: 200,
        },
        methods: vec!["original".into(), "default".into(), "optimal".into()],
        reps: 100,
        boot: 100,
        lambda_grid: vec![0.005, 0.01, 0.02, 0.04],
        base_seed: 20260810,
        penalty: PenaltyScaling::AveragedEquation,
    };
    let out = run_study(&cfg).unwrap();
    println!("{}", rows_to_markdown(&out.rows));
    println!("failed: {}; warnings: {:?}", out.failed_replicates, out.warnings);
    println!("elapsed: {:.1?}", t0.elapsed());
}
