//! Replicate generation: covariates, surrogate, outcome, and the Phase II
//! selection with its design weights.

use super::{Calibration, CovariateLayout, SamplingDesign, ScenarioConfig, SimError};
use crate::data::{
    compute_design_weights, CsvSchema, Design, DesignSpec, Outcome, OutcomeColumns, Subject,
    TwoPhaseDataset,
};
use crate::numerics::seeded_rng;
use crate::outcome::ModelKind;
use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: TwoPhaseDataset,
    pub truth: Vec<f64>,
    /// Set when an outcome-dependent stratum fell short of its target count
    /// and the other stratum absorbed the difference.
    pub shortfall: bool,
}

struct Raw {
    x: f64,
    z: Vec<f64>,
    outcome: Outcome,
}

/// Draws one replicate. The generator stream is `rep_index`, so replicates
/// are independent and reproducible in parallel.
pub fn generate(
    config: &ScenarioConfig,
    calib: &Calibration,
    base_seed: u64,
    rep_index: u64,
) -> Result<Generated, SimError> {
    config.validate()?;
    let mut rng = seeded_rng(base_seed, rep_index);
    let truth = config.truth();
    let mut raws = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        // Covariates and surrogate.
        let (x, z_true) = match config.layout {
            CovariateLayout::OneCovariate => {
                let x: f64 = StandardNormal.sample(&mut rng);
                (x, None)
            }
            CovariateLayout::TwoCovSettingOne => {
                let u1: f64 = StandardNormal.sample(&mut rng);
                let u2: f64 = StandardNormal.sample(&mut rng);
                (u1, Some(0.7 * u1 + (1.0f64 - 0.49).sqrt() * u2))
            }
            CovariateLayout::TwoCovSettingTwo => loop {
                let u1: f64 = StandardNormal.sample(&mut rng);
                let u2: f64 = StandardNormal.sample(&mut rng);
                let v = 0.7 * u1 + (1.0f64 - 0.49).sqrt() * u2;
                if v <= 2.0 {
                    break (u1, Some(v.exp()));
                }
            },
        };
        let e: f64 = StandardNormal.sample(&mut rng);
        let observed_x = match config.layout {
            CovariateLayout::TwoCovSettingTwo => x.max(-1.0),
            _ => x,
        };
        let xstar = observed_x + calib.sigma_e * e;

        let eta: f64 = {
            let mut v = truth[0] * x;
            if let Some(z) = z_true {
                v += truth[1] * z;
            }
            v
        };
        let outcome = match config.model {
            ModelKind::Linear => {
                let eps: f64 = StandardNormal.sample(&mut rng);
                Outcome::Continuous(eta + 0.5 * eps)
            }
            ModelKind::Logistic => {
                let p = 1.0 / (1.0 + (-eta).exp());
                Outcome::Binary(u8::from(rng.random::<f64>() < p))
            }
            ModelKind::Cox => {
                let tau = calib.tau.expect("survival scenarios carry tau");
                let u: f64 = rng.random();
                let t_fail = 2.0 * (-u.ln() * (-eta).exp()).sqrt();
                let c = (rng.random::<f64>() * 5.0 * tau / 3.0).min(tau);
                Outcome::Survival {
                    time: t_fail.min(c),
                    event: t_fail <= c,
                }
            }
        };
        let z = match z_true {
            None => vec![xstar],
            Some(zv) => vec![zv, xstar],
        };
        raws.push(Raw { x, z, outcome });
    }

    // Phase II selection.
    let (selected, design, shortfall) = select(config, &raws, &mut rng)?;
    let mut flags = vec![false; config.n];
    for &i in &selected {
        flags[i] = true;
    }
    let subjects: Vec<Subject> = raws
        .into_iter()
        .zip(&flags)
        .map(|(raw, &r)| Subject {
            outcome: raw.outcome,
            z: DVector::from_vec(raw.z),
            x: r.then(|| DVector::from_vec(vec![raw.x])),
            r,
            pi: 1.0,
        })
        .collect();
    let z_dim = match config.layout {
        CovariateLayout::OneCovariate => 1,
        _ => 2,
    };
    let mut dataset = TwoPhaseDataset::new(subjects, 1, z_dim, Design::Supplied)?;
    compute_design_weights(&mut dataset, &design)?;
    Ok(Generated {
        dataset,
        truth,
        shortfall,
    })
}

fn select(
    config: &ScenarioConfig,
    raws: &[Raw],
    rng: &mut crate::numerics::StudyRng,
) -> Result<(Vec<usize>, DesignSpec, bool), SimError> {
    let n = raws.len();
    match config.design {
        SamplingDesign::Mcar => {
            let chosen = sample(rng, n, config.n2).into_vec();
            Ok((chosen, DesignSpec::Mcar { n2: config.n2 }, false))
        }
        SamplingDesign::Mar => {
            // Stratum 0 is the outcome-positive group: top 30% for a
            // continuous outcome, cases otherwise.
            let strata: Vec<usize> = match config.model {
                ModelKind::Linear => {
                    let take = ((0.3 * n as f64).round() as usize).clamp(1, n - 1);
                    let mut order: Vec<usize> = (0..n).collect();
                    order.sort_by(|&a, &b| {
                        raws[b]
                            .outcome
                            .response()
                            .total_cmp(&raws[a].outcome.response())
                            .then(a.cmp(&b))
                    });
                    let mut labels = vec![1usize; n];
                    for &i in order.iter().take(take) {
                        labels[i] = 0;
                    }
                    labels
                }
                ModelKind::Logistic => raws
                    .iter()
                    .map(|r| match r.outcome {
                        Outcome::Binary(1) => 0,
                        _ => 1,
                    })
                    .collect(),
                ModelKind::Cox => raws
                    .iter()
                    .map(|r| match r.outcome {
                        Outcome::Survival { event: true, .. } => 0,
                        _ => 1,
                    })
                    .collect(),
            };
            let sizes = [
                strata.iter().filter(|&&s| s == 0).count(),
                strata.iter().filter(|&&s| s == 1).count(),
            ];
            let want0 = (0.7 * config.n2 as f64).round() as usize;
            let want = [want0, config.n2 - want0];
            // A short stratum is sampled in full; the other absorbs the rest.
            let mut take = want;
            let mut shortfall = false;
            for h in 0..2 {
                if take[h] > sizes[h] {
                    let deficit = take[h] - sizes[h];
                    take[h] = sizes[h];
                    take[1 - h] += deficit;
                    shortfall = true;
                }
            }
            if take[0] > sizes[0] || take[1] > sizes[1] {
                return Err(SimError::InvalidConfig(
                    "subsample size exceeds available subjects in both strata".into(),
                ));
            }
            let mut chosen = Vec::with_capacity(config.n2);
            for h in 0..2 {
                let members: Vec<usize> =
                    (0..n).filter(|&i| strata[i] == h).collect();
                for pick in sample(rng, members.len(), take[h]).into_iter() {
                    chosen.push(members[pick]);
                }
            }
            Ok((
                chosen,
                DesignSpec::Stratified {
                    strata,
                    samples: take.to_vec(),
                },
                shortfall,
            ))
        }
    }
}

/// Column mapping matching [`generate`]'s layout, for export and re-analysis.
pub fn csv_schema(config: &ScenarioConfig) -> CsvSchema {
    let outcome = match config.model {
        ModelKind::Linear => OutcomeColumns::Continuous { y: "y".into() },
        ModelKind::Logistic => OutcomeColumns::Binary { y: "y".into() },
        ModelKind::Cox => OutcomeColumns::Survival {
            time: "time".into(),
            status: "status".into(),
        },
    };
    let z = match config.layout {
        CovariateLayout::OneCovariate => vec!["z1".to_string()],
        _ => vec!["z1".to_string(), "z2".to_string()],
    };
    CsvSchema {
        outcome,
        z,
        x: vec!["x1".to_string()],
        r: "r".into(),
        pi: Some("pi".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::calibrate;

    fn config(model: ModelKind, layout: CovariateLayout, design: SamplingDesign) -> ScenarioConfig {
        ScenarioConfig {
            model,
            layout,
            rho: 0.7,
            design,
            n: 1000,
            n2: 200,
        }
    }

    #[test]
    fn surrogate_correlation_is_calibrated() {
        let cfg = config(
            ModelKind::Linear,
            CovariateLayout::OneCovariate,
            SamplingDesign::Mcar,
        );
        let calib = calibrate(&cfg, 42);
        // Pool covariate draws across replicates for a large-sample check.
        let mut xs = Vec::new();
        let mut stars = Vec::new();
        for rep in 0..50 {
            let gen = generate(&cfg, &calib, 42, rep).unwrap();
            for s in gen.dataset.subjects() {
                stars.push(s.z[0]);
            }
            // x is only stored for selected subjects; recompute correlation
            // on those.
            for s in gen.dataset.subjects() {
                if let Some(x) = &s.x {
                    xs.push((x[0], s.z[0]));
                }
            }
        }
        let nf = xs.len() as f64;
        let mx = xs.iter().map(|p| p.0).sum::<f64>() / nf;
        let ms = xs.iter().map(|p| p.1).sum::<f64>() / nf;
        let vx = xs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>() / nf;
        let vs = xs.iter().map(|p| (p.1 - ms) * (p.1 - ms)).sum::<f64>() / nf;
        let c = xs
            .iter()
            .map(|p| (p.0 - mx) * (p.1 - ms))
            .sum::<f64>()
            / nf;
        let corr = c / (vx * vs).sqrt();
        assert!((corr - 0.7).abs() < 0.02, "corr {corr}");
    }

    #[test]
    fn mcar_selects_exactly_n2_with_constant_weight() {
        let cfg = config(
            ModelKind::Linear,
            CovariateLayout::OneCovariate,
            SamplingDesign::Mcar,
        );
        let calib = calibrate(&cfg, 1);
        let gen = generate(&cfg, &calib, 1, 0).unwrap();
        assert_eq!(gen.dataset.n_complete(), 200);
        assert!(gen
            .dataset
            .subjects()
            .iter()
            .all(|s| (s.pi - 0.2).abs() < 1e-15));
    }

    #[test]
    fn mar_selects_the_stated_stratum_counts() {
        for model in [ModelKind::Linear, ModelKind::Logistic, ModelKind::Cox] {
            let cfg = config(model, CovariateLayout::OneCovariate, SamplingDesign::Mar);
            let calib = calibrate(&cfg, 2);
            for rep in 0..3 {
                let gen = generate(&cfg, &calib, 2, rep).unwrap();
                assert!(!gen.shortfall);
                // Weights identify the strata; counts must be exactly 140/60.
                let mut hi = 0;
                let mut lo = 0;
                let mut pis: Vec<f64> = gen
                    .dataset
                    .subjects()
                    .iter()
                    .filter(|s| s.r)
                    .map(|s| s.pi)
                    .collect();
                pis.sort_by(|a, b| a.total_cmp(b));
                pis.dedup();
                assert_eq!(pis.len(), 2);
                for s in gen.dataset.subjects().iter().filter(|s| s.r) {
                    if s.pi == pis[1] {
                        hi += 1;
                    } else {
                        lo += 1;
                    }
                }
                // The positive stratum has the larger selection probability
                // in every scenario here (140 of ~300-500 vs 60 of ~500-700).
                assert_eq!(hi + lo, 200);
                assert_eq!(hi.max(lo), 140);
                assert_eq!(hi.min(lo), 60);
            }
        }
    }

    #[test]
    fn mar_continuous_threshold_is_the_upper_30th_percentile() {
        let cfg = config(
            ModelKind::Linear,
            CovariateLayout::OneCovariate,
            SamplingDesign::Mar,
        );
        let calib = calibrate(&cfg, 3);
        let gen = generate(&cfg, &calib, 3, 0).unwrap();
        // Subjects in the high stratum (pi = 140/300) must be exactly the
        // 300 largest outcomes.
        let mut ys: Vec<f64> = gen
            .dataset
            .subjects()
            .iter()
            .map(|s| s.outcome.response())
            .collect();
        ys.sort_by(|a, b| b.total_cmp(a));
        let cut = ys[299];
        let hi_pi = 140.0 / 300.0;
        for s in gen.dataset.subjects() {
            let in_hi = (s.pi - hi_pi).abs() < 1e-12;
            assert_eq!(in_hi, s.outcome.response() >= cut);
        }
    }

    #[test]
    fn cox_censoring_rate_is_near_half() {
        let cfg = config(ModelKind::Cox, CovariateLayout::OneCovariate, SamplingDesign::Mcar);
        let calib = calibrate(&cfg, 4);
        let mut censored = 0;
        let mut total = 0;
        for rep in 0..20 {
            let gen = generate(&cfg, &calib, 4, rep).unwrap();
            for s in gen.dataset.subjects() {
                if let Outcome::Survival { event, .. } = s.outcome {
                    total += 1;
                    if !event {
                        censored += 1;
                    }
                }
            }
        }
        let rate = censored as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.03, "censoring rate {rate}");
    }

    #[test]
    fn identical_streams_reproduce_the_dataset() {
        let cfg = config(
            ModelKind::Logistic,
            CovariateLayout::TwoCovSettingTwo,
            SamplingDesign::Mar,
        );
        let calib = calibrate(&cfg, 7);
        let a = generate(&cfg, &calib, 7, 3).unwrap();
        let b = generate(&cfg, &calib, 7, 3).unwrap();
        for (sa, sb) in a.dataset.subjects().iter().zip(b.dataset.subjects()) {
            assert_eq!(sa.outcome, sb.outcome);
            assert_eq!(sa.z, sb.z);
            assert_eq!(sa.x, sb.x);
            assert_eq!(sa.pi, sb.pi);
        }
        let c = generate(&cfg, &calib, 7, 4).unwrap();
        assert!(a
            .dataset
            .subjects()
            .iter()
            .zip(c.dataset.subjects())
            .any(|(sa, sc)| sa.z != sc.z));
    }
}
