//! Scenario constants that the designs state only as targets: the surrogate
//! noise sd achieving a given correlation, and the censoring cap achieving a
//! 50% censoring rate. Where no closed form exists they are calibrated by
//! bisection against fixed million-draw Monte Carlo samples.

use super::{CovariateLayout, ScenarioConfig};
use crate::numerics::seeded_rng;
use crate::outcome::ModelKind;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Reserved stream for calibration draws; replicate and bootstrap streams
/// stay well below this.
const CALIBRATION_STREAM: u64 = 1 << 62;

const MC_DRAWS: usize = 1_000_000;
const TARGET_CENSORING: f64 = 0.5;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Calibration {
    /// Noise sd of the surrogate.
    pub sigma_e: f64,
    /// Censoring cap (survival scenarios only).
    pub tau: Option<f64>,
}

fn bisect(mut lo: f64, mut hi: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    // f must be increasing in its argument; the root is f = 0.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < tol {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Correlation of `x` with `c(x) + sigma_e * e` from cached draw moments.
fn censored_surrogate_sigma(rho: f64, base_seed: u64) -> f64 {
    let mut rng = seeded_rng(base_seed, CALIBRATION_STREAM);
    let mut sx = 0.0;
    let mut sc = 0.0;
    let mut sxx = 0.0;
    let mut scc = 0.0;
    let mut sxc = 0.0;
    for _ in 0..MC_DRAWS {
        // Marginal of x under the truncated joint: x | log z with log z <= 2.
        let x = loop {
            let u1: f64 = StandardNormal.sample(&mut rng);
            let u2: f64 = StandardNormal.sample(&mut rng);
            let v = 0.7 * u1 + (1.0f64 - 0.49).sqrt() * u2;
            if v <= 2.0 {
                break u1;
            }
        };
        let c = x.max(-1.0);
        sx += x;
        sc += c;
        sxx += x * x;
        scc += c * c;
        sxc += x * c;
    }
    let nf = MC_DRAWS as f64;
    let var_x = sxx / nf - (sx / nf) * (sx / nf);
    let var_c = scc / nf - (sc / nf) * (sc / nf);
    let cov = sxc / nf - (sx / nf) * (sc / nf);
    // corr(x, c + s e) = cov / sqrt(var_x (var_c + s^2)), decreasing in s.
    bisect(1e-6, 20.0, 1e-10, |s| {
        rho - cov / (var_x * (var_c + s * s)).sqrt()
    })
}

/// Censoring cap for `C = min(Unif(0, 5 tau / 3), tau)` hitting the target
/// censoring rate, bisected against cached failure-time draws.
fn censoring_cap(config: &ScenarioConfig, sigma_e: f64, base_seed: u64) -> f64 {
    let mut rng = seeded_rng(base_seed, CALIBRATION_STREAM + 1);
    let draws = 200_000;
    let mut failure_times = Vec::with_capacity(draws);
    let mut uc = Vec::with_capacity(draws);
    let _ = sigma_e;
    for _ in 0..draws {
        let eta = match config.layout {
            CovariateLayout::OneCovariate => {
                let x: f64 = StandardNormal.sample(&mut rng);
                2f64.ln() * x
            }
            CovariateLayout::TwoCovSettingOne => {
                let u1: f64 = StandardNormal.sample(&mut rng);
                let u2: f64 = StandardNormal.sample(&mut rng);
                let x = u1;
                let z = 0.7 * u1 + (1.0f64 - 0.49).sqrt() * u2;
                2f64.ln() * x + 0.5 * z
            }
            CovariateLayout::TwoCovSettingTwo => loop {
                let u1: f64 = StandardNormal.sample(&mut rng);
                let u2: f64 = StandardNormal.sample(&mut rng);
                let v = 0.7 * u1 + (1.0f64 - 0.49).sqrt() * u2;
                if v <= 2.0 {
                    break 2f64.ln() * u1 + 0.5 * v.exp();
                }
            },
        };
        let u: f64 = rng.random();
        // Baseline hazard 0.5 t, cumulative 0.25 t^2.
        failure_times.push(2.0 * (-u.ln() * (-eta).exp()).sqrt());
        uc.push(rng.random::<f64>());
    }
    // Censoring fraction is decreasing in tau.
    bisect(1e-3, 100.0, 1e-8, |tau| {
        let censored = failure_times
            .iter()
            .zip(&uc)
            .filter(|(&t, &u)| {
                let c = (u * 5.0 * tau / 3.0).min(tau);
                t > c
            })
            .count();
        TARGET_CENSORING - censored as f64 / draws as f64
    })
}

/// Resolves the scenario constants. The surrogate sd is exact in the
/// additive designs; the detection-limit design and the censoring cap are
/// calibrated numerically against fixed seeded draws.
pub fn calibrate(config: &ScenarioConfig, base_seed: u64) -> Calibration {
    let sigma_e = match config.layout {
        CovariateLayout::OneCovariate | CovariateLayout::TwoCovSettingOne => {
            (1.0 / (config.rho * config.rho) - 1.0).sqrt()
        }
        CovariateLayout::TwoCovSettingTwo => censored_surrogate_sigma(config.rho, base_seed),
    };
    let tau = match config.model {
        ModelKind::Cox => Some(censoring_cap(config, sigma_e, base_seed)),
        _ => None,
    };
    Calibration { sigma_e, tau }
}
