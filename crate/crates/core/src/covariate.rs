//! Conditional-distribution models for the expensive covariates given the
//! cheap ones. These drive the conditional-expectation projection of the
//! influence function.
//!
//! Three representations are supported: a kernel-weighted discrete law whose
//! support is the subsample, a normal working model with linear mean, and the
//! known analytic laws of the two simulated covariate designs. All of them
//! evaluate, at a query `z`, to a finite list of atoms `(x, weight)` over
//! which the update integrals become weighted sums.

use crate::data::DataView;
use crate::numerics::{gauss_hermite, silverman_bandwidth, solve_spd_strict, QuadratureRule};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Gauss-Hermite order used whenever a continuous conditional law has to be
/// discretized. The integrands are smooth exponential-family expressions, so
/// order 30 is exact far beyond the Monte Carlo noise floor.
pub const GH_ORDER: usize = 30;

#[derive(Debug, Error)]
pub enum CovariateError {
    #[error("subsample view is empty")]
    EmptySubsample,
    #[error("regressor matrix is rank deficient")]
    RankDeficient,
    #[error("bandwidth must be strictly positive")]
    NonPositiveBandwidth,
    #[error("expensive covariates missing on a complete case")]
    MissingExpensive,
    #[error("all density values underflowed; the integral denominator is zero")]
    UnderflowDenominator,
}

/// A conditional law evaluated at one `z`: atoms `x_j` with probability
/// weights summing to one.
#[derive(Debug, Clone)]
pub struct EvaluatedCondDist {
    pub x_dim: usize,
    /// Atom coordinates, row-major with stride `x_dim`.
    pub xs: Vec<f64>,
    pub ws: Vec<f64>,
}

impl EvaluatedCondDist {
    pub fn len(&self) -> usize {
        self.ws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ws.is_empty()
    }

    #[inline]
    pub fn atom(&self, j: usize) -> &[f64] {
        &self.xs[j * self.x_dim..(j + 1) * self.x_dim]
    }

    /// Point mass at `x`.
    pub fn point_mass(x: &[f64]) -> Self {
        EvaluatedCondDist {
            x_dim: x.len(),
            xs: x.to_vec(),
            ws: vec![1.0],
        }
    }

    /// Mean of the atoms, the conditional expectation of `x`.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.x_dim);
        for j in 0..self.len() {
            let x = self.atom(j);
            for d in 0..self.x_dim {
                m[d] += self.ws[j] * x[d];
            }
        }
        m
    }
}

/// Anything that can produce the conditional law of `x` at a query `z`.
pub trait ConditionalDist: Sync {
    fn evaluate(&self, z: &DVector<f64>) -> EvaluatedCondDist;
}

/// Kernel-weighted discrete conditional law (Nadaraya-Watson weights over the
/// subsample support).
#[derive(Debug, Clone)]
pub struct KernelCondDist {
    /// Subsample expensive covariates, row-major stride `x_dim`.
    support: Vec<f64>,
    /// Conditioning coordinates of the subsample, row-major stride `c_dim`.
    cond: Vec<f64>,
    bandwidth: Vec<f64>,
    cond_cols: Vec<usize>,
    x_dim: usize,
    m: usize,
}

impl KernelCondDist {
    /// Builds the estimator from a subsample view, conditioning on the given
    /// `z` columns. `bandwidth` defaults to Silverman's rule per coordinate.
    pub fn from_subsample(
        subsample: &DataView,
        cond_cols: Vec<usize>,
        bandwidth: Option<Vec<f64>>,
    ) -> Result<Self, CovariateError> {
        let m = subsample.len();
        if m == 0 {
            return Err(CovariateError::EmptySubsample);
        }
        let x_dim = subsample.dataset().x_dim();
        let c_dim = cond_cols.len();
        let mut support = Vec::with_capacity(m * x_dim);
        let mut cond = Vec::with_capacity(m * c_dim);
        for (subject, _) in subsample.iter() {
            let x = subject.x.as_ref().ok_or(CovariateError::MissingExpensive)?;
            support.extend_from_slice(x.as_slice());
            for &c in &cond_cols {
                cond.push(subject.z[c]);
            }
        }
        let bandwidth = match bandwidth {
            Some(bw) => {
                if bw.len() != c_dim || bw.iter().any(|&a| !(a > 0.0)) {
                    return Err(CovariateError::NonPositiveBandwidth);
                }
                bw
            }
            None => {
                let cols: Vec<Vec<f64>> = (0..c_dim)
                    .map(|c| (0..m).map(|j| cond[j * c_dim + c]).collect())
                    .collect();
                silverman_bandwidth(&cols).values
            }
        };
        Ok(KernelCondDist {
            support,
            cond,
            bandwidth,
            cond_cols,
            x_dim,
            m,
        })
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }
}

impl ConditionalDist for KernelCondDist {
    fn evaluate(&self, z: &DVector<f64>) -> EvaluatedCondDist {
        let c_dim = self.cond_cols.len();
        let mut logs = Vec::with_capacity(self.m);
        let mut max_log = f64::NEG_INFINITY;
        for j in 0..self.m {
            let mut ss = 0.0;
            for (c, &col) in self.cond_cols.iter().enumerate() {
                let u = (self.cond[j * c_dim + c] - z[col]) / self.bandwidth[c];
                ss += u * u;
            }
            let l = -0.5 * ss;
            max_log = max_log.max(l);
            logs.push(l);
        }
        // Shifted normalization keeps every weight positive even when the
        // query sits far outside the support.
        let mut ws: Vec<f64> = logs.iter().map(|l| (l - max_log).exp()).collect();
        let total: f64 = ws.iter().sum();
        for w in &mut ws {
            *w /= total;
        }
        EvaluatedCondDist {
            x_dim: self.x_dim,
            xs: self.support.clone(),
            ws,
        }
    }
}

/// Normal working model: each component of `x` is normal with mean linear in
/// the selected `z` columns (plus intercept) and its own residual sd.
#[derive(Debug, Clone)]
pub struct NormalLinearCondDist {
    /// One coefficient vector per `x` component: intercept then slopes.
    coefs: Vec<DVector<f64>>,
    taus: Vec<f64>,
    reg_cols: Vec<usize>,
    rule: QuadratureRule,
    pub degenerate: bool,
}

impl NormalLinearCondDist {
    pub fn new(coefs: Vec<DVector<f64>>, taus: Vec<f64>, reg_cols: Vec<usize>) -> Self {
        let degenerate = taus.iter().any(|&t| t <= 0.0);
        NormalLinearCondDist {
            coefs,
            taus,
            reg_cols,
            rule: gauss_hermite(GH_ORDER),
            degenerate,
        }
    }

    pub fn coefs(&self) -> &[DVector<f64>] {
        &self.coefs
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    fn mean_at(&self, z: &DVector<f64>, component: usize) -> f64 {
        let coef = &self.coefs[component];
        let mut mu = coef[0];
        for (k, &col) in self.reg_cols.iter().enumerate() {
            mu += coef[k + 1] * z[col];
        }
        mu
    }
}

/// Weighted least squares of each expensive covariate on `(1, z[reg_cols])`
/// over the subsample; `tau` is the weighted residual sd.
pub fn fit_normal_linear(
    subsample: &DataView,
    reg_cols: Vec<usize>,
) -> Result<NormalLinearCondDist, CovariateError> {
    let m = subsample.len();
    if m == 0 {
        return Err(CovariateError::EmptySubsample);
    }
    let x_dim = subsample.dataset().x_dim();
    let p = reg_cols.len() + 1;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut design = vec![0.0; p];
    let mut rhs = vec![DVector::<f64>::zeros(p); x_dim];
    let mut sum_w = 0.0;
    for (subject, weight) in subsample.iter() {
        let x = subject.x.as_ref().ok_or(CovariateError::MissingExpensive)?;
        design[0] = 1.0;
        for (k, &col) in reg_cols.iter().enumerate() {
            design[k + 1] = subject.z[col];
        }
        for i in 0..p {
            for j in 0..p {
                gram[(i, j)] += weight * design[i] * design[j];
            }
        }
        for c in 0..x_dim {
            for i in 0..p {
                rhs[c][i] += weight * design[i] * x[c];
            }
        }
        sum_w += weight;
    }
    let mut coefs = Vec::with_capacity(x_dim);
    for c in 0..x_dim {
        let sol = solve_spd_strict(&gram, &DMatrix::from_column_slice(p, 1, rhs[c].as_slice()))
            .map_err(|_| CovariateError::RankDeficient)?;
        coefs.push(DVector::from_column_slice(sol.as_slice()));
    }
    let mut taus = vec![0.0; x_dim];
    let mut x_scale = vec![0.0; x_dim];
    for (subject, weight) in subsample.iter() {
        let x = subject.x.as_ref().unwrap();
        design[0] = 1.0;
        for (k, &col) in reg_cols.iter().enumerate() {
            design[k + 1] = subject.z[col];
        }
        for c in 0..x_dim {
            let fitted: f64 = coefs[c]
                .iter()
                .zip(design.iter())
                .map(|(b, d)| b * d)
                .sum();
            let resid = x[c] - fitted;
            taus[c] += weight * resid * resid;
            x_scale[c] += weight * x[c] * x[c];
        }
    }
    for (t, ms) in taus.iter_mut().zip(&x_scale) {
        *t /= sum_w;
        // Round-off-level residuals mean exact linearity; collapse to a
        // point mass instead of carrying a spurious sd.
        if *t <= 1e-24 * (ms / sum_w).max(1e-300) {
            *t = 0.0;
        } else {
            *t = t.sqrt();
        }
    }
    Ok(NormalLinearCondDist::new(coefs, taus, reg_cols))
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Tensor-product atoms for independent normal components; a component with
/// zero sd contributes a single point.
fn normal_atoms(means: &[f64], taus: &[f64], rule: &QuadratureRule) -> EvaluatedCondDist {
    let x_dim = means.len();
    let per_dim: Vec<usize> = taus
        .iter()
        .map(|&t| if t > 0.0 { rule.len() } else { 1 })
        .collect();
    let total: usize = per_dim.iter().product();
    let mut xs = Vec::with_capacity(total * x_dim);
    let mut ws = Vec::with_capacity(total);
    let mut index = vec![0usize; x_dim];
    for _ in 0..total {
        let mut w = 1.0;
        for d in 0..x_dim {
            if taus[d] > 0.0 {
                let k = index[d];
                xs.push(means[d] + SQRT_2 * taus[d] * rule.nodes[k]);
                w *= rule.weights[k] / SQRT_PI;
            } else {
                xs.push(means[d]);
            }
        }
        ws.push(w);
        for d in (0..x_dim).rev() {
            index[d] += 1;
            if index[d] < per_dim[d] {
                break;
            }
            index[d] = 0;
        }
    }
    EvaluatedCondDist { x_dim, xs, ws }
}

impl ConditionalDist for NormalLinearCondDist {
    fn evaluate(&self, z: &DVector<f64>) -> EvaluatedCondDist {
        let means: Vec<f64> = (0..self.coefs.len())
            .map(|c| self.mean_at(z, c))
            .collect();
        normal_atoms(&means, &self.taus, &self.rule)
    }
}

/// Known conditional laws of the two simulated covariate designs.
#[derive(Debug, Clone)]
pub enum KnownCondDist {
    /// `(x, z)` bivariate normal with standard margins, auxiliary
    /// `x* = x + e`: the conditional of `x` given `(x*, z)` is normal with
    /// mean linear in `(x*, z)`.
    BivariateNormalPosterior {
        sigma_e: f64,
        corr_xz: f64,
        xstar_col: usize,
        z_col: usize,
    },
    /// Detection-limit design: `x* = max(x, censor_at) + e` and
    /// `log z` bivariate normal with `x`. The conditional given `(x*, z)` is
    /// the latent normal `x | log z` reweighted by the measurement density,
    /// handled by quadrature over the latent normal.
    CensoredAuxiliary {
        sigma_e: f64,
        corr_xlogz: f64,
        censor_at: f64,
        xstar_col: usize,
        z_col: usize,
    },
}

/// Precomputed evaluator for a [`KnownCondDist`].
#[derive(Debug, Clone)]
pub struct KnownCondDistEval {
    kind: KnownCondDist,
    rule: QuadratureRule,
    /// Setting-I posterior coefficients: (b_xstar, b_z, tau).
    posterior: Option<(f64, f64, f64)>,
}

impl KnownCondDistEval {
    pub fn new(kind: KnownCondDist) -> Self {
        let posterior = match &kind {
            KnownCondDist::BivariateNormalPosterior {
                sigma_e, corr_xz, ..
            } => {
                // Joint covariance of (x*, z): [[1 + se^2, rho_xz], [rho_xz, 1]];
                // cross-covariances of x with (x*, z): (1, rho_xz).
                let se2 = sigma_e * sigma_e;
                let det = (1.0 + se2) - corr_xz * corr_xz;
                let b_xstar = (1.0 - corr_xz * corr_xz) / det;
                let b_z = (corr_xz * (1.0 + se2) - corr_xz) / det;
                let var = 1.0 - (b_xstar + b_z * corr_xz);
                (b_xstar, b_z, var.max(0.0).sqrt())
            }
            KnownCondDist::CensoredAuxiliary { .. } => return KnownCondDistEval {
                kind,
                rule: gauss_hermite(GH_ORDER),
                posterior: None,
            },
        };
        KnownCondDistEval {
            kind,
            rule: gauss_hermite(GH_ORDER),
            posterior: Some(posterior),
        }
    }
}

impl ConditionalDist for KnownCondDistEval {
    fn evaluate(&self, z: &DVector<f64>) -> EvaluatedCondDist {
        match &self.kind {
            KnownCondDist::BivariateNormalPosterior {
                xstar_col, z_col, ..
            } => {
                let (b_xstar, b_z, tau) = self.posterior.expect("precomputed");
                let mean = b_xstar * z[*xstar_col] + b_z * z[*z_col];
                normal_atoms(&[mean], &[tau], &self.rule)
            }
            KnownCondDist::CensoredAuxiliary {
                sigma_e,
                corr_xlogz,
                censor_at,
                xstar_col,
                z_col,
            } => {
                let xstar = z[*xstar_col];
                let u = z[*z_col].ln();
                let mean = corr_xlogz * u;
                let tau = (1.0 - corr_xlogz * corr_xlogz).sqrt();
                // Atoms of the latent normal, reweighted by the measurement
                // density of x* given x.
                let base = normal_atoms(&[mean], &[tau], &self.rule);
                let mut logs = Vec::with_capacity(base.len());
                let mut max_log = f64::NEG_INFINITY;
                for j in 0..base.len() {
                    let x = base.atom(j)[0];
                    let dev = (xstar - x.max(*censor_at)) / sigma_e;
                    let l = base.ws[j].ln() - 0.5 * dev * dev;
                    max_log = max_log.max(l);
                    logs.push(l);
                }
                let mut ws: Vec<f64> = logs.iter().map(|l| (l - max_log).exp()).collect();
                let total: f64 = ws.iter().sum();
                for w in &mut ws {
                    *w /= total;
                }
                EvaluatedCondDist {
                    x_dim: 1,
                    xs: base.xs,
                    ws,
                }
            }
        }
    }
}

/// The production conditional-distribution variants.
#[derive(Debug, Clone)]
pub enum CondDist {
    Discrete(KernelCondDist),
    NormalLinear(NormalLinearCondDist),
    Known(KnownCondDistEval),
}

impl ConditionalDist for CondDist {
    fn evaluate(&self, z: &DVector<f64>) -> EvaluatedCondDist {
        match self {
            CondDist::Discrete(d) => d.evaluate(z),
            CondDist::NormalLinear(d) => d.evaluate(z),
            CondDist::Known(d) => d.evaluate(z),
        }
    }
}

/// Integrates the pair `(psi * f, f)` against an evaluated conditional law.
/// The integrand returns `(psi(x) * f(x), f(x))` for an atom `x`.
pub fn integrate_psi_f<F>(
    dist: &EvaluatedCondDist,
    mut integrand: F,
) -> Result<(DVector<f64>, f64), CovariateError>
where
    F: FnMut(&[f64]) -> (DVector<f64>, f64),
{
    let mut den = 0.0;
    let mut num: Option<DVector<f64>> = None;
    for j in 0..dist.len() {
        let (psi_f, f) = integrand(dist.atom(j));
        let w = dist.ws[j];
        den += w * f;
        match &mut num {
            Some(acc) => acc.axpy(w, &psi_f, 1.0),
            None => num = Some(psi_f * w),
        }
    }
    if den <= 1e-300 {
        return Err(CovariateError::UnderflowDenominator);
    }
    Ok((num.expect("nonempty dist"), den))
}
