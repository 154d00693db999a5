//! The update formula, its joint and sequential variants, and the bootstrap
//! covariance blocks they consume.

use super::pairs::WorkingPair;
use super::UpdateError;
use crate::numerics::{sample_cov, solve_psd};
use nalgebra::{DMatrix, DVector};

/// Covariance blocks of the stacked vector
/// `(sqrt(n)(theta_S - theta_0), sqrt(n)(vartheta_S - vartheta_F))`.
#[derive(Debug, Clone)]
pub struct SigmaBlocks {
    pub s11: DMatrix<f64>,
    pub s12: DMatrix<f64>,
    pub s22: DMatrix<f64>,
}

impl SigmaBlocks {
    /// Assembles the blocks from bootstrap rows `(theta*, d*)`, scaling the
    /// sample covariance by `n`.
    pub fn from_bootstrap_rows(
        rows: &DMatrix<f64>,
        p: usize,
        n: usize,
    ) -> Result<Self, UpdateError> {
        let full = sample_cov(rows)? * n as f64;
        let q = full.ncols() - p;
        Ok(SigmaBlocks {
            s11: full.view((0, 0), (p, p)).into(),
            s12: full.view((0, p), (p, q)).into(),
            s22: full.view((p, p), (q, q)).into(),
        })
    }

    pub fn p(&self) -> usize {
        self.s11.nrows()
    }

    pub fn q(&self) -> usize {
        self.s22.nrows()
    }

    /// Restriction to a subset of the working-estimator coordinates.
    pub fn select(&self, coords: &[usize]) -> SigmaBlocks {
        let p = self.p();
        let q = coords.len();
        let mut s12 = DMatrix::zeros(p, q);
        let mut s22 = DMatrix::zeros(q, q);
        for (a, &i) in coords.iter().enumerate() {
            for r in 0..p {
                s12[(r, a)] = self.s12[(r, i)];
            }
            for (b, &j) in coords.iter().enumerate() {
                s22[(a, b)] = self.s22[(i, j)];
            }
        }
        SigmaBlocks {
            s11: self.s11.clone(),
            s12,
            s22,
        }
    }
}

/// Output of an update step: the shifted estimate, its estimated covariance,
/// the pairs that produced it, and per-coefficient efficiency diagnostics.
#[derive(Debug, Clone)]
pub struct UpdateResult {
    pub theta_bar: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub components: Vec<WorkingPair>,
    /// Estimated variance ratio of the original estimator to this one.
    pub re_vs_original: Vec<f64>,
    /// Whether inverting the working-estimator block needed a ridge.
    pub ridged: bool,
}

fn concat_diffs(pairs: &[WorkingPair]) -> DVector<f64> {
    let total: usize = pairs.iter().map(|p| p.dim()).sum();
    let mut d = DVector::zeros(total);
    let mut at = 0;
    for pair in pairs {
        let diff = pair.diff();
        d.rows_mut(at, diff.len()).copy_from(&diff);
        at += diff.len();
    }
    d
}

/// The joint update: subtracts `S12 S22^-1 (vartheta_S - vartheta_F)` with
/// all pairs concatenated, and estimates the covariance as
/// `(S11 - S12 S22^-1 S21) / n`.
pub fn update(
    theta_s: &DVector<f64>,
    pairs: &[WorkingPair],
    sigma: &SigmaBlocks,
    n: usize,
) -> Result<UpdateResult, UpdateError> {
    let d = concat_diffs(pairs);
    let p = theta_s.len();
    if sigma.p() != p || sigma.q() != d.len() || sigma.s12.ncols() != d.len() {
        return Err(UpdateError::DimensionMismatch);
    }
    let rhs_cols = {
        // Solve S22 X = [d | S21] in one factorization.
        let mut rhs = DMatrix::zeros(d.len(), 1 + p);
        rhs.column_mut(0).copy_from(&d);
        rhs.view_mut((0, 1), (d.len(), p))
            .copy_from(&sigma.s12.transpose());
        rhs
    };
    let sol = solve_psd(&sigma.s22, &rhs_cols)?;
    let correction = &sigma.s12 * sol.x.column(0);
    let reduction = &sigma.s12 * sol.x.view((0, 1), (d.len(), p));
    let theta_bar = theta_s - correction;
    let cov = (&sigma.s11 - reduction) / n as f64;
    let re = (0..p)
        .map(|j| {
            let orig = sigma.s11[(j, j)] / n as f64;
            let upd = cov[(j, j)];
            if upd > 0.0 {
                orig / upd
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(UpdateResult {
        theta_bar,
        cov,
        components: pairs.to_vec(),
        re_vs_original: re,
        ridged: sol.ridged,
    })
}

/// The sequential recursion, one pair at a time. Provided for the empirical
/// ordering comparison; the joint form dominates it.
pub fn sequential_update(
    theta_s: &DVector<f64>,
    pairs: &[WorkingPair],
    sigma: &SigmaBlocks,
    n: usize,
) -> Result<UpdateResult, UpdateError> {
    let p = theta_s.len();
    let dims: Vec<usize> = pairs.iter().map(|pr| pr.dim()).collect();
    let total: usize = dims.iter().sum();
    if sigma.p() != p || sigma.q() != total {
        return Err(UpdateError::DimensionMismatch);
    }
    let mut theta = theta_s.clone();
    let mut s11 = sigma.s11.clone();
    let mut cross = sigma.s12.clone();
    let mut ridged = false;
    let mut offset = 0;
    for (k, pair) in pairs.iter().enumerate() {
        let qk = dims[k];
        let d_k = pair.diff();
        let v_kk: DMatrix<f64> = sigma.s22.view((offset, offset), (qk, qk)).into();
        let c_k: DMatrix<f64> = cross.view((0, offset), (p, qk)).into();
        // One factorization of V_kk against [d_k | C_k' | V_k,rest].
        let rest = total - offset - qk;
        let mut rhs = DMatrix::zeros(qk, 1 + p + rest);
        rhs.column_mut(0).copy_from(&d_k);
        rhs.view_mut((0, 1), (qk, p)).copy_from(&c_k.transpose());
        if rest > 0 {
            rhs.view_mut((0, 1 + p), (qk, rest))
                .copy_from(&sigma.s22.view((offset, offset + qk), (qk, rest)));
        }
        let sol = solve_psd(&v_kk, &rhs)?;
        ridged |= sol.ridged;
        theta -= &c_k * sol.x.column(0);
        s11 -= &c_k * sol.x.view((0, 1), (qk, p));
        if rest > 0 {
            let adj = &c_k * sol.x.view((0, 1 + p), (qk, rest));
            let mut rest_view = cross.view_mut((0, offset + qk), (p, rest));
            rest_view -= adj;
        }
        offset += qk;
    }
    let cov = &s11 / n as f64;
    let re = (0..p)
        .map(|j| {
            let orig = sigma.s11[(j, j)] / n as f64;
            let upd = cov[(j, j)];
            if upd > 0.0 {
                orig / upd
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(UpdateResult {
        theta_bar: theta,
        cov,
        components: pairs.to_vec(),
        re_vs_original: re,
        ridged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn pair_of(diff: &[f64]) -> WorkingPair {
        WorkingPair {
            vartheta_s: DVector::from_column_slice(diff),
            vartheta_f: DVector::zeros(diff.len()),
            lambda_used: 0.0,
        }
    }

    fn random_psd(rng: &mut impl Rng, dim: usize) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        &raw * raw.transpose() + DMatrix::identity(dim, dim) * 0.1
    }

    fn blocks_from(full: &DMatrix<f64>, p: usize) -> SigmaBlocks {
        let q = full.ncols() - p;
        SigmaBlocks {
            s11: full.view((0, 0), (p, p)).into(),
            s12: full.view((0, p), (p, q)).into(),
            s22: full.view((p, p), (q, q)).into(),
        }
    }

    #[test]
    fn zero_cross_covariance_leaves_the_estimate() {
        let sigma = SigmaBlocks {
            s11: DMatrix::identity(1, 1),
            s12: DMatrix::zeros(1, 1),
            s22: DMatrix::identity(1, 1),
        };
        let theta = DVector::from_vec(vec![1.0]);
        let out = update(&theta, &[pair_of(&[0.2])], &sigma, 100).unwrap();
        assert_abs_diff_eq!(out.theta_bar[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out.cov[(0, 0)], 0.01, epsilon = 1e-14);
    }

    #[test]
    fn scalar_hand_arithmetic() {
        // theta_S = 1.0, d = 0.2, S12 = 0.5, S22 = 1.0, S11 = 1.0, n = 100:
        // theta_bar = 1 - 0.5 * 0.2 = 0.9, var = (1 - 0.25) / 100.
        let sigma = SigmaBlocks {
            s11: DMatrix::from_element(1, 1, 1.0),
            s12: DMatrix::from_element(1, 1, 0.5),
            s22: DMatrix::from_element(1, 1, 1.0),
        };
        let theta = DVector::from_vec(vec![1.0]);
        let out = update(&theta, &[pair_of(&[0.2])], &sigma, 100).unwrap();
        assert_abs_diff_eq!(out.theta_bar[0], 0.9, epsilon = 1e-14);
        assert_abs_diff_eq!(out.cov[(0, 0)], 0.75 / 100.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out.re_vs_original[0], 1.0 / 0.75, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_component_engages_ridge_and_matches_single() {
        // Two identical working components: S22 is singular; the ridged
        // joint update must agree with the single-component one.
        let mut rng = crate::numerics::seeded_rng(21, 0);
        for _ in 0..20 {
            let s11 = random_psd(&mut rng, 1);
            let s12_single = DMatrix::from_fn(1, 1, |_, _| rng.random_range(-0.5..0.5));
            let s22_single = random_psd(&mut rng, 1);
            let d = rng.random_range(-0.5..0.5);

            let single = SigmaBlocks {
                s11: s11.clone(),
                s12: s12_single.clone(),
                s22: s22_single.clone(),
            };
            let mut s12_dup = DMatrix::zeros(1, 2);
            s12_dup[(0, 0)] = s12_single[(0, 0)];
            s12_dup[(0, 1)] = s12_single[(0, 0)];
            let mut s22_dup = DMatrix::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    s22_dup[(i, j)] = s22_single[(0, 0)];
                }
            }
            let dup = SigmaBlocks {
                s11,
                s12: s12_dup,
                s22: s22_dup,
            };
            let theta = DVector::from_vec(vec![1.0]);
            let a = update(&theta, &[pair_of(&[d])], &single, 50).unwrap();
            let b = update(&theta, &[pair_of(&[d]), pair_of(&[d])], &dup, 50).unwrap();
            assert!(b.ridged);
            assert_abs_diff_eq!(a.theta_bar[0], b.theta_bar[0], epsilon = 1e-6);
            assert_abs_diff_eq!(a.cov[(0, 0)], b.cov[(0, 0)], epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_diff_pairs_leave_theta_untouched() {
        let mut rng = crate::numerics::seeded_rng(22, 0);
        let full = random_psd(&mut rng, 4);
        let sigma = blocks_from(&full, 2);
        let theta = DVector::from_vec(vec![0.3, -0.8]);
        let out = update(&theta, &[pair_of(&[0.0, 0.0])], &sigma, 10).unwrap();
        assert!((out.theta_bar.clone() - theta).amax() < 1e-14);
    }

    #[test]
    fn single_pair_sequential_equals_joint() {
        let mut rng = crate::numerics::seeded_rng(23, 0);
        let full = random_psd(&mut rng, 3);
        let sigma = blocks_from(&full, 1);
        let theta = DVector::from_vec(vec![0.4]);
        let pairs = [pair_of(&[0.1, -0.2])];
        let joint = update(&theta, &pairs, &sigma, 25).unwrap();
        let seq = sequential_update(&theta, &pairs, &sigma, 25).unwrap();
        assert_abs_diff_eq!(joint.theta_bar[0], seq.theta_bar[0], epsilon = 1e-12);
        assert_abs_diff_eq!(joint.cov[(0, 0)], seq.cov[(0, 0)], epsilon = 1e-12);
    }

    #[test]
    fn block_diagonal_makes_sequential_equal_joint() {
        let mut rng = crate::numerics::seeded_rng(24, 0);
        for _ in 0..10 {
            let p = 1;
            let s11 = random_psd(&mut rng, p);
            let v11 = random_psd(&mut rng, 1);
            let v22 = random_psd(&mut rng, 1);
            let s12 = DMatrix::from_fn(p, 2, |_, _| rng.random_range(-0.3..0.3));
            let mut s22 = DMatrix::zeros(2, 2);
            s22[(0, 0)] = v11[(0, 0)];
            s22[(1, 1)] = v22[(0, 0)];
            let sigma = SigmaBlocks { s11, s12, s22 };
            let theta = DVector::from_vec(vec![1.0]);
            let pairs = [pair_of(&[0.1]), pair_of(&[-0.2])];
            let joint = update(&theta, &pairs, &sigma, 30).unwrap();
            let seq = sequential_update(&theta, &pairs, &sigma, 30).unwrap();
            assert_abs_diff_eq!(joint.theta_bar[0], seq.theta_bar[0], epsilon = 1e-10);
            assert_abs_diff_eq!(joint.cov[(0, 0)], seq.cov[(0, 0)], epsilon = 1e-10);
        }
    }

    #[test]
    fn joint_dominates_sequential_dominates_single() {
        // The block-inverse identity on random PSD blocks.
        let mut rng = crate::numerics::seeded_rng(25, 0);
        for _ in 0..200 {
            let p = rng.random_range(1..3);
            let q1 = rng.random_range(1..3);
            let q2 = rng.random_range(1..3);
            let full = random_psd(&mut rng, p + q1 + q2);
            let sigma = blocks_from(&full, p);
            let theta = DVector::zeros(p);
            let pairs = [pair_of(&vec![0.0; q1]), pair_of(&vec![0.0; q2])];
            let joint = update(&theta, &pairs, &sigma, 1).unwrap();
            let seq = sequential_update(&theta, &pairs, &sigma, 1).unwrap();
            let single = update(
                &theta,
                &pairs[..1],
                &sigma.select(&(0..q1).collect::<Vec<_>>()),
                1,
            )
            .unwrap();
            let tol = 1e-10;
            let le = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
                let eig = (b - a).symmetric_eigen();
                eig.eigenvalues.iter().all(|&l| l >= -tol)
            };
            assert!(le(&joint.cov, &seq.cov), "joint <= sequential violated");
            assert!(le(&seq.cov, &single.cov), "sequential <= single violated");
            assert!(le(&single.cov, &(sigma.s11.clone() / 1.0)), "single <= original violated");
        }
    }

    #[test]
    fn variance_never_increases() {
        let mut rng = crate::numerics::seeded_rng(26, 0);
        for _ in 0..50 {
            let full = random_psd(&mut rng, 5);
            let sigma = blocks_from(&full, 2);
            let theta = DVector::zeros(2);
            let pairs = [pair_of(&[0.1, 0.2, -0.1])];
            let out = update(&theta, &pairs, &sigma, 40).unwrap();
            for j in 0..2 {
                assert!(out.cov[(j, j)] <= sigma.s11[(j, j)] / 40.0 + 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sigma = SigmaBlocks {
            s11: DMatrix::identity(1, 1),
            s12: DMatrix::zeros(1, 2),
            s22: DMatrix::identity(2, 2),
        };
        let theta = DVector::from_vec(vec![1.0]);
        let err = update(&theta, &[pair_of(&[0.1])], &sigma, 10).unwrap_err();
        assert!(matches!(err, UpdateError::DimensionMismatch));
    }
}
