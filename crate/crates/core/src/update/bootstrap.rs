//! Design-preserving bootstrap: resampling within (stratum x selection)
//! cells and the covariance of the replicated estimator stack.

use super::combine::SigmaBlocks;
use super::UpdateError;
use crate::data::TwoPhaseDataset;
use crate::numerics::{seeded_rng, StudyRng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

/// Resamples subject indices with replacement within each
/// `(selection indicator, selection probability)` cell, preserving the cell
/// counts. Under the supported designs the probability identifies the
/// stratum, so each replicate keeps the two-phase structure; `pi` values
/// travel with the subjects unchanged.
pub fn resample_indices(dataset: &TwoPhaseDataset, rng: &mut StudyRng) -> Vec<usize> {
    // Cells keyed by (r, pi bits) in order of first appearance so the draw
    // sequence is deterministic.
    let mut keys: Vec<(bool, u64)> = Vec::new();
    let mut cells: Vec<Vec<usize>> = Vec::new();
    for (i, s) in dataset.subjects().iter().enumerate() {
        let key = (s.r, s.pi.to_bits());
        match keys.iter().position(|&k| k == key) {
            Some(c) => cells[c].push(i),
            None => {
                keys.push(key);
                cells.push(vec![i]);
            }
        }
    }
    let mut out = Vec::with_capacity(dataset.len());
    for cell in &cells {
        for _ in 0..cell.len() {
            out.push(cell[rng.random_range(0..cell.len())]);
        }
    }
    out
}

/// Runs `pipeline` on `b` bootstrap replicates and assembles the covariance
/// blocks of the stacked `(theta*, d*)` vectors, scaled by `n`.
///
/// The pipeline receives the resampled index multiset and the replicate
/// number; its generator stream is `stream_offset + replicate`. Failed
/// replicates are dropped and counted, up to 10% of `b`.
pub fn bootstrap_sigma<F>(
    dataset: &TwoPhaseDataset,
    pipeline: F,
    b: usize,
    base_seed: u64,
    stream_offset: u64,
    parallel: bool,
) -> Result<(SigmaBlocks, usize), UpdateError>
where
    F: Fn(&[usize], usize) -> Result<(DVector<f64>, DVector<f64>), UpdateError> + Sync,
{
    assert!(b >= 2, "bootstrap needs at least two replicates");
    let run_one = |rep: usize| -> Option<(DVector<f64>, DVector<f64>)> {
        let mut rng = seeded_rng(base_seed, stream_offset + rep as u64);
        let indices = resample_indices(dataset, &mut rng);
        pipeline(&indices, rep).ok()
    };
    let draws: Vec<Option<(DVector<f64>, DVector<f64>)>> = if parallel {
        (0..b).into_par_iter().map(run_one).collect()
    } else {
        (0..b).map(run_one).collect()
    };
    rows_to_sigma(draws, dataset.len(), b)
}

pub(super) fn rows_to_sigma(
    draws: Vec<Option<(DVector<f64>, DVector<f64>)>>,
    n: usize,
    b: usize,
) -> Result<(SigmaBlocks, usize), UpdateError> {
    let kept: Vec<&(DVector<f64>, DVector<f64>)> = draws.iter().flatten().collect();
    let dropped = b - kept.len();
    if dropped * 10 > b {
        return Err(UpdateError::TooManyFailures { dropped, total: b });
    }
    if kept.len() < 2 {
        return Err(UpdateError::NotEnoughReplicates);
    }
    let p = kept[0].0.len();
    let q = kept[0].1.len();
    let mut rows = DMatrix::zeros(kept.len(), p + q);
    for (i, (theta, d)) in kept.iter().enumerate() {
        if theta.len() != p || d.len() != q {
            return Err(UpdateError::DimensionMismatch);
        }
        for j in 0..p {
            rows[(i, j)] = theta[j];
        }
        for j in 0..q {
            rows[(i, p + j)] = d[j];
        }
    }
    let sigma = SigmaBlocks::from_bootstrap_rows(&rows, p, n)?;
    Ok((sigma, dropped))
}
