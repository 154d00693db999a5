//! Weighted Cox partial likelihood, Breslow baseline, and the pieces of the
//! Lin-Wei influence function.
//!
//! The nuisance object keeps the subsample rows so the risk-set averages
//! `s0`, `s1` can be re-evaluated at any trial `theta`; the baseline hazard
//! and the empirical event distribution are frozen at the fitted value.

use super::{FitError, FitResult, Nuisance, Regressors, SubjectPrep};
use crate::data::{DataView, Outcome};
use crate::numerics::solve_spd_strict;
use nalgebra::{DMatrix, DVector};

const MAX_ITER: usize = 50;
const DIVERGENCE_BOUND: f64 = 50.0;

/// Breslow baseline plus the data needed for the risk-set functions.
#[derive(Debug, Clone)]
pub struct CoxNuisance {
    /// Subsample rows sorted by observed time, ascending.
    times: Vec<f64>,
    weights: Vec<f64>,
    /// Design rows, row-major with stride `dim`.
    designs: Vec<f64>,
    dim: usize,
    /// Distinct event times, ascending.
    event_times: Vec<f64>,
    /// Weighted number of events at each event time.
    event_weights: Vec<f64>,
    /// First sorted position belonging to each event time's risk set.
    event_positions: Vec<usize>,
    /// Baseline hazard jumps at the fitted theta.
    breslow_jumps: Vec<f64>,
    breslow_cum: Vec<f64>,
    /// Jumps of the weighted empirical mean of `N(t)`.
    fbar_jumps: Vec<f64>,
}

impl CoxNuisance {
    /// Cumulative baseline hazard, a right-continuous step function.
    pub fn cum_hazard(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&et| et <= t);
        if k == 0 {
            0.0
        } else {
            self.breslow_cum[k - 1]
        }
    }

    /// Log of the baseline jump at `t`, minus infinity off the jump set.
    pub fn log_jump_at(&self, t: f64) -> f64 {
        match self.event_times.binary_search_by(|et| et.total_cmp(&t)) {
            Ok(k) => self.breslow_jumps[k].ln(),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn breslow_jumps(&self) -> &[f64] {
        &self.breslow_jumps
    }

    pub fn fbar_jumps(&self) -> &[f64] {
        &self.fbar_jumps
    }

    /// Number of event times at or before `t`.
    pub(super) fn n_events_le(&self, t: f64) -> usize {
        self.event_times.partition_point(|&et| et <= t)
    }

    /// First sorted position whose time is `>= t`, clamped so the risk set
    /// stays nonempty past the largest observed time.
    pub(super) fn risk_position(&self, t: f64) -> usize {
        self.times
            .partition_point(|&tt| tt < t)
            .min(self.times.len().saturating_sub(1))
    }
}

/// Risk-set sums of one subsample at one `theta`.
pub(super) struct ThetaCache {
    /// Suffix sums over sorted positions: `s0_pos[j] = sum_{l >= j} w_l e^{theta'W_l}`.
    s0_pos: Vec<f64>,
    /// Matching suffix sums of `w e^{theta'W} W`, stride `dim`.
    s1_pos: Vec<f64>,
    /// Prefix sums of `c_k = (weighted events at t_k) / S0(t_k)` and of
    /// `c_k * sbar(t_k)`; row `k` holds the sum of the first `k` terms.
    a_cum: Vec<f64>,
    b_cum: Vec<f64>,
    dim: usize,
}

impl ThetaCache {
    pub(super) fn new(nu: &CoxNuisance, theta: &DVector<f64>) -> Self {
        let n = nu.times.len();
        let dim = nu.dim;
        let mut s0_pos = vec![0.0; n];
        let mut s1_pos = vec![0.0; n * dim];
        let mut acc0 = 0.0;
        let mut acc1 = vec![0.0; dim];
        for j in (0..n).rev() {
            let row = &nu.designs[j * dim..(j + 1) * dim];
            let mut eta = 0.0;
            for (t, w) in theta.iter().zip(row) {
                eta += t * w;
            }
            let e = nu.weights[j] * eta.exp();
            acc0 += e;
            for d in 0..dim {
                acc1[d] += e * row[d];
            }
            s0_pos[j] = acc0;
            s1_pos[j * dim..(j + 1) * dim].copy_from_slice(&acc1);
        }

        let ne = nu.event_times.len();
        let mut a_cum = vec![0.0; ne + 1];
        let mut b_cum = vec![0.0; (ne + 1) * dim];
        for k in 0..ne {
            let pos = nu.event_positions[k];
            let s0 = s0_pos[pos];
            let c = nu.event_weights[k] / s0;
            a_cum[k + 1] = a_cum[k] + c;
            for d in 0..dim {
                b_cum[(k + 1) * dim + d] =
                    b_cum[k * dim + d] + c * s1_pos[pos * dim + d] / s0;
            }
        }
        ThetaCache {
            s0_pos,
            s1_pos,
            a_cum,
            b_cum,
            dim,
        }
    }

    /// The influence function: the event term minus the integral of the
    /// risk-set residual against the empirical event distribution.
    #[inline]
    pub(super) fn psi_into(
        &self,
        prep: &SubjectPrep,
        event: bool,
        exp_eta: f64,
        w: &[f64],
        psi: &mut [f64],
    ) {
        let k = prep.n_events_le_t;
        let a = self.a_cum[k];
        let b = &self.b_cum[k * self.dim..(k + 1) * self.dim];
        for d in 0..self.dim {
            psi[d] = -exp_eta * (a * w[d] - b[d]);
        }
        if event {
            let pos = prep.risk_pos;
            let s0 = self.s0_pos[pos];
            let s1 = &self.s1_pos[pos * self.dim..(pos + 1) * self.dim];
            for d in 0..self.dim {
                psi[d] += w[d] - s1[d] / s0;
            }
        }
    }
}

struct Rows {
    times: Vec<f64>,
    events: Vec<bool>,
    weights: Vec<f64>,
    designs: Vec<f64>,
    dim: usize,
}

fn collect_rows(view: &DataView, regs: &Regressors) -> Result<Rows, FitError> {
    let x_dim = view.dataset().x_dim();
    let dim = regs.dim(x_dim);
    let n = view.len();
    let mut entries: Vec<(f64, bool, f64, Vec<f64>)> = Vec::with_capacity(n);
    for (subject, weight) in view.iter() {
        let Outcome::Survival { time, event } = subject.outcome else {
            return Err(FitError::OutcomeMismatch);
        };
        let mut row = vec![0.0; dim];
        if regs.use_x {
            let x = subject
                .x
                .as_ref()
                .ok_or(FitError::MissingExpensiveCovariate)?;
            regs.fill_design(x.as_slice(), &subject.z, &mut row);
        } else {
            regs.fill_design(&[], &subject.z, &mut row);
        }
        entries.push((time, event, weight, row));
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rows = Rows {
        times: Vec::with_capacity(n),
        events: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        designs: Vec::with_capacity(n * dim),
        dim,
    };
    for (t, ev, w, row) in entries {
        rows.times.push(t);
        rows.events.push(ev);
        rows.weights.push(w);
        rows.designs.extend_from_slice(&row);
    }
    Ok(rows)
}

struct EventIndex {
    times: Vec<f64>,
    weights: Vec<f64>,
    positions: Vec<usize>,
}

fn index_events(rows: &Rows) -> EventIndex {
    let mut times = Vec::new();
    let mut weights = Vec::new();
    let mut positions = Vec::new();
    for j in 0..rows.times.len() {
        if !rows.events[j] {
            continue;
        }
        if times.last().is_some_and(|&t: &f64| t == rows.times[j]) {
            *weights.last_mut().unwrap() += rows.weights[j];
        } else {
            times.push(rows.times[j]);
            weights.push(rows.weights[j]);
            positions.push(rows.times.partition_point(|&t| t < rows.times[j]));
        }
    }
    EventIndex {
        times,
        weights,
        positions,
    }
}

struct Scored {
    score: DVector<f64>,
    info: DMatrix<f64>,
    norm: f64,
    /// `S0` at each distinct event time, reused for the Breslow jumps.
    s0_events: Vec<f64>,
}

fn score_info(rows: &Rows, idx: &EventIndex, theta: &DVector<f64>) -> Scored {
    let n = rows.times.len();
    let dim = rows.dim;
    let mut s0 = vec![0.0; n];
    let mut s1 = vec![0.0; n * dim];
    let mut s2 = vec![0.0; n * dim * dim];
    let mut acc0 = 0.0;
    let mut acc1 = vec![0.0; dim];
    let mut acc2 = vec![0.0; dim * dim];
    for j in (0..n).rev() {
        let row = &rows.designs[j * dim..(j + 1) * dim];
        let mut eta = 0.0;
        for (t, w) in theta.iter().zip(row) {
            eta += t * w;
        }
        let e = rows.weights[j] * eta.exp();
        acc0 += e;
        for a in 0..dim {
            acc1[a] += e * row[a];
            for b in 0..dim {
                acc2[a * dim + b] += e * row[a] * row[b];
            }
        }
        s0[j] = acc0;
        s1[j * dim..(j + 1) * dim].copy_from_slice(&acc1);
        s2[j * dim * dim..(j + 1) * dim * dim].copy_from_slice(&acc2);
    }

    let mut score = DVector::<f64>::zeros(dim);
    let mut info = DMatrix::<f64>::zeros(dim, dim);
    let mut s0_events = Vec::with_capacity(idx.times.len());
    for j in 0..n {
        if !rows.events[j] {
            continue;
        }
        let pos = rows.times.partition_point(|&t| t < rows.times[j]);
        let w = rows.weights[j];
        let row = &rows.designs[j * dim..(j + 1) * dim];
        let denom = s0[pos];
        for a in 0..dim {
            let sbar_a = s1[pos * dim + a] / denom;
            score[a] += w * (row[a] - sbar_a);
            for b in 0..dim {
                let sbar_b = s1[pos * dim + b] / denom;
                info[(a, b)] += w * (s2[pos * dim * dim + a * dim + b] / denom - sbar_a * sbar_b);
            }
        }
    }
    for &pos in &idx.positions {
        s0_events.push(s0[pos]);
    }
    Scored {
        norm: score.amax(),
        score,
        info,
        s0_events,
    }
}

fn build_nuisance(rows: Rows, idx: EventIndex, s0_events: &[f64]) -> CoxNuisance {
    let total_weight: f64 = rows.weights.iter().sum();
    let mut breslow_jumps = Vec::with_capacity(idx.times.len());
    let mut breslow_cum = Vec::with_capacity(idx.times.len());
    let mut fbar_jumps = Vec::with_capacity(idx.times.len());
    let mut cum = 0.0;
    for (k, &ev_w) in idx.weights.iter().enumerate() {
        let jump = ev_w / s0_events[k];
        cum += jump;
        breslow_jumps.push(jump);
        breslow_cum.push(cum);
        fbar_jumps.push(ev_w / total_weight);
    }
    CoxNuisance {
        times: rows.times,
        weights: rows.weights,
        designs: rows.designs,
        dim: rows.dim,
        event_times: idx.times,
        event_weights: idx.weights,
        event_positions: idx.positions,
        breslow_jumps,
        breslow_cum,
        fbar_jumps,
    }
}

pub(super) fn fit(view: &DataView, regs: &Regressors) -> Result<FitResult, FitError> {
    let rows = collect_rows(view, regs)?;
    let dim = rows.dim;
    if dim == 0 {
        return Err(FitError::RankDeficient);
    }
    if !rows.events.iter().any(|&e| e) {
        return Err(FitError::NoEvents);
    }
    let idx = index_events(&rows);
    let sum_w: f64 = rows.weights.iter().sum();
    let tol = 1e-9 * sum_w.max(1.0);

    let mut theta = DVector::<f64>::zeros(dim);
    let mut current = score_info(&rows, &idx, &theta);

    // A flat partial likelihood (no covariate contrast within risk sets)
    // leaves the score identically zero.
    if current.info.amax() <= 1e-12 * sum_w.max(1.0) {
        let degenerate_ok = current.norm <= tol;
        let norm = current.norm;
        let nuisance = build_nuisance(rows, idx, &current.s0_events);
        return if degenerate_ok {
            Ok(FitResult {
                theta,
                nuisance: Nuisance::Cox(nuisance),
                converged: true,
                score_norm: norm,
                degenerate: true,
            })
        } else {
            Err(FitError::NonConvergence { score_norm: norm })
        };
    }

    let mut converged = false;
    for iter in 0..MAX_ITER {
        if current.norm <= tol {
            converged = true;
            break;
        }
        let rhs = DMatrix::from_column_slice(dim, 1, current.score.as_slice());
        let step = match solve_spd_strict(&current.info, &rhs) {
            Ok(step) => DVector::from_column_slice(step.as_slice()),
            Err(_) if iter == 0 => return Err(FitError::RankDeficient),
            Err(_) => {
                return Err(FitError::NonConvergence {
                    score_norm: current.norm,
                })
            }
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..6 {
            let trial = &theta + &step * scale;
            let scored = score_info(&rows, &idx, &trial);
            if scored.norm.is_finite() && scored.norm < current.norm {
                accepted = Some((trial, scored));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((trial, scored)) => {
                theta = trial;
                current = scored;
            }
            None => {
                theta += &step;
                current = score_info(&rows, &idx, &theta);
            }
        }
        if theta.amax() > DIVERGENCE_BOUND || !current.norm.is_finite() {
            return Err(FitError::NonConvergence {
                score_norm: current.norm,
            });
        }
    }
    if !converged {
        return Err(FitError::NonConvergence {
            score_norm: current.norm,
        });
    }

    let norm = current.norm;
    let nuisance = build_nuisance(rows, idx, &current.s0_events);
    Ok(FitResult {
        theta,
        nuisance: Nuisance::Cox(nuisance),
        converged: true,
        score_norm: norm,
        degenerate: false,
    })
}

/// Breslow-type nuisance evaluated at a forced `theta` (diagnostics; with
/// `theta = 0` the baseline reduces to the Nelson-Aalen estimator).
pub fn breslow_nuisance_at(
    view: &DataView,
    regs: &Regressors,
    theta: &DVector<f64>,
) -> Result<CoxNuisance, FitError> {
    let rows = collect_rows(view, regs)?;
    if !rows.events.iter().any(|&e| e) {
        return Err(FitError::NoEvents);
    }
    let idx = index_events(&rows);
    let scored = score_info(&rows, &idx, theta);
    Ok(build_nuisance(rows, idx, &scored.s0_events))
}
