//! The conditional-expectation projection of the influence function and the
//! penalized working estimating equations built from it.
//!
//! For a subject with observed `(y, z)` the projection is the ratio of
//! `integral of psi(y, x, z) f(y | x, z) dF(x | z)` to
//! `integral of f(y | x, z) dF(x | z)`. With every conditional law reduced
//! to atoms, both integrals are weighted sums; the accumulation shifts by the
//! largest log mass so the ratio survives extreme underflow of `f` itself.

use super::pairs::PenaltyScaling;
use super::UpdateError;
use crate::covariate::{integrate_psi_f, ConditionalDist, CovariateError, EvaluatedCondDist};
use crate::data::{DataView, Outcome};
use crate::outcome::{prepare_subject, Nuisance, OutcomeModel, PsiEvaluator, SubjectPrep};
use nalgebra::DVector;

/// Reusable buffers for the atom loop.
pub(super) struct Scratch {
    lw: Vec<f64>,
    psis: Vec<f64>,
    wbuf: Vec<f64>,
    psi_buf: Vec<f64>,
    phi: DVector<f64>,
}

impl Scratch {
    pub(super) fn new(p: usize, design_dim: usize) -> Self {
        Scratch {
            lw: Vec::new(),
            psis: Vec::new(),
            wbuf: vec![0.0; design_dim],
            psi_buf: vec![0.0; p],
            phi: DVector::zeros(p),
        }
    }
}

/// Shift-stabilized projection over precomputed atoms. `lws` holds the log
/// atom weights. Writes the projection into `out`.
#[inline]
fn project_atoms(
    eval: &PsiEvaluator,
    prep: &SubjectPrep,
    outcome: &Outcome,
    z: &DVector<f64>,
    atoms: &EvaluatedCondDist,
    lws: &[f64],
    scratch: &mut Scratch,
    out: &mut DVector<f64>,
) -> Result<(), CovariateError> {
    let p = out.len();
    let m = atoms.len();
    scratch.lw.clear();
    scratch.lw.reserve(m);
    scratch.psis.resize(m * p, 0.0);
    let mut max_lw = f64::NEG_INFINITY;
    for j in 0..m {
        let logf = eval.eval(
            prep,
            outcome,
            atoms.atom(j),
            z,
            &mut scratch.psis[j * p..(j + 1) * p],
            &mut scratch.wbuf,
        );
        let lw = lws[j] + logf;
        if lw > max_lw {
            max_lw = lw;
        }
        scratch.lw.push(lw);
    }
    if !max_lw.is_finite() {
        return Err(CovariateError::UnderflowDenominator);
    }
    let mut den = 0.0;
    out.fill(0.0);
    for j in 0..m {
        let w = (scratch.lw[j] - max_lw).exp();
        if w == 0.0 {
            continue;
        }
        den += w;
        for d in 0..p {
            out[d] += w * scratch.psis[j * p + d];
        }
    }
    *out /= den;
    Ok(())
}

/// Projection of the influence function onto functions of `(y, z)`.
///
/// Tries the plain-arithmetic integral first and falls back to the shifted
/// log-domain path when the denominator underflows.
pub fn phi_star(
    outcome: &Outcome,
    z: &DVector<f64>,
    theta: &DVector<f64>,
    model: &OutcomeModel,
    nuisance: &Nuisance,
    dist: &dyn ConditionalDist,
) -> Result<DVector<f64>, UpdateError> {
    let atoms = dist.evaluate(z);
    let p = theta.len();
    let eval = model.evaluator(theta.clone(), nuisance, false);
    let prep = eval.prepare_subject(outcome)?;
    let mut scratch = Scratch::new(p, p);

    let plain = integrate_psi_f(&atoms, |x| {
        let logf = eval.eval(&prep, outcome, x, z, &mut scratch.psi_buf, &mut scratch.wbuf);
        let f = logf.exp();
        let psi_f = DVector::from_iterator(p, scratch.psi_buf.iter().map(|v| v * f));
        (psi_f, f)
    });
    match plain {
        Ok((num, den)) => Ok(num / den),
        Err(CovariateError::UnderflowDenominator) => {
            let lws: Vec<f64> = atoms.ws.iter().map(|w| w.ln()).collect();
            let mut out = DVector::zeros(p);
            project_atoms(&eval, &prep, outcome, z, &atoms, &lws, &mut scratch, &mut out)
                .map_err(UpdateError::Covariate)?;
            Ok(out)
        }
        Err(other) => Err(UpdateError::Covariate(other)),
    }
}

/// One distinct subject inside the working equations.
struct Term<'a> {
    outcome: &'a Outcome,
    z: &'a DVector<f64>,
    atoms: EvaluatedCondDist,
    lws: Vec<f64>,
    prep: SubjectPrep,
}

/// The pair of estimating equations sharing one set of projection atoms.
/// Both sums run over the same distinct subjects; a resampled view simply
/// contributes multiplicities.
pub(super) struct PhiStarEquations<'a> {
    model: &'a OutcomeModel,
    nuisance: &'a Nuisance,
    terms: Vec<Term<'a>>,
    /// `(term index, total weight)` for the inverse-probability-weighted
    /// subsample equation.
    sub_weights: Vec<(usize, f64)>,
    /// Same for the unweighted full-sample equation.
    full_weights: Vec<(usize, f64)>,
    n_sub: f64,
    n_full: f64,
    p: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum EquationSide {
    Subsample,
    Full,
}

impl<'a> PhiStarEquations<'a> {
    /// Builds both equations from a full-sample view (possibly a bootstrap
    /// multiset) and a fitted conditional law. Atoms are evaluated once per
    /// distinct subject.
    pub(super) fn build(
        full_view: &DataView<'a>,
        model: &'a OutcomeModel,
        nuisance: &'a Nuisance,
        dist: &dyn ConditionalDist,
    ) -> Result<Self, UpdateError> {
        let data = full_view.dataset();
        let p = model.dim(data.x_dim());
        let mut slot_of: Vec<Option<usize>> = vec![None; data.len()];
        let mut terms: Vec<Term<'a>> = Vec::new();
        let mut full_mult: Vec<f64> = Vec::new();
        let mut sub_mult: Vec<f64> = Vec::new();
        let mut n_sub = 0.0;
        for &idx in full_view.indices() {
            let slot = match slot_of[idx] {
                Some(slot) => slot,
                None => {
                    let subject = &data.subjects()[idx];
                    let atoms = dist.evaluate(&subject.z);
                    let lws = atoms.ws.iter().map(|w| w.ln()).collect();
                    let prep = prepare_subject(model.kind, nuisance, &subject.outcome, false)?;
                    terms.push(Term {
                        outcome: &subject.outcome,
                        z: &subject.z,
                        atoms,
                        lws,
                        prep,
                    });
                    full_mult.push(0.0);
                    sub_mult.push(0.0);
                    let slot = terms.len() - 1;
                    slot_of[idx] = Some(slot);
                    slot
                }
            };
            let subject = &data.subjects()[idx];
            full_mult[slot] += 1.0;
            if subject.r {
                sub_mult[slot] += 1.0 / subject.pi;
                n_sub += 1.0;
            }
        }
        let full_weights: Vec<(usize, f64)> = full_mult
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| (i, w))
            .collect();
        let sub_weights: Vec<(usize, f64)> = sub_mult
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| (i, w))
            .collect();
        Ok(PhiStarEquations {
            model,
            nuisance,
            terms,
            sub_weights,
            full_weights,
            n_sub,
            n_full: full_view.len() as f64,
            p,
        })
    }

    pub(super) fn scratch(&self) -> Scratch {
        Scratch::new(self.p, self.p)
    }

    /// The averaged estimating equation with the ridge penalty attached.
    pub(super) fn eval(
        &self,
        theta: &DVector<f64>,
        side: EquationSide,
        lambda: f64,
        scaling: PenaltyScaling,
        scratch: &mut Scratch,
    ) -> DVector<f64> {
        let (weights, n) = match side {
            EquationSide::Subsample => (&self.sub_weights, self.n_sub),
            EquationSide::Full => (&self.full_weights, self.n_full),
        };
        let eval = self.model.evaluator(theta.clone(), self.nuisance, false);
        let mut g = DVector::zeros(self.p);
        let mut phi = std::mem::replace(&mut scratch.phi, DVector::zeros(0));
        for &(ti, w) in weights {
            let term = &self.terms[ti];
            if project_atoms(
                &eval,
                &term.prep,
                term.outcome,
                term.z,
                &term.atoms,
                &term.lws,
                scratch,
                &mut phi,
            )
            .is_err()
            {
                // Dead denominator: poison the equation so the solver reports
                // non-convergence instead of silently skipping the subject.
                g.fill(f64::NAN);
                scratch.phi = phi;
                return g;
            }
            g.axpy(w, &phi, 1.0);
        }
        scratch.phi = phi;
        g /= n;
        let shrink = match scaling {
            PenaltyScaling::AveragedEquation => 2.0 * lambda * n.powf(-1.0 / 3.0),
            PenaltyScaling::SummedEquation => 2.0 * lambda * n.powf(-4.0 / 3.0),
        };
        if lambda != 0.0 {
            g.axpy(-shrink, theta, 1.0);
        }
        g
    }
}
