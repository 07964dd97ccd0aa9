//! Per-group GEE solver: modified Fisher scoring on the estimating equation
//! `sum_i D_i^t V_i^{-1} (y_i - mu_i) = 0` with a fixed working correlation,
//! plus the robust sandwich covariance of the estimates.
//!
//! With `U_i = A_i^{1/2} Delta_i X_i` and standardized residuals
//! `eps_i = A_i^{-1/2} (y_i - mu_i)`, the score is `sum U_i^t R^{-1} eps_i`,
//! the information is `H = sum U_i^t R^{-1} U_i`, and the sandwich meat is
//! the sum of per-subject score outer products; `R^{-1}` is always applied
//! through its Cholesky factor, never formed explicitly.

use alloc::format;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_traits::Float;

use crate::corr::CorrCache;
use crate::data::Subject;
use crate::error::{Error, Result};
use crate::family::{subject_matrices, FamilySpec};

/// Tolerances and iteration cap for one GEE solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when the sup-norm of the accepted step falls below this.
    pub tol_beta: f64,
    /// Stop when the sup-norm of the score falls below this.
    pub tol_score: f64,
    pub max_iter: usize,
    /// Maximum number of step halvings per iteration.
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol_beta: 1e-8, tol_score: 1e-8, max_iter: 50, max_halvings: 10 }
    }
}

/// Result of one per-group GEE solve.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFit {
    pub beta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm of the score at exit.
    pub score_norm: f64,
    /// Model-based information `sum D^t V^{-1} D`.
    pub h: DMatrix<f64>,
    /// Robust covariance `H^{-1} M H^{-1}`.
    pub sandwich_cov: DMatrix<f64>,
    pub n_g: usize,
    /// A ridge was added to a singular information matrix at least once.
    pub ridge_used: bool,
}

/// Score, information, and meat contributions accumulated over a group.
#[derive(Debug, Clone)]
pub(crate) struct GroupEval {
    pub score: DVector<f64>,
    pub h: DMatrix<f64>,
    pub meat: DMatrix<f64>,
}

pub(crate) fn evaluate_group(
    subjects: &[&Subject],
    family: &FamilySpec,
    beta: &DVector<f64>,
    corr: &CorrCache,
) -> Result<GroupEval> {
    let p = beta.len();
    let mut score = DVector::zeros(p);
    let mut h = DMatrix::zeros(p, p);
    let mut meat = DMatrix::zeros(p, p);
    for subject in subjects {
        let (s_i, h_i) = subject_contribution(subject, family, beta, corr)
            .map_err(|e| with_subject(e, &subject.id))?;
        score += &s_i;
        h += h_i;
        meat.ger(1.0, &s_i, &s_i, 1.0);
    }
    Ok(GroupEval { score, h, meat })
}

fn with_subject(e: Error, id: &str) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("subject {id}: {msg}")),
        other => other,
    }
}

fn subject_contribution(
    subject: &Subject,
    family: &FamilySpec,
    beta: &DVector<f64>,
    corr: &CorrCache,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let t = subject.n_obs();
    let chol = corr.cholesky(t)?;
    let sm = subject_matrices(family, &subject.x, beta)?;
    // U = A^{1/2} Delta X, eps = A^{-1/2} (y - mu)
    let mut u = subject.x.clone();
    let mut eps = &subject.y - &sm.mu;
    for i in 0..t {
        let root = Float::sqrt(sm.a_diag[i]);
        let w = root * sm.delta_diag[i];
        for j in 0..u.ncols() {
            u[(i, j)] *= w;
        }
        eps[i] /= root;
    }
    let r_inv_eps = chol.solve(&eps);
    let r_inv_u = chol.solve(&u);
    let s_i = u.transpose() * r_inv_eps;
    let h_i = u.transpose() * r_inv_u;
    if s_i.iter().any(|v| !v.is_finite()) || h_i.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite score contribution".into()));
    }
    Ok((s_i, h_i))
}

/// GEE score `sum_i D_i^t V_i^{-1} (y_i - m(X_i beta))` over a group.
pub fn score(
    subjects: &[&Subject],
    family: &FamilySpec,
    beta: &DVector<f64>,
    corr: &CorrCache,
) -> Result<DVector<f64>> {
    if subjects.is_empty() {
        return Err(Error::Contract("score requires at least one subject".into()));
    }
    Ok(evaluate_group(subjects, family, beta, corr)?.score)
}

/// Factorizes `h`, falling back to a small ridge when it is singular.
/// Returns the factorization and whether the ridge was needed.
pub(crate) fn factor_info(h: &DMatrix<f64>, p: usize) -> Result<(Cholesky<f64, Dyn>, bool)> {
    if let Some(f) = Cholesky::new(h.clone()) {
        return Ok((f, false));
    }
    let ridge = 1e-8 * h.trace() / p as f64;
    if !(ridge > 0.0) {
        return Err(Error::Numeric("information matrix is singular with zero trace".into()));
    }
    let mut hr = h.clone();
    for i in 0..p {
        hr[(i, i)] += ridge;
    }
    Cholesky::new(hr)
        .map(|f| (f, true))
        .ok_or_else(|| Error::Numeric("information matrix is singular even after ridge".into()))
}

/// Solves the group estimating equation by Fisher scoring with step-halving.
pub fn solve_group_gee(
    subjects: &[&Subject],
    family: &FamilySpec,
    beta_init: &DVector<f64>,
    corr: &CorrCache,
    opts: &SolverOptions,
) -> Result<GroupFit> {
    if subjects.is_empty() {
        return Err(Error::Contract("cannot fit a group with no subjects".into()));
    }
    let p = beta_init.len();
    let mut beta = beta_init.clone();
    let mut eval = evaluate_group(subjects, family, &beta, corr)?;
    let mut ridge_used = false;
    let mut converged = eval.score.amax() < opts.tol_score;
    let mut iterations = 0;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let (fact, ridged) = factor_info(&eval.h, p)?;
        ridge_used |= ridged;
        let delta = fact.solve(&eval.score);
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("Fisher step is non-finite".into()));
        }
        let snorm = eval.score.norm();
        let mut scale = 1.0;
        let mut accepted: Option<(DVector<f64>, GroupEval)> = None;
        for halving in 0..=opts.max_halvings {
            let cand = &beta + &delta * scale;
            match evaluate_group(subjects, family, &cand, corr) {
                Ok(ev) if ev.score.norm() <= snorm || halving == opts.max_halvings => {
                    accepted = Some((cand, ev));
                    break;
                }
                Ok(_) | Err(Error::Domain(_)) => {}
                Err(e) => return Err(e),
            }
            scale *= 0.5;
        }
        let (cand, ev) = accepted
            .ok_or_else(|| Error::Numeric("step-halving failed to produce a usable step".into()))?;
        let step_inf = delta.amax() * scale;
        if cand.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("coefficients diverged to non-finite values".into()));
        }
        beta = cand;
        eval = ev;
        if step_inf < opts.tol_beta || eval.score.amax() < opts.tol_score {
            converged = true;
        }
    }

    let score_norm = eval.score.amax();
    let (sandwich_cov, ridged) = sandwich_from(&eval.h, &eval.meat)?;
    ridge_used |= ridged;
    Ok(GroupFit {
        beta,
        iterations,
        converged,
        score_norm,
        h: eval.h,
        sandwich_cov,
        n_g: subjects.len(),
        ridge_used,
    })
}

/// `H^{-1} M H^{-1}` with the shared ridge fallback, symmetrized.
pub(crate) fn sandwich_from(h: &DMatrix<f64>, meat: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let p = h.nrows();
    let (fact, ridged) = factor_info(h, p)?;
    let hinv_m = fact.solve(meat);
    let cov = fact.solve(&hinv_m.transpose());
    Ok(((cov.clone() + cov.transpose()) * 0.5, ridged))
}

/// Robust covariance of a fitted group: `H^{-1} M H^{-1}` with the empirical
/// meat `sum_i s_i s_i^t` evaluated at `beta_hat`.
pub fn sandwich_cov(
    subjects: &[&Subject],
    family: &FamilySpec,
    beta_hat: &DVector<f64>,
    corr: &CorrCache,
) -> Result<DMatrix<f64>> {
    let eval = evaluate_group(subjects, family, beta_hat, corr)?;
    Ok(sandwich_from(&eval.h, &eval.meat)?.0)
}
