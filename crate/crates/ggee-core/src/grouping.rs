//! Joint grouping and estimation: the Mahalanobis assignment step, the
//! alternating three-step loop (assign, solve per-group GEE, re-estimate the
//! working correlation), and initialization by subject-wise fits + k-means or
//! random restarts.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corr::{estimate_spec, CorrCache, CorrStructure, WorkingCorrelationSpec};
use crate::data::{LongitudinalDataset, Subject};
use crate::error::{Error, Result};
use crate::family::{mean_vector, subject_matrices, FamilySpec};
use crate::rng::derive_rng;
use crate::solver::{evaluate_group, sandwich_from, solve_group_gee, GroupFit, SolverOptions};

mod kmeans;

use kmeans::kmeans;

/// How the alternating loop is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Fit an independent GLM per subject, then k-means the coefficient
    /// vectors into `G` clusters. Requires `min_i T_i >= p + 1`.
    SubjectwiseKMeans,
    /// Uniformly random group assignments, repeated `count` times; the
    /// restart with the smallest final objective wins.
    RandomRestarts(usize),
}

/// Options for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub seed: u64,
    /// Estimate a separate correlation parameter per group.
    pub heterogeneous_alpha: bool,
    pub max_outer: usize,
    /// Sup-norm tolerance on the per-group coefficient change across outer
    /// iterations.
    pub outer_tol: f64,
    pub solver: SolverOptions,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            heterogeneous_alpha: false,
            max_outer: 100,
            outer_tol: 1e-6,
            solver: SolverOptions::default(),
            kmeans_restarts: 50,
            kmeans_max_iter: 100,
        }
    }
}

/// A fitted grouped GEE model.
///
/// Group labels are 0-based. When `converged` is true the assignments are
/// argmin-optimal for the returned coefficients and working correlation; for
/// iteration-capped or cycle exits the returned state is the lowest-objective
/// iterate seen, whose assignments are optimal for the parameters current at
/// its own assignment scan.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedFit {
    pub n_groups: usize,
    pub betas: Vec<DVector<f64>>,
    pub assignments: Vec<usize>,
    /// One shared spec, or one per group under heterogeneous estimation.
    pub alpha: Vec<WorkingCorrelationSpec>,
    pub group_fits: Vec<GroupFit>,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Total assignment objective `sum_i min_g d_i(g)` at the exit state.
    pub objective: f64,
    /// Assignment changes per outer iteration.
    pub history: Vec<usize>,
    pub diagnostics: Vec<String>,
}

/// Working-correlation factorizations for the fit state: one shared cache or
/// one per group.
pub(crate) struct CorrState {
    caches: Vec<CorrCache>,
}

impl CorrState {
    pub(crate) fn build(alpha: &[WorkingCorrelationSpec], data: &LongitudinalDataset) -> Result<Self> {
        let caches = alpha
            .iter()
            .map(|spec| CorrCache::for_dataset(spec.clone(), data))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { caches })
    }

    pub(crate) fn for_group(&self, g: usize) -> &CorrCache {
        if self.caches.len() == 1 {
            &self.caches[0]
        } else {
            &self.caches[g]
        }
    }
}

/// Mahalanobis-type grouping distance
/// `(y - m(X beta_g))^t R^{-1} (y - m(X beta_g))` with `R^{-1}` applied
/// through the supplied Cholesky factor.
pub fn mahalanobis_distance(
    subject: &Subject,
    family: &FamilySpec,
    beta_g: &DVector<f64>,
    r_chol: &Cholesky<f64, Dyn>,
) -> Result<f64> {
    let t = subject.n_obs();
    if r_chol.l_dirty().nrows() != t {
        return Err(Error::Contract(format!(
            "correlation factor is {}x{} but subject has {} observations",
            r_chol.l_dirty().nrows(),
            r_chol.l_dirty().nrows(),
            t
        )));
    }
    let mu = mean_vector(family, &subject.x, beta_g)?;
    let r = &subject.y - mu;
    let solved = r_chol.solve(&r);
    Ok(r.dot(&solved))
}

fn distance_for(
    subject: &Subject,
    family: &FamilySpec,
    beta_g: &DVector<f64>,
    corr: &CorrCache,
) -> Result<f64> {
    mahalanobis_distance(subject, family, beta_g, corr.cholesky(subject.n_obs())?)
}

/// Per-subject argmin scan over groups; returns labels and the attained
/// minimum distances. Ties break to the smallest group index.
pub(crate) fn assign_scan(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    betas: &[DVector<f64>],
    corr: &CorrState,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let n = data.n_subjects();
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    for (i, subject) in data.subjects().iter().enumerate() {
        let mut best_g = 0usize;
        let mut best_d = f64::INFINITY;
        for (g, beta) in betas.iter().enumerate() {
            let d = distance_for(subject, family, beta, corr.for_group(g))?;
            if d < best_d {
                best_d = d;
                best_g = g;
            }
        }
        labels[i] = best_g;
        dists[i] = best_d;
    }
    Ok((labels, dists))
}

/// Assigns every subject to its distance-minimizing group under a shared
/// working correlation.
pub fn assign_groups(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    betas: &[DVector<f64>],
    corr: &CorrCache,
) -> Result<Vec<usize>> {
    if betas.is_empty() {
        return Err(Error::Contract("assign_groups needs at least one group".into()));
    }
    let state = CorrState { caches: vec![corr.clone()] };
    Ok(assign_scan(data, family, betas, &state)?.0)
}

/// Re-seeds empty groups with the subject farthest from its current group,
/// drawn from groups that keep at least one member.
fn fix_empty_groups(
    labels: &mut [usize],
    dists: &mut [f64],
    data: &LongitudinalDataset,
    family: &FamilySpec,
    betas: &[DVector<f64>],
    corr: &CorrState,
    diagnostics: &mut Vec<String>,
) -> Result<()> {
    let g_count = betas.len();
    loop {
        let mut counts = vec![0usize; g_count];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return Ok(());
        };
        let mut donor: Option<usize> = None;
        for i in 0..labels.len() {
            if counts[labels[i]] >= 2 && donor.is_none_or(|j| dists[i] > dists[j]) {
                donor = Some(i);
            }
        }
        let Some(i) = donor else {
            return Err(Error::EmptyGroup(empty));
        };
        labels[i] = empty;
        dists[i] = distance_for(&data.subjects()[i], family, &betas[empty], corr.for_group(empty))?;
        diagnostics.push(format!("re-seeded empty group {empty} with subject {i}"));
    }
}

fn solve_all_groups(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    g_count: usize,
    labels: &[usize],
    warm: &[DVector<f64>],
    corr: &CorrState,
    opts: &SolverOptions,
) -> Result<(Vec<GroupFit>, f64)> {
    let mut fits = Vec::with_capacity(g_count);
    let mut dbeta: f64 = 0.0;
    for g in 0..g_count {
        let members: Vec<&Subject> = data
            .subjects()
            .iter()
            .enumerate()
            .filter(|(i, _)| labels[*i] == g)
            .map(|(_, s)| s)
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyGroup(g));
        }
        let fit = solve_group_gee(&members, family, &warm[g], corr.for_group(g), opts)?;
        dbeta = dbeta.max((&fit.beta - &warm[g]).amax());
        fits.push(fit);
    }
    Ok((fits, dbeta))
}

fn estimate_alpha_state(
    structure: CorrStructure,
    data: &LongitudinalDataset,
    family: &FamilySpec,
    betas: &[DVector<f64>],
    labels: &[usize],
    heterogeneous: bool,
    g_count: usize,
) -> Result<Vec<WorkingCorrelationSpec>> {
    if heterogeneous {
        (0..g_count)
            .map(|g| estimate_spec(structure, data, family, betas, labels, Some(g)))
            .collect()
    } else {
        Ok(vec![estimate_spec(structure, data, family, betas, labels, None)?])
    }
}

fn independence_alpha(
    structure: CorrStructure,
    t: usize,
    heterogeneous: bool,
    g_count: usize,
) -> Vec<WorkingCorrelationSpec> {
    let base = WorkingCorrelationSpec::independence_start(structure, t);
    if heterogeneous {
        let mut spec = base;
        spec.heterogeneous = true;
        vec![spec; g_count]
    } else {
        vec![base]
    }
}

/// Estimates whose sup-norm exceeds this are treated as evidence that the
/// per-subject MLE does not exist (separation); the score vanishes along the
/// divergent ray, so a small exit score alone cannot certify convergence.
const SUBJECT_BETA_CAP: f64 = 15.0;

/// Fits an independent GLM to one subject. Separation in short binary
/// panels is common, so a fit is accepted only when it converges to a
/// bounded optimum; otherwise the ridge refit escalates its penalty until
/// the estimate is bounded.
fn fit_subject_glm(
    subject: &Subject,
    family: &FamilySpec,
    opts: &SolverOptions,
) -> Result<DVector<f64>> {
    let p = subject.x.ncols();
    let corr = CorrCache::for_sizes(
        WorkingCorrelationSpec::new(CorrStructure::Id, Vec::new()),
        &[subject.n_obs()],
    )?;
    let init = DVector::zeros(p);
    if let Ok(fit) = solve_group_gee(&[subject], family, &init, &corr, opts) {
        if fit.converged
            && fit.beta.iter().all(|v| v.is_finite())
            && fit.beta.amax() <= SUBJECT_BETA_CAP
        {
            return Ok(fit.beta);
        }
    }
    let mut last = None;
    for lambda in [1e-4, 1e-2, 1.0] {
        let beta = ridge_irls(subject, family, lambda, opts)?;
        if beta.amax() <= SUBJECT_BETA_CAP {
            return Ok(beta);
        }
        last = Some(beta);
    }
    Ok(last
        .expect("ridge ladder ran")
        .map(|v| v.clamp(-SUBJECT_BETA_CAP, SUBJECT_BETA_CAP)))
}

/// Penalized Fisher scoring `beta <- (X^t W X + lambda I)^{-1} X^t W z`.
fn ridge_irls(
    subject: &Subject,
    family: &FamilySpec,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<DVector<f64>> {
    let p = subject.x.ncols();
    let t = subject.n_obs();
    let mut beta = DVector::zeros(p);
    for _ in 0..opts.max_iter {
        let sm = subject_matrices(family, &subject.x, &beta)?;
        let mut xtwx = DMatrix::from_diagonal_element(p, p, lambda);
        let mut rhs = beta.clone() * 0.0;
        for i in 0..t {
            // canonical link: weight = variance, working residual (y - mu)
            let w = sm.a_diag[i] * sm.delta_diag[i] * sm.delta_diag[i];
            let xi = subject.x.row(i).transpose();
            xtwx.ger(w, &xi, &xi, 1.0);
            rhs += xi * ((subject.y[i] - sm.mu[i]) * sm.delta_diag[i]);
        }
        // penalized score step: (X'WX + lambda I)^{-1} (X'(y - mu) - lambda beta)
        rhs -= &beta * lambda;
        let fact = Cholesky::new(xtwx)
            .ok_or_else(|| Error::Numeric(format!("subject {}: ridge IRLS singular", subject.id)))?;
        let step = fact.solve(&rhs);
        beta += &step;
        if !beta.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("subject {}: ridge IRLS diverged", subject.id)));
        }
        if step.amax() < opts.tol_beta {
            break;
        }
    }
    Ok(beta)
}

/// Independent per-subject GLM estimates, the raw material of the k-means
/// start. They do not depend on the group count, so selection drivers can
/// compute them once per training set and reuse them across candidates.
pub fn subject_estimates(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    solver: &SolverOptions,
) -> Result<Vec<DVector<f64>>> {
    let p = data.n_covariates();
    let min_t = data.subjects().iter().map(Subject::n_obs).min().unwrap_or(0);
    if min_t < p + 1 {
        return Err(Error::Contract(format!(
            "subject-wise initialization needs min T_i >= p + 1 (got T={min_t}, p={p})"
        )));
    }
    data.subjects()
        .iter()
        .map(|s| fit_subject_glm(s, family, solver))
        .collect()
}

/// Builds a k-means start from precomputed subject estimates; degenerate
/// (all-identical) estimates fall back to a random start with a diagnostic.
pub fn init_from_estimates(
    points: &[DVector<f64>],
    data: &LongitudinalDataset,
    family: &FamilySpec,
    g_count: usize,
    opts: &FitOptions,
    restart: usize,
) -> Result<(Vec<DVector<f64>>, Vec<usize>, Vec<String>)> {
    let mut diagnostics = Vec::new();
    let spread = points
        .iter()
        .map(|pt| (pt - &points[0]).amax())
        .fold(0.0f64, f64::max);
    if spread < 1e-12 {
        diagnostics
            .push("subject-wise estimates are degenerate; falling back to a random start".into());
        let mut rng = derive_rng(opts.seed, &[TAG_INIT_FALLBACK, restart as u64]);
        return random_init(data, family, g_count, opts, &mut rng, diagnostics);
    }
    let mut rng = derive_rng(opts.seed, &[TAG_KMEANS, restart as u64]);
    let km = kmeans(points, g_count, opts.kmeans_restarts, opts.kmeans_max_iter, &mut rng);
    Ok((km.centers, km.labels, diagnostics))
}

/// Initial coefficients and assignments for one restart.
///
/// `SubjectwiseKMeans` clusters per-subject GLM estimates; degenerate
/// (all-identical) estimates fall back to a random assignment with a
/// diagnostic. `RandomRestarts` draws uniform assignments (re-seeding empty
/// groups) and solves one independence GEE per group for the starting
/// coefficients. The working-correlation start is always the
/// independence-equivalent `alpha = 0`.
pub fn init_fit(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    g_count: usize,
    strategy: InitStrategy,
    opts: &FitOptions,
) -> Result<(Vec<DVector<f64>>, Vec<usize>, Vec<String>)> {
    init_restart(data, family, g_count, strategy, opts, 0)
}

fn init_restart(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    g_count: usize,
    strategy: InitStrategy,
    opts: &FitOptions,
    restart: usize,
) -> Result<(Vec<DVector<f64>>, Vec<usize>, Vec<String>)> {
    match strategy {
        InitStrategy::SubjectwiseKMeans => {
            let points = subject_estimates(data, family, &opts.solver)?;
            init_from_estimates(&points, data, family, g_count, opts, restart)
        }
        InitStrategy::RandomRestarts(count) => {
            if count == 0 {
                return Err(Error::Contract("RandomRestarts needs count >= 1".into()));
            }
            let mut rng = derive_rng(opts.seed, &[TAG_RESTART, restart as u64]);
            random_init(data, family, g_count, opts, &mut rng, Vec::new())
        }
    }
}

fn random_init(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    g_count: usize,
    opts: &FitOptions,
    rng: &mut ChaCha8Rng,
    diagnostics: Vec<String>,
) -> Result<(Vec<DVector<f64>>, Vec<usize>, Vec<String>)> {
    let n = data.n_subjects();
    let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..g_count)).collect();
    // every group needs at least one member before the first beta solve
    loop {
        let mut counts = vec![0usize; g_count];
        for &l in &labels {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
        let donors: Vec<usize> = (0..n).filter(|&i| counts[labels[i]] >= 2).collect();
        if donors.is_empty() {
            return Err(Error::EmptyGroup(empty));
        }
        labels[donors[rng.random_range(0..donors.len())]] = empty;
    }
    let t = data.max_t();
    let alpha0 = independence_alpha(CorrStructure::Id, t, false, g_count);
    let corr = CorrState::build(&alpha0, data)?;
    let warm = vec![DVector::zeros(data.n_covariates()); g_count];
    let (fits, _) = solve_all_groups(data, family, g_count, &labels, &warm, &corr, &opts.solver)?;
    Ok((fits.into_iter().map(|f| f.beta).collect(), labels, diagnostics))
}

const TAG_KMEANS: u64 = 0x6b6d;
const TAG_RESTART: u64 = 0x7273;
const TAG_INIT_FALLBACK: u64 = 0x6662;

struct Snapshot {
    objective: f64,
    assignments: Vec<usize>,
    betas: Vec<DVector<f64>>,
    alpha: Vec<WorkingCorrelationSpec>,
}

fn hash_assignments(labels: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &l in labels {
        h ^= l as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Fits the grouped GEE model: alternates the assignment scan, the per-group
/// GEE solves, and the working-correlation update until assignments and
/// coefficients stabilize.
pub fn fit(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    g_count: usize,
    structure: CorrStructure,
    strategy: InitStrategy,
    opts: &FitOptions,
) -> Result<GroupedFit> {
    if g_count == 0 {
        return Err(Error::Contract("need at least one group".into()));
    }
    if data.n_subjects() < g_count {
        return Err(Error::Contract(format!(
            "cannot split {} subjects into {} non-empty groups",
            data.n_subjects(),
            g_count
        )));
    }
    if structure == CorrStructure::Un && !data.balanced() {
        return Err(Error::Contract(
            "unstructured working correlation requires a balanced panel".into(),
        ));
    }
    let restarts = match strategy {
        InitStrategy::SubjectwiseKMeans => 1,
        InitStrategy::RandomRestarts(c) => {
            if c == 0 {
                return Err(Error::Contract("RandomRestarts needs count >= 1".into()));
            }
            c
        }
    };
    let mut best: Option<GroupedFit> = None;
    for r in 0..restarts {
        let (betas0, g0, diags) = init_restart(data, family, g_count, strategy, opts, r)?;
        let candidate = fit_once(data, family, g_count, structure, betas0, g0, diags, opts)
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("restart {r}: {msg}")),
                other => other,
            })?;
        if best.as_ref().is_none_or(|b| candidate.objective < b.objective) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Runs the alternating loop from a caller-supplied start. Useful when a
/// driver prepares many initializations itself (for example selection over
/// several group counts from shared subject estimates).
pub fn fit_with_start(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    g_count: usize,
    structure: CorrStructure,
    betas0: Vec<DVector<f64>>,
    g0: Vec<usize>,
    diagnostics: Vec<String>,
    opts: &FitOptions,
) -> Result<GroupedFit> {
    if g_count == 0 || betas0.len() != g_count || g0.len() != data.n_subjects() {
        return Err(Error::Contract("start dimensions do not match the data".into()));
    }
    if structure == CorrStructure::Un && !data.balanced() {
        return Err(Error::Contract(
            "unstructured working correlation requires a balanced panel".into(),
        ));
    }
    fit_once(data, family, g_count, structure, betas0, g0, diagnostics, opts)
}

#[allow(clippy::too_many_arguments)]
fn fit_once(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    g_count: usize,
    structure: CorrStructure,
    betas0: Vec<DVector<f64>>,
    g0: Vec<usize>,
    mut diagnostics: Vec<String>,
    opts: &FitOptions,
) -> Result<GroupedFit> {
    let mut betas = betas0;
    let mut assignments = g0;
    let mut alpha =
        independence_alpha(structure, data.max_t(), opts.heterogeneous_alpha, g_count);
    let mut corr = CorrState::build(&alpha, data)?;

    let mut history: Vec<usize> = Vec::new();
    let mut seen: Vec<(u64, Vec<usize>)> = Vec::new();
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut last_dbeta;
    let mut last_fits: Option<Vec<GroupFit>> = None;
    let mut pending: Option<(Vec<usize>, Vec<f64>)> = None;
    let mut converged = false;
    let mut outer = 0;
    let mut final_objective = f64::NAN;

    while outer < opts.max_outer {
        outer += 1;
        // assignment step
        let (mut new_g, mut dists) = match pending.take() {
            Some(scan) => scan,
            None => assign_scan(data, family, &betas, &corr)?,
        };
        fix_empty_groups(&mut new_g, &mut dists, data, family, &betas, &corr, &mut diagnostics)?;
        let changes = new_g
            .iter()
            .zip(assignments.iter())
            .filter(|(a, b)| a != b)
            .count();
        assignments = new_g;
        history.push(changes);

        // A repeat of an *earlier* assignment vector after a change is a
        // cycle; an unchanged vector is just the stability path.
        let h = hash_assignments(&assignments);
        let revisit = seen.iter().any(|(hh, gg)| *hh == h && gg == &assignments);
        if changes > 0 && revisit {
            diagnostics.push(format!(
                "assignment cycle detected at outer iteration {outer}; returning lowest-objective iterate"
            ));
            break;
        }
        if !revisit {
            seen.push((h, assignments.clone()));
        }
        snapshots.push(Snapshot {
            objective: dists.iter().sum(),
            assignments: assignments.clone(),
            betas: betas.clone(),
            alpha: alpha.clone(),
        });

        // coefficient step under the current working correlation
        let (fits, dbeta) =
            solve_all_groups(data, family, g_count, &assignments, &betas, &corr, &opts.solver)?;
        betas = fits.iter().map(|f| f.beta.clone()).collect();
        last_fits = Some(fits);
        last_dbeta = dbeta;

        // correlation step
        alpha = estimate_alpha_state(
            structure,
            data,
            family,
            &betas,
            &assignments,
            opts.heterogeneous_alpha,
            g_count,
        )?;
        corr = CorrState::build(&alpha, data)?;

        if changes == 0 && last_dbeta < opts.outer_tol {
            // settle the coefficients under the just-updated correlation and
            // verify the assignments are still optimal at the exit state
            let (fits_pol, dpol) = solve_all_groups(
                data,
                family,
                g_count,
                &assignments,
                &betas,
                &corr,
                &opts.solver,
            )?;
            betas = fits_pol.iter().map(|f| f.beta.clone()).collect();
            last_fits = Some(fits_pol);
            if dpol < opts.outer_tol {
                let (g_v, d_v) = assign_scan(data, family, &betas, &corr)?;
                if g_v == assignments {
                    final_objective = d_v.iter().sum();
                    converged = true;
                    break;
                }
                pending = Some((g_v, d_v));
            }
        }
    }

    let group_fits = if converged {
        last_fits.expect("converged exit always has fits")
    } else {
        // iteration cap or cycle: return the lowest-objective iterate seen
        let best_idx = snapshots
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.objective.partial_cmp(&b.objective).unwrap())
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Numeric("no iterate recorded before exit".into()))?;
        let snap = snapshots.swap_remove(best_idx);
        assignments = snap.assignments;
        betas = snap.betas;
        alpha = snap.alpha;
        final_objective = snap.objective;
        corr = CorrState::build(&alpha, data)?;
        evaluate_group_fits(data, family, g_count, &assignments, &betas, &corr, opts)?
    };

    Ok(GroupedFit {
        n_groups: g_count,
        betas,
        assignments,
        alpha,
        group_fits,
        outer_iterations: outer,
        converged,
        objective: final_objective,
        history,
        diagnostics,
    })
}

/// Zero-iteration evaluation of per-group statistics at a fixed state.
fn evaluate_group_fits(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    g_count: usize,
    labels: &[usize],
    betas: &[DVector<f64>],
    corr: &CorrState,
    opts: &FitOptions,
) -> Result<Vec<GroupFit>> {
    let mut fits = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let members: Vec<&Subject> = data
            .subjects()
            .iter()
            .enumerate()
            .filter(|(i, _)| labels[*i] == g)
            .map(|(_, s)| s)
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyGroup(g));
        }
        let eval = evaluate_group(&members, family, &betas[g], corr.for_group(g))?;
        let score_norm = eval.score.amax();
        let (sandwich_cov, ridge_used) = sandwich_from(&eval.h, &eval.meat)?;
        fits.push(GroupFit {
            beta: betas[g].clone(),
            iterations: 0,
            converged: score_norm < opts.solver.tol_score,
            score_norm,
            h: eval.h,
            sandwich_cov,
            n_g: members.len(),
            ridge_used,
        });
    }
    Ok(fits)
}
