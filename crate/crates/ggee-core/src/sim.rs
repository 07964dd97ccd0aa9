//! Simulation designs: correlated covariates, correlated binary responses
//! through a latent-Gaussian threshold construction, the three
//! coefficient-heterogeneity scenarios, and the SEL/CE/ASL evaluation
//! metrics with optimal label alignment.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::corr::{pd_repair, PD_FLOOR};
use crate::data::{LongitudinalDataset, Subject};
use crate::error::{Error, Result};
use crate::grouping::GroupedFit;
use crate::normal::{adaptive_simpson, bvn_pdf, norm_quantile};
use crate::rng::derive_rng;

const TAG_SIM_X: u64 = 0x5831;
const TAG_SIM_B: u64 = 0x4232;
const TAG_SIM_Y: u64 = 0x5933;

/// Value tolerance of the latent-correlation bisection.
const LATENT_TOL: f64 = 1e-10;
/// Per-segment quadrature tolerance inside the bisection (segments
/// accumulate, so it sits below the bisection tolerance).
const SEGMENT_TOL: f64 = 1e-13;

/// True within-subject correlation of the binary responses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruthCorr {
    Id,
    /// Exchangeable with the given binary correlation.
    Ex(f64),
    /// AR(1) with the given base binary correlation.
    Ar1(f64),
}

impl TruthCorr {
    fn target(&self, s: usize, t: usize) -> f64 {
        match self {
            TruthCorr::Id => 0.0,
            TruthCorr::Ex(rho) => *rho,
            TruthCorr::Ar1(rho) => Float::powi(*rho, s.abs_diff(t) as i32),
        }
    }
}

/// Coefficient-heterogeneity scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Exact three-group structure.
    S1,
    /// Three groups plus uniform perturbations on `[-0.5, 0.5]^3`.
    S2,
    /// Fully subject-specific coefficients.
    S3,
}

/// A data-generating configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimScenario {
    pub n: usize,
    pub t: usize,
    pub kind: ScenarioKind,
    pub truth: TruthCorr,
    pub covariate_rho: f64,
}

impl SimScenario {
    pub fn new(kind: ScenarioKind, truth: TruthCorr, n: usize, t: usize) -> Result<Self> {
        if n == 0 || t == 0 {
            return Err(Error::Contract("scenario sizes must be positive".into()));
        }
        if n % 3 != 0 {
            return Err(Error::Contract(format!("n={n} must be divisible by 3")));
        }
        Ok(Self { n, t, kind, truth, covariate_rho: 0.4 })
    }
}

/// The three true group coefficient vectors.
pub fn group_betas() -> [DVector<f64>; 3] {
    [
        DVector::from_vec(vec![0.0, -2.0, 0.0]),
        DVector::from_vec(vec![0.0, 1.0, 2.0]),
        DVector::from_vec(vec![0.0, 1.0, -2.0]),
    ]
}

/// Block assignment: the first n/3 subjects in group 0, the next n/3 in
/// group 1, the rest in group 2.
pub fn true_group_of(i: usize, n: usize) -> usize {
    let third = n / 3;
    (i / third).min(2)
}

/// One subject's covariate matrix: an intercept column plus a bivariate
/// normal pair with unit variances and the requested correlation.
fn covariate_matrix<R: Rng + ?Sized>(t: usize, rho: f64, rng: &mut R) -> DMatrix<f64> {
    let b = Float::sqrt(1.0 - rho * rho);
    let mut x = DMatrix::zeros(t, 3);
    for r in 0..t {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        x[(r, 0)] = 1.0;
        x[(r, 1)] = z1;
        x[(r, 2)] = rho * z1 + b * z2;
    }
    x
}

/// Covariate matrices for `n` subjects drawn from one stream.
pub fn gen_covariates<R: Rng + ?Sized>(
    n: usize,
    t: usize,
    rho: f64,
    rng: &mut R,
) -> Vec<DMatrix<f64>> {
    (0..n).map(|_| covariate_matrix(t, rho, rng)).collect()
}

/// Latent-normal correlation solving the pairwise thresholded-Gaussian moment
/// equation for a target binary correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentCorr {
    pub r: f64,
    /// The requested binary correlation fell outside the feasible bounds for
    /// these marginals and was clamped to the nearest bound.
    pub clamped: bool,
}

/// Solves `Phi2(z_s, z_t; r) = rho sqrt(p_s q_s p_t q_t) + p_s p_t` for the
/// latent correlation `r` by bisection, with the CDF evaluated through
/// adaptive quadrature of its correlation derivative.
pub fn latent_corr_for_binary(p_s: f64, p_t: f64, rho_target: f64) -> Result<LatentCorr> {
    if !(p_s > 0.0 && p_s < 1.0 && p_t > 0.0 && p_t < 1.0) {
        return Err(Error::Domain("marginal probabilities must lie in (0, 1)"));
    }
    if !rho_target.is_finite() {
        return Err(Error::Domain("target correlation must be finite"));
    }
    let q_s = 1.0 - p_s;
    let q_t = 1.0 - p_t;
    let raw_p11 = rho_target * Float::sqrt(p_s * q_s * p_t * q_t) + p_s * p_t;
    // Frechet bounds on the joint success probability; they are attained by
    // the comonotone (r = 1) and countermonotone (r = -1) latent pairs.
    let lo_bound = Float::max(0.0, p_s + p_t - 1.0);
    let hi_bound = Float::min(p_s, p_t);
    if raw_p11 >= hi_bound {
        return Ok(LatentCorr { r: 1.0, clamped: raw_p11 > hi_bound });
    }
    if raw_p11 <= lo_bound {
        return Ok(LatentCorr { r: -1.0, clamped: raw_p11 < lo_bound });
    }
    let z_s = norm_quantile(p_s)?;
    let z_t = norm_quantile(p_t)?;

    // Bisection with an incremental anchor: Phi2 at the midpoint is the
    // anchored value plus the integral of the correlation derivative over
    // the (geometrically shrinking) gap.
    let mut lo = -1.0 + 1e-12;
    let mut hi = 1.0 - 1e-12;
    let mut anchor_r = 0.0;
    let mut anchor_f = p_s * p_t; // Phi(z_s) Phi(z_t) up to quantile roundoff
    let mut best = (anchor_r, Float::abs(anchor_f - raw_p11));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let seg = adaptive_simpson(|u| bvn_pdf(z_s, z_t, u), anchor_r, mid, SEGMENT_TOL)?;
        let f_mid = anchor_f + seg;
        anchor_r = mid;
        anchor_f = f_mid;
        let err = Float::abs(f_mid - raw_p11);
        if err < best.1 {
            best = (mid, err);
        }
        if err < LATENT_TOL || hi - lo < 1e-15 {
            return Ok(LatentCorr { r: best.0, clamped: false });
        }
        if f_mid < raw_p11 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LatentCorr { r: best.0, clamped: false })
}

/// Precomputed latent-Gaussian sampler for one subject's marginal
/// probability vector and a target binary correlation structure.
#[derive(Debug, Clone)]
pub struct BinaryGenerator {
    chol_l: DMatrix<f64>,
    thresholds: DVector<f64>,
    pub clamped_pairs: usize,
    pub repaired: bool,
}

impl BinaryGenerator {
    pub fn new(pi: &DVector<f64>, truth: &TruthCorr) -> Result<Self> {
        let t = pi.len();
        if t == 0 {
            return Err(Error::Contract("need at least one time point".into()));
        }
        let mut thresholds = DVector::zeros(t);
        for i in 0..t {
            thresholds[i] = norm_quantile(pi[i])?;
        }
        let mut r_lat = DMatrix::identity(t, t);
        let mut clamped_pairs = 0;
        for s in 0..t {
            for u in (s + 1)..t {
                let solve = latent_corr_for_binary(pi[s], pi[u], truth.target(s, u))?;
                if solve.clamped {
                    clamped_pairs += 1;
                }
                r_lat[(s, u)] = solve.r;
                r_lat[(u, s)] = solve.r;
            }
        }
        let (chol, repaired) = match Cholesky::new(r_lat.clone()) {
            Some(c) => (c, false),
            None => {
                let fixed = pd_repair(&r_lat, PD_FLOOR);
                let c = Cholesky::new(fixed).ok_or_else(|| {
                    Error::Numeric("latent correlation not PD even after repair".into())
                })?;
                (c, true)
            }
        };
        Ok(Self { chol_l: chol.unpack(), thresholds, clamped_pairs, repaired })
    }

    /// Draws one correlated binary vector: `y_t = 1{Z_t <= Phi^{-1}(pi_t)}`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let t = self.thresholds.len();
        let eps = DVector::from_fn(t, |_, _| rng.sample(StandardNormal));
        let z = &self.chol_l * eps;
        DVector::from_fn(t, |i, _| if z[i] <= self.thresholds[i] { 1.0 } else { 0.0 })
    }
}

/// One-shot draw of a correlated binary response vector.
pub fn gen_binary_longitudinal<R: Rng + ?Sized>(
    pi: &DVector<f64>,
    truth: &TruthCorr,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(BinaryGenerator::new(pi, truth)?.draw(rng))
}

/// A generated dataset together with its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub data: LongitudinalDataset,
    pub true_groups: Vec<usize>,
    pub true_subject_betas: Vec<DVector<f64>>,
    pub group_betas: Vec<DVector<f64>>,
    /// Pairs whose requested binary correlation was clamped to a Frechet
    /// bound, summed over subjects.
    pub clamped_pairs: usize,
}

/// Generates one replication of a scenario. Draws are keyed per
/// `(master_seed, replication, subject)`, so replications and subjects can
/// be produced in any order or in parallel with identical results.
pub fn generate(scenario: &SimScenario, master_seed: u64, rep: u64) -> Result<GeneratedData> {
    let bases = group_betas();
    let logistic = crate::family::FamilySpec::bernoulli_logit();
    let mut subjects = Vec::with_capacity(scenario.n);
    let mut true_groups = Vec::with_capacity(scenario.n);
    let mut true_betas = Vec::with_capacity(scenario.n);
    let mut clamped = 0usize;
    for i in 0..scenario.n {
        let g = true_group_of(i, scenario.n);
        true_groups.push(g);
        let mut rng_x = derive_rng(master_seed, &[TAG_SIM_X, rep, i as u64]);
        let x = covariate_matrix(scenario.t, scenario.covariate_rho, &mut rng_x);
        let beta_i = match scenario.kind {
            ScenarioKind::S1 => bases[g].clone(),
            ScenarioKind::S2 => {
                let mut rng_b = derive_rng(master_seed, &[TAG_SIM_B, rep, i as u64]);
                let mut b = bases[g].clone();
                for k in 0..3 {
                    b[k] += rng_b.random_range(-0.5..0.5);
                }
                b
            }
            ScenarioKind::S3 => {
                let mut rng_b = derive_rng(master_seed, &[TAG_SIM_B, rep, i as u64]);
                DVector::from_vec(vec![
                    rng_b.random_range(-0.2..0.2),
                    rng_b.random_range(-2.0..2.0),
                    rng_b.random_range(0.0..2.0),
                ])
            }
        };
        let mut pi = DVector::zeros(scenario.t);
        for r in 0..scenario.t {
            pi[r] = logistic.mean(x.row(r).transpose().dot(&beta_i))?;
        }
        let generator = BinaryGenerator::new(&pi, &scenario.truth)?;
        clamped += generator.clamped_pairs;
        let mut rng_y = derive_rng(master_seed, &[TAG_SIM_Y, rep, i as u64]);
        let y = generator.draw(&mut rng_y);
        subjects.push(Subject {
            id: format!("s{i}"),
            y,
            x,
            times: (0..scenario.t).map(|v| v as f64).collect(),
        });
        true_betas.push(beta_i);
    }
    Ok(GeneratedData {
        data: LongitudinalDataset::new(subjects)?,
        true_groups,
        true_subject_betas: true_betas,
        group_betas: bases.to_vec(),
        clamped_pairs: clamped,
    })
}

fn confusion(est: &[usize], truth: &[usize], g: usize) -> Vec<Vec<u64>> {
    let mut c = vec![vec![0u64; g]; g];
    for (&e, &t) in est.iter().zip(truth.iter()) {
        c[e][t] += 1;
    }
    c
}

fn permutation_score(c: &[Vec<u64>], perm: &[usize]) -> u64 {
    perm.iter().enumerate().map(|(e, &t)| c[e][t]).sum()
}

/// Exhaustive search over all `G!` label permutations (Heap's algorithm).
fn align_exhaustive(c: &[Vec<u64>], g: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..g).collect();
    let mut best_perm = perm.clone();
    let mut best = permutation_score(c, &perm);
    let mut stack = vec![0usize; g];
    let mut i = 1;
    while i < g {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            let s = permutation_score(c, &perm);
            if s > best {
                best = s;
                best_perm = perm.clone();
            }
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    best_perm
}

/// O(G^3) shortest-augmenting-path assignment, minimizing cost.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut ans = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            ans[p[j] - 1] = j - 1;
        }
    }
    ans
}

/// Hungarian alignment on the confusion matrix (maximizing matches).
fn align_hungarian(c: &[Vec<u64>], g: usize) -> Vec<usize> {
    let max_c = c.iter().flatten().copied().max().unwrap_or(0) as f64;
    let cost: Vec<Vec<f64>> = c
        .iter()
        .map(|row| row.iter().map(|&v| max_c - v as f64).collect())
        .collect();
    let _ = g;
    hungarian_min(&cost)
}

/// Permutation `sigma` (indexed by estimated label, valued in true labels)
/// minimizing the post-relabeling classification error. Exhaustive up to
/// G = 10, Hungarian assignment beyond.
pub fn align_labels(est: &[usize], truth: &[usize], g: usize) -> Result<Vec<usize>> {
    if est.len() != truth.len() {
        return Err(Error::Contract("alignment requires equal-length labelings".into()));
    }
    if g == 0 || est.iter().chain(truth.iter()).any(|&l| l >= g) {
        return Err(Error::Contract(format!("labels must lie in 0..{g}")));
    }
    let c = confusion(est, truth, g);
    if g <= 10 {
        Ok(align_exhaustive(&c, g))
    } else {
        Ok(align_hungarian(&c, g))
    }
}

/// Evaluation of one fit against scenario truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Squared error loss of the slope coefficients per true group.
    pub sel_by_group: Vec<f64>,
    /// Classification error after label alignment.
    pub ce: f64,
    /// Average squared error loss of per-subject slope estimates.
    pub asl: f64,
    /// The permutation used (estimated label -> true label).
    pub alignment: Vec<usize>,
}

/// ASL alone: defined for any group count via `beta_i = beta_{g_i}`.
/// Only the slope coordinates (indices 1 and 2) enter.
pub fn average_squared_loss(fit: &GroupedFit, truth: &GeneratedData) -> f64 {
    let n = truth.true_subject_betas.len();
    let mut acc = 0.0;
    for i in 0..n {
        let est = &fit.betas[fit.assignments[i]];
        let tru = &truth.true_subject_betas[i];
        for k in 1..=2 {
            let d = est[k] - tru[k];
            acc += d * d;
        }
    }
    acc / n as f64
}

/// SEL, CE, and ASL for a fit whose group count matches the truth.
pub fn metrics(fit: &GroupedFit, truth: &GeneratedData) -> Result<MetricReport> {
    let g = truth.group_betas.len();
    if fit.n_groups != g {
        return Err(Error::Contract(format!(
            "fit has {} groups but the truth has {g}; SEL/CE need matching counts",
            fit.n_groups
        )));
    }
    let alignment = align_labels(&fit.assignments, &truth.true_groups, g)?;
    let n = truth.true_groups.len();
    let mut wrong = 0usize;
    for i in 0..n {
        if alignment[fit.assignments[i]] != truth.true_groups[i] {
            wrong += 1;
        }
    }
    let ce = wrong as f64 / n as f64;

    // slope coordinates only (indices 1 and 2)
    let mut sel_by_group = vec![0.0; g];
    for (e, &t) in alignment.iter().enumerate() {
        let est = &fit.betas[e];
        let tru = &truth.group_betas[t];
        for k in 1..=2 {
            let d = est[k] - tru[k];
            sel_by_group[t] += d * d;
        }
    }
    Ok(MetricReport { sel_by_group, ce, asl: average_squared_loss(fit, truth), alignment })
}
