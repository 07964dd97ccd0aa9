//! Working-correlation matrices `R(alpha)`: construction, moment-based
//! estimation of `alpha` from standardized residuals, and positive-definite
//! repair.
//!
//! Estimation minimizes the Frobenius distance between `R(alpha)` and the
//! empirical residual-moment matrix; on unbalanced panels the distance is
//! summed over subject-specific `T_i x T_i` blocks, which reduces to the
//! balanced criterion when all `T_i` agree.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_traits::Float;

use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::family::{subject_matrices, FamilySpec};

/// Margin keeping estimated parameters strictly inside the PD region so the
/// materialized matrices stay invertible throughout the iteration.
const ALPHA_MARGIN: f64 = 1e-6;

/// Golden-section tolerance on the AR(1) argument.
const GOLDEN_TOL: f64 = 1e-8;

/// Default eigenvalue floor for [`pd_repair`].
pub const PD_FLOOR: f64 = 1e-6;

/// Supported working-correlation structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrStructure {
    /// Independence (identity matrix, no parameters).
    Id,
    /// Exchangeable: common off-diagonal `alpha`.
    Ex,
    /// First-order autoregressive: `R_kl = alpha^|k-l|`.
    Ar1,
    /// Unstructured: one parameter per off-diagonal pair (balanced data only).
    Un,
}

impl CorrStructure {
    pub fn n_params(&self, t: usize) -> usize {
        match self {
            CorrStructure::Id => 0,
            CorrStructure::Ex | CorrStructure::Ar1 => 1,
            CorrStructure::Un => t * (t - 1) / 2,
        }
    }
}

/// A structure tag plus its parameter vector.
///
/// `heterogeneous` marks specs estimated per group rather than pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingCorrelationSpec {
    pub structure: CorrStructure,
    pub alpha: Vec<f64>,
    pub heterogeneous: bool,
}

impl WorkingCorrelationSpec {
    pub fn new(structure: CorrStructure, alpha: Vec<f64>) -> Self {
        Self { structure, alpha, heterogeneous: false }
    }

    /// The independence-equivalent starting spec (`alpha = 0`).
    pub fn independence_start(structure: CorrStructure, t: usize) -> Self {
        let alpha = vec![0.0; structure.n_params(t)];
        Self { structure, alpha, heterogeneous: false }
    }

    /// Materializes the `t x t` correlation matrix.
    pub fn build_matrix(&self, t: usize) -> Result<DMatrix<f64>> {
        build_matrix(self, t)
    }
}

/// Builds the `t x t` working correlation for a spec, validating that the
/// parameters lie in the positive-definite range.
pub fn build_matrix(spec: &WorkingCorrelationSpec, t: usize) -> Result<DMatrix<f64>> {
    if t == 0 {
        return Err(Error::Contract("correlation dimension must be positive".into()));
    }
    match spec.structure {
        CorrStructure::Id => Ok(DMatrix::identity(t, t)),
        CorrStructure::Ex => {
            let a = single_param(spec)?;
            if t >= 2 {
                let lo = -1.0 / (t as f64 - 1.0);
                if !(a > lo && a < 1.0) {
                    return Err(Error::Parameter(format!(
                        "exchangeable alpha {a} outside admissible ({lo}, 1) for T={t}"
                    )));
                }
            }
            let mut r = DMatrix::from_element(t, t, a);
            r.fill_diagonal(1.0);
            Ok(r)
        }
        CorrStructure::Ar1 => {
            let a = single_param(spec)?;
            if !(a > -1.0 && a < 1.0) {
                return Err(Error::Parameter(format!(
                    "AR(1) alpha {a} outside admissible (-1, 1)"
                )));
            }
            Ok(DMatrix::from_fn(t, t, |k, l| {
                Float::powi(a, (k as i32 - l as i32).abs())
            }))
        }
        CorrStructure::Un => {
            let need = t * (t - 1) / 2;
            if spec.alpha.len() != need {
                return Err(Error::Contract(format!(
                    "unstructured alpha has {} entries, expected {} for T={t}",
                    spec.alpha.len(),
                    need
                )));
            }
            let mut r = DMatrix::identity(t, t);
            let mut idx = 0;
            for k in 0..t {
                for l in (k + 1)..t {
                    r[(k, l)] = spec.alpha[idx];
                    r[(l, k)] = spec.alpha[idx];
                    idx += 1;
                }
            }
            if Cholesky::new(r.clone()).is_none() {
                return Err(Error::Parameter(
                    "unstructured alpha is not positive definite; admissible vectors keep all eigenvalues positive".into(),
                ));
            }
            Ok(r)
        }
    }
}

fn single_param(spec: &WorkingCorrelationSpec) -> Result<f64> {
    if spec.alpha.len() != 1 {
        return Err(Error::Contract(format!(
            "{:?} takes one parameter, got {}",
            spec.structure,
            spec.alpha.len()
        )));
    }
    Ok(spec.alpha[0])
}

/// Empirical residual-moment matrix of the working-correlation criterion:
/// the average of `A^{-1/2} (y - mu) (y - mu)^t A^{-1/2}` over contributing
/// subjects, symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    pub s: DMatrix<f64>,
    pub n_used: usize,
}

impl MomentMatrix {
    pub fn t(&self) -> usize {
        self.s.nrows()
    }
}

/// Standardized residual `A^{-1/2} (y - m(X beta))` for one subject.
pub(crate) fn standardized_residual(
    family: &FamilySpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sm = subject_matrices(family, x, beta)?;
    let mut eps = y - sm.mu;
    for i in 0..eps.len() {
        eps[i] /= Float::sqrt(sm.a_diag[i]);
    }
    Ok(eps)
}

fn residuals_for(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    beta_by_group: &[DVector<f64>],
    assignments: &[usize],
    restrict_to_group: Option<usize>,
) -> Result<Vec<DVector<f64>>> {
    if assignments.len() != data.n_subjects() {
        return Err(Error::Contract("assignments length must equal subject count".into()));
    }
    let g_count = beta_by_group.len();
    let mut out = Vec::new();
    for (i, subject) in data.subjects().iter().enumerate() {
        let g = assignments[i];
        if g >= g_count {
            return Err(Error::Contract(format!(
                "subject {i} assigned to group {g} but only {g_count} groups exist"
            )));
        }
        if let Some(r) = restrict_to_group {
            if g != r {
                continue;
            }
        }
        out.push(standardized_residual(family, &subject.x, &subject.y, &beta_by_group[g])?);
    }
    if out.is_empty() {
        return Err(Error::EmptyGroup(restrict_to_group.unwrap_or(0)));
    }
    Ok(out)
}

/// Averaged residual outer-product matrix (balanced panels).
///
/// With `restrict_to_group`, only that group's subjects contribute and the
/// average is over the group size.
pub fn empirical_moment_matrix(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    beta_by_group: &[DVector<f64>],
    assignments: &[usize],
    restrict_to_group: Option<usize>,
) -> Result<MomentMatrix> {
    if !data.balanced() {
        return Err(Error::Contract(
            "empirical moment matrix requires a balanced panel; use the per-lag criterion for unbalanced data".into(),
        ));
    }
    let residuals = residuals_for(data, family, beta_by_group, assignments, restrict_to_group)?;
    let t = residuals[0].len();
    let mut s = DMatrix::zeros(t, t);
    for eps in &residuals {
        s.ger(1.0, eps, eps, 1.0);
    }
    s /= residuals.len() as f64;
    let s = symmetrize(&s);
    Ok(MomentMatrix { s, n_used: residuals.len() })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Per-lag sums of residual products; sufficient statistics for the EX and
/// AR(1) Frobenius criteria on balanced or unbalanced panels.
#[derive(Debug, Clone)]
struct LagMoments {
    /// Sum of ordered-pair products at lag d (index d-1).
    m: Vec<f64>,
    /// Ordered-pair counts at lag d (index d-1).
    c: Vec<f64>,
}

impl LagMoments {
    fn from_residuals(residuals: &[DVector<f64>]) -> Self {
        let max_lag = residuals.iter().map(|e| e.len()).max().unwrap_or(1) - 1;
        let mut m = vec![0.0; max_lag];
        let mut c = vec![0.0; max_lag];
        for eps in residuals {
            let t = eps.len();
            for k in 0..t {
                for l in 0..t {
                    if k != l {
                        let d = k.abs_diff(l);
                        m[d - 1] += eps[k] * eps[l];
                        c[d - 1] += 1.0;
                    }
                }
            }
        }
        Self { m, c }
    }

    fn from_matrix(s: &MomentMatrix) -> Self {
        let t = s.t();
        let mut m = vec![0.0; t.saturating_sub(1)];
        let mut c = vec![0.0; t.saturating_sub(1)];
        for k in 0..t {
            for l in 0..t {
                if k != l {
                    let d = k.abs_diff(l);
                    m[d - 1] += s.s[(k, l)];
                    c[d - 1] += 1.0;
                }
            }
        }
        Self { m, c }
    }

    fn off_diag_mean(&self) -> f64 {
        let total_c: f64 = self.c.iter().sum();
        if total_c == 0.0 {
            return 0.0;
        }
        let total_m: f64 = self.m.iter().sum();
        total_m / total_c
    }

    /// Frobenius objective restricted to off-diagonal terms, as a function
    /// of the AR(1) parameter.
    fn ar1_objective(&self, a: f64) -> f64 {
        let mut acc = 0.0;
        let mut ad = 1.0;
        for d in 0..self.m.len() {
            ad *= a;
            acc += self.c[d] * ad * ad - 2.0 * ad * self.m[d];
        }
        acc
    }

    fn max_t(&self) -> usize {
        self.m.len() + 1
    }
}

fn clip(a: f64, lo: f64, hi: f64) -> f64 {
    Float::min(Float::max(a, lo), hi)
}

fn estimate_from_lags(structure: CorrStructure, lags: &LagMoments) -> Result<Vec<f64>> {
    match structure {
        CorrStructure::Id => Ok(Vec::new()),
        CorrStructure::Ex => {
            let t = lags.max_t();
            let lo = if t >= 2 {
                -1.0 / (t as f64 - 1.0) + ALPHA_MARGIN
            } else {
                -1.0 + ALPHA_MARGIN
            };
            Ok(vec![clip(lags.off_diag_mean(), lo, 1.0 - ALPHA_MARGIN)])
        }
        CorrStructure::Ar1 => {
            let lo = -1.0 + ALPHA_MARGIN;
            let hi = 1.0 - ALPHA_MARGIN;
            // Coarse scan brackets the global minimum (the lag polynomial can
            // have a local minimum on each side of zero), then golden section.
            let n_grid = 80;
            let mut best = lo;
            let mut best_f = f64::INFINITY;
            for k in 0..=n_grid {
                let a = lo + (hi - lo) * k as f64 / n_grid as f64;
                let f = lags.ar1_objective(a);
                if f < best_f {
                    best_f = f;
                    best = a;
                }
            }
            let step = (hi - lo) / n_grid as f64;
            let a = golden_section(
                |a| lags.ar1_objective(a),
                Float::max(lo, best - step),
                Float::min(hi, best + step),
                GOLDEN_TOL,
            );
            Ok(vec![clip(a, lo, hi)])
        }
        CorrStructure::Un => Err(Error::Contract(
            "unstructured alpha requires the full moment matrix".into(),
        )),
    }
}

/// Frobenius-criterion estimate of `alpha` from a moment matrix.
///
/// EX has the closed form (mean of strict off-diagonal entries, clipped to
/// the PD range); AR(1) is minimized by golden section; UN takes the
/// off-diagonals of `S` with unit diagonal followed by [`pd_repair`].
pub fn estimate_alpha(structure: CorrStructure, s: &MomentMatrix) -> Result<Vec<f64>> {
    match structure {
        CorrStructure::Id | CorrStructure::Ex | CorrStructure::Ar1 => {
            estimate_from_lags(structure, &LagMoments::from_matrix(s))
        }
        CorrStructure::Un => {
            let t = s.t();
            let mut r = symmetrize(&s.s);
            r.fill_diagonal(1.0);
            let repaired = pd_repair(&r, PD_FLOOR);
            let mut alpha = Vec::with_capacity(t * (t - 1) / 2);
            for k in 0..t {
                for l in (k + 1)..t {
                    alpha.push(repaired[(k, l)]);
                }
            }
            Ok(alpha)
        }
    }
}

/// Estimates a full working-correlation spec from data under given group
/// coefficients and assignments. Handles unbalanced panels for ID/EX/AR(1)
/// through the per-lag criterion; UN requires balance.
pub fn estimate_spec(
    structure: CorrStructure,
    data: &LongitudinalDataset,
    family: &FamilySpec,
    beta_by_group: &[DVector<f64>],
    assignments: &[usize],
    restrict_to_group: Option<usize>,
) -> Result<WorkingCorrelationSpec> {
    let alpha = match structure {
        CorrStructure::Un => {
            let s = empirical_moment_matrix(data, family, beta_by_group, assignments, restrict_to_group)?;
            estimate_alpha(structure, &s)?
        }
        _ => {
            if data.balanced() {
                let s = empirical_moment_matrix(data, family, beta_by_group, assignments, restrict_to_group)?;
                estimate_alpha(structure, &s)?
            } else {
                let residuals =
                    residuals_for(data, family, beta_by_group, assignments, restrict_to_group)?;
                estimate_from_lags(structure, &LagMoments::from_residuals(&residuals))?
            }
        }
    };
    Ok(WorkingCorrelationSpec {
        structure,
        alpha,
        heterogeneous: restrict_to_group.is_some(),
    })
}

/// Eigenvalue-clipped projection to a positive-definite correlation matrix:
/// eigenvalues below `floor` are raised to `floor` and the result is rescaled
/// to unit diagonal.
pub fn pd_repair(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let mut vals = eig.eigenvalues;
    for v in vals.iter_mut() {
        if *v < floor {
            *v = floor;
        }
    }
    let mut rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let scale: Vec<f64> = (0..rebuilt.nrows())
        .map(|i| 1.0 / Float::sqrt(rebuilt[(i, i)]))
        .collect();
    for k in 0..rebuilt.nrows() {
        for l in 0..rebuilt.ncols() {
            rebuilt[(k, l)] *= scale[k] * scale[l];
        }
    }
    let mut out = symmetrize(&rebuilt);
    out.fill_diagonal(1.0);
    out
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// A working-correlation spec with eagerly factorized matrices for every
/// panel size it will be applied to. Immutable after construction, so it can
/// be shared across subjects.
#[derive(Debug, Clone)]
pub struct CorrCache {
    spec: WorkingCorrelationSpec,
    chol: BTreeMap<usize, Cholesky<f64, Dyn>>,
}

impl CorrCache {
    /// Factorizes `R(alpha)` for each distinct `T_i` in the dataset.
    pub fn for_dataset(spec: WorkingCorrelationSpec, data: &LongitudinalDataset) -> Result<Self> {
        let mut sizes: Vec<usize> = data.subjects().iter().map(|s| s.n_obs()).collect();
        sizes.sort_unstable();
        sizes.dedup();
        Self::for_sizes(spec, &sizes)
    }

    pub fn for_sizes(spec: WorkingCorrelationSpec, sizes: &[usize]) -> Result<Self> {
        let mut chol = BTreeMap::new();
        for &t in sizes {
            let r = build_matrix(&spec, t)?;
            let fact = Cholesky::new(r).ok_or_else(|| {
                Error::Numeric(format!("working correlation for T={t} is not positive definite"))
            })?;
            chol.insert(t, fact);
        }
        Ok(Self { spec, chol })
    }

    pub fn spec(&self) -> &WorkingCorrelationSpec {
        &self.spec
    }

    pub fn cholesky(&self, t: usize) -> Result<&Cholesky<f64, Dyn>> {
        self.chol.get(&t).ok_or_else(|| {
            Error::Contract(format!("no factorization prepared for panel size T={t}"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;
    use crate::rng::derive_rng;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use rand::Rng;

    fn spec(structure: CorrStructure, alpha: &[f64]) -> WorkingCorrelationSpec {
        WorkingCorrelationSpec::new(structure, alpha.to_vec())
    }

    #[test]
    fn exchangeable_zero_is_identity() {
        let r = build_matrix(&spec(CorrStructure::Ex, &[0.0]), 3).unwrap();
        assert_eq!(r, DMatrix::identity(3, 3));
    }

    #[test]
    fn ar1_powers() {
        let r = build_matrix(&spec(CorrStructure::Ar1, &[0.7]), 3).unwrap();
        let expect = dmatrix![1.0, 0.7, 0.49; 0.7, 1.0, 0.7; 0.49, 0.7, 1.0];
        assert_relative_eq!(r, expect, epsilon = 1e-15);
    }

    #[test]
    fn exchangeable_eigenvalues() {
        // EX eigenvalues are 1 + (T-1) alpha and 1 - alpha.
        let r = build_matrix(&spec(CorrStructure::Ex, &[0.5]), 4).unwrap();
        let mut eig: Vec<f64> = r.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [0.5, 0.5, 0.5, 2.5];
        for (e, x) in eig.iter().zip(expect) {
            assert_relative_eq!(*e, x, epsilon = 1e-12);
        }
    }

    #[test]
    fn out_of_range_alpha_names_interval() {
        let err = build_matrix(&spec(CorrStructure::Ex, &[-0.6]), 3).unwrap_err();
        match err {
            Error::Parameter(msg) => assert!(msg.contains("(-0.5, 1)"), "message: {msg}"),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(build_matrix(&spec(CorrStructure::Ar1, &[1.0]), 3).is_err());
        assert!(build_matrix(&spec(CorrStructure::Un, &[0.9, 0.9, -0.9]), 3).is_err());
    }

    #[test]
    fn all_admissible_alphas_factorize() {
        for t in [2usize, 3, 5, 8] {
            for k in 1..20 {
                let a = -0.95 + 1.9 * k as f64 / 20.0;
                if a > -1.0 / (t as f64 - 1.0) && a < 1.0 {
                    let r = build_matrix(&spec(CorrStructure::Ex, &[a]), t).unwrap();
                    assert!(Cholesky::new(r).is_some(), "EX t={t} a={a}");
                }
                if a.abs() < 1.0 {
                    let r = build_matrix(&spec(CorrStructure::Ar1, &[a]), t).unwrap();
                    assert!(Cholesky::new(r).is_some(), "AR1 t={t} a={a}");
                }
            }
        }
    }

    fn gaussian_dataset(residual_vectors: &[Vec<f64>]) -> LongitudinalDataset {
        // Zero-mean Gaussian subjects with an all-zero design and beta = 0,
        // so the standardized residuals equal y exactly.
        let subjects = residual_vectors
            .iter()
            .enumerate()
            .map(|(i, v)| Subject {
                id: alloc::format!("s{i}"),
                y: DVector::from_vec(v.clone()),
                x: DMatrix::zeros(v.len(), 1),
                times: (0..v.len()).map(|t| t as f64).collect(),
            })
            .collect();
        LongitudinalDataset::new(subjects).unwrap()
    }

    #[test]
    fn moment_matrix_single_outer_product() {
        let data = gaussian_dataset(&[vec![1.0, -1.0]]);
        let fam = FamilySpec::gaussian_identity();
        let s = empirical_moment_matrix(&data, &fam, &[dvector![0.0]], &[0], None).unwrap();
        assert_relative_eq!(s.s, dmatrix![1.0, -1.0; -1.0, 1.0]);
        assert_eq!(s.n_used, 1);
    }

    #[test]
    fn moment_matrix_averages() {
        let data = gaussian_dataset(&[vec![1.0, 1.0], vec![1.0, -1.0]]);
        let fam = FamilySpec::gaussian_identity();
        let s = empirical_moment_matrix(&data, &fam, &[dvector![0.0]], &[0, 0], None).unwrap();
        assert_relative_eq!(s.s, dmatrix![1.0, 0.0; 0.0, 1.0]);
    }

    #[test]
    fn moment_matrix_bernoulli_scaling() {
        // y = (1, 0), mu = (.5, .5): residuals +-.5 scaled by A^{-1/2} = 2.
        let subjects = vec![Subject {
            id: "s0".into(),
            y: dvector![1.0, 0.0],
            x: DMatrix::zeros(2, 1),
            times: vec![0.0, 1.0],
        }];
        let data = LongitudinalDataset::new(subjects).unwrap();
        let fam = FamilySpec::bernoulli_logit();
        let s = empirical_moment_matrix(&data, &fam, &[dvector![0.0]], &[0], None).unwrap();
        assert_relative_eq!(s.s, dmatrix![1.0, -1.0; -1.0, 1.0], epsilon = 1e-12);
    }

    #[test]
    fn moment_matrix_empty_group_errors() {
        let data = gaussian_dataset(&[vec![1.0, -1.0]]);
        let fam = FamilySpec::gaussian_identity();
        let err =
            empirical_moment_matrix(&data, &fam, &[dvector![0.0], dvector![0.0]], &[0], Some(1))
                .unwrap_err();
        assert_eq!(err, Error::EmptyGroup(1));
    }

    #[test]
    fn estimate_ex_exact() {
        let s = MomentMatrix { s: dmatrix![1.0, 0.4; 0.4, 1.0], n_used: 10 };
        let a = estimate_alpha(CorrStructure::Ex, &s).unwrap();
        assert_relative_eq!(a[0], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn estimate_ex_symmetrized_source() {
        // Asymmetric source with off-diagonals {0.3, 0.5} symmetrizes to 0.4.
        let raw = dmatrix![1.0, 0.3; 0.5, 1.0];
        let s = MomentMatrix { s: (raw.clone() + raw.transpose()) * 0.5, n_used: 1 };
        let a = estimate_alpha(CorrStructure::Ex, &s).unwrap();
        assert_relative_eq!(a[0], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn estimate_ar1_exact() {
        let s = MomentMatrix {
            s: dmatrix![1.0, 0.7, 0.49; 0.7, 1.0, 0.7; 0.49, 0.7, 1.0],
            n_used: 5,
        };
        let a = estimate_alpha(CorrStructure::Ar1, &s).unwrap();
        assert_relative_eq!(a[0], 0.7, epsilon = 1e-6);
    }

    #[test]
    fn estimate_id_empty() {
        let s = MomentMatrix { s: DMatrix::identity(3, 3), n_used: 2 };
        assert!(estimate_alpha(CorrStructure::Id, &s).unwrap().is_empty());
    }

    fn frob_objective(structure: CorrStructure, a: f64, s: &MomentMatrix) -> f64 {
        let r = build_matrix(&spec(structure, &[a]), s.t()).unwrap();
        (&r - &s.s).norm_squared()
    }

    fn random_moment_matrix(rng: &mut impl Rng, t: usize) -> MomentMatrix {
        let mut m = DMatrix::identity(t, t);
        let lo = -1.0 / (t as f64 - 1.0);
        for k in 0..t {
            for l in (k + 1)..t {
                let v = rng.random_range((lo + 0.05)..0.9);
                m[(k, l)] = v;
                m[(l, k)] = v;
            }
        }
        MomentMatrix { s: m, n_used: 1 }
    }

    #[test]
    fn ex_estimate_matches_grid_oracle() {
        let mut rng = derive_rng(41, &[1]);
        for rep in 0..50 {
            let t = 2 + (rep % 4);
            let s = random_moment_matrix(&mut rng, t);
            let a_hat = estimate_alpha(CorrStructure::Ex, &s).unwrap()[0];
            // Independent 1-D grid search of the Frobenius objective.
            let mut best = f64::INFINITY;
            let mut arg = 0.0;
            let lo = (-1.0 / (t as f64 - 1.0)) + 0.01;
            let n = ((0.99 - lo) / 1e-4) as usize;
            for k in 0..=n {
                let a = lo + 1e-4 * k as f64;
                let f = frob_objective(CorrStructure::Ex, a, &s);
                if f < best {
                    best = f;
                    arg = a;
                }
            }
            assert!(
                (a_hat - arg).abs() < 1e-3,
                "rep {rep}: closed form {a_hat} vs grid {arg}"
            );
        }
    }

    #[test]
    fn ar1_estimate_matches_grid_oracle() {
        let mut rng = derive_rng(42, &[2]);
        for rep in 0..50 {
            let t = 2 + (rep % 4);
            let s = random_moment_matrix(&mut rng, t);
            let a_hat = estimate_alpha(CorrStructure::Ar1, &s).unwrap()[0];
            let mut best = f64::INFINITY;
            let mut arg = 0.0;
            let n = (1.98 / 1e-4) as usize;
            for k in 0..=n {
                let a = -0.99 + 1e-4 * k as f64;
                let f = frob_objective(CorrStructure::Ar1, a, &s);
                if f < best {
                    best = f;
                    arg = a;
                }
            }
            assert!(
                (a_hat - arg).abs() < 1e-3,
                "rep {rep}: golden {a_hat} vs grid {arg}"
            );
        }
    }

    #[test]
    fn unbalanced_reduces_to_balanced_when_equal() {
        let data = gaussian_dataset(&[vec![0.9, -0.3, 0.4], vec![-1.1, 0.6, 0.2]]);
        let fam = FamilySpec::gaussian_identity();
        let betas = [dvector![0.0]];
        let s = empirical_moment_matrix(&data, &fam, &betas, &[0, 0], None).unwrap();
        let from_matrix = estimate_alpha(CorrStructure::Ar1, &s).unwrap();
        let from_spec = estimate_spec(CorrStructure::Ar1, &data, &fam, &betas, &[0, 0], None).unwrap();
        assert_relative_eq!(from_matrix[0], from_spec.alpha[0], epsilon = 1e-9);
    }

    #[test]
    fn heterogeneous_single_group_equals_homogeneous() {
        let data = gaussian_dataset(&[vec![0.9, -0.3], vec![-1.1, 0.6], vec![0.4, 0.8]]);
        let fam = FamilySpec::gaussian_identity();
        let betas = [dvector![0.0]];
        let hom = estimate_spec(CorrStructure::Ex, &data, &fam, &betas, &[0, 0, 0], None).unwrap();
        let het =
            estimate_spec(CorrStructure::Ex, &data, &fam, &betas, &[0, 0, 0], Some(0)).unwrap();
        assert_eq!(hom.alpha, het.alpha);
    }

    #[test]
    fn estimate_un_matches_offdiagonals_and_is_pd() {
        let s = MomentMatrix {
            s: dmatrix![1.3, 0.5, 0.2; 0.5, 0.8, -0.1; 0.2, -0.1, 1.1],
            n_used: 4,
        };
        let alpha = estimate_alpha(CorrStructure::Un, &s).unwrap();
        assert_eq!(alpha.len(), 3);
        // Comfortably PD once the diagonal is forced to 1, so the repair
        // leaves the off-diagonals untouched.
        assert_relative_eq!(alpha[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(alpha[1], 0.2, epsilon = 1e-9);
        assert_relative_eq!(alpha[2], -0.1, epsilon = 1e-9);
        let r = build_matrix(&spec(CorrStructure::Un, &alpha), 3).unwrap();
        assert!(Cholesky::new(r).is_some());
    }

    #[test]
    fn pd_repair_identity_fixed_point() {
        let id = DMatrix::identity(4, 4);
        let out = pd_repair(&id, PD_FLOOR);
        assert_relative_eq!(out, id, epsilon = 1e-12);
    }

    #[test]
    fn pd_repair_singular_case() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        let out = pd_repair(&m, PD_FLOOR);
        assert!(out[(0, 1)] < 1.0);
        assert_relative_eq!(out[(0, 0)], 1.0);
        assert_relative_eq!(out[(0, 1)], out[(1, 0)]);
        let min_eig = out
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= PD_FLOOR * 0.999, "min eigenvalue {min_eig}");
    }

    #[test]
    fn pd_repair_idempotent_on_pd_input() {
        let m = dmatrix![1.0, 0.3, 0.1; 0.3, 1.0, -0.2; 0.1, -0.2, 1.0];
        let out = pd_repair(&m, PD_FLOOR);
        assert_relative_eq!(out, m, epsilon = 1e-12);
    }

    #[test]
    fn corr_cache_serves_prepared_sizes() {
        let data = gaussian_dataset(&[vec![0.1, 0.2], vec![0.3, 0.4, 0.5]]);
        let cache = CorrCache::for_dataset(spec(CorrStructure::Ar1, &[0.5]), &data).unwrap();
        assert!(cache.cholesky(2).is_ok());
        assert!(cache.cholesky(3).is_ok());
        assert!(cache.cholesky(4).is_err());
    }
}
