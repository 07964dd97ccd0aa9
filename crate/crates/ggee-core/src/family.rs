//! Marginal exponential-family model: mean, variance, and link-derivative
//! functions, plus the per-subject matrices the estimating equations are
//! built from.

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::error::{Error, Result};

/// Linear predictors are clamped to this range before exponentiation so
/// `exp` never overflows. The clamp never triggers at estimation scale.
pub const ETA_CLAMP: f64 = 700.0;

/// Exponential family with canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    BernoulliLogit,
    GaussianIdentity,
    PoissonLog,
}

/// Family choice plus the known scale parameter `phi`.
///
/// `phi` is user-supplied and fixed (no dispersion estimation); the default
/// is 1. Only canonical links are implemented, so the link derivative is
/// identically 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilySpec {
    pub family: Family,
    pub scale_phi: f64,
}

impl FamilySpec {
    pub fn new(family: Family, scale_phi: f64) -> Result<Self> {
        if !(scale_phi > 0.0) || !scale_phi.is_finite() {
            return Err(Error::Domain("scale_phi must be a positive finite real"));
        }
        Ok(Self { family, scale_phi })
    }

    pub fn bernoulli_logit() -> Self {
        Self { family: Family::BernoulliLogit, scale_phi: 1.0 }
    }

    pub fn gaussian_identity() -> Self {
        Self { family: Family::GaussianIdentity, scale_phi: 1.0 }
    }

    pub fn poisson_log() -> Self {
        Self { family: Family::PoissonLog, scale_phi: 1.0 }
    }

    /// Marginal mean `m(eta)` for the canonical link.
    pub fn mean(&self, eta: f64) -> Result<f64> {
        if !eta.is_finite() {
            return Err(Error::Domain("linear predictor must be finite"));
        }
        let eta = eta.clamp(-ETA_CLAMP, ETA_CLAMP);
        Ok(match self.family {
            // Evaluated via exp(-|eta|) so neither branch overflows; the
            // clamp keeps the result inside (0, 1) in f64.
            Family::BernoulliLogit => {
                let p = if eta >= 0.0 {
                    1.0 / (1.0 + Float::exp(-eta))
                } else {
                    let e = Float::exp(eta);
                    e / (1.0 + e)
                };
                p.clamp(1e-16, 1.0 - 1e-16)
            }
            Family::GaussianIdentity => eta,
            Family::PoissonLog => Float::exp(eta),
        })
    }

    /// Marginal variance `sigma^2(eta) = a''(theta) * phi`.
    pub fn variance(&self, eta: f64) -> Result<f64> {
        if !eta.is_finite() {
            return Err(Error::Domain("linear predictor must be finite"));
        }
        let eta = eta.clamp(-ETA_CLAMP, ETA_CLAMP);
        Ok(match self.family {
            // p(1-p) computed as exp(-|eta|)/(1+exp(-|eta|))^2, which stays
            // strictly positive for all clamped eta instead of underflowing
            // through the saturated mean.
            Family::BernoulliLogit => {
                let e = Float::exp(-Float::abs(eta));
                let denom = 1.0 + e;
                self.scale_phi * e / (denom * denom)
            }
            Family::GaussianIdentity => self.scale_phi,
            Family::PoissonLog => self.scale_phi * Float::exp(eta),
        })
    }

    /// Derivative of the link transform `u`; identically 1 for canonical links.
    pub fn link_deriv(&self, _eta: f64) -> f64 {
        1.0
    }
}

/// Per-subject model matrices evaluated at a coefficient vector:
/// `mu = m(X beta)`, `A = diag(sigma^2)`, `Delta = diag(u')`, and
/// `D = A Delta X`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMatrices {
    pub mu: DVector<f64>,
    pub a_diag: DVector<f64>,
    pub delta_diag: DVector<f64>,
    pub d: DMatrix<f64>,
}

/// Mean vector `m(X beta)` without the variance bookkeeping.
pub(crate) fn mean_vector(
    family: &FamilySpec,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.ncols() != beta.len() {
        return Err(Error::Contract(alloc::format!(
            "design has {} columns but beta has {} entries",
            x.ncols(),
            beta.len()
        )));
    }
    let mut mu = DVector::zeros(x.nrows());
    for i in 0..x.nrows() {
        mu[i] = family.mean(x.row(i).transpose().dot(beta))?;
    }
    Ok(mu)
}

/// Evaluates mean, variance, and derivative diagonals for one subject and
/// assembles `D = A Delta X`.
pub fn subject_matrices(
    family: &FamilySpec,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
) -> Result<SubjectMatrices> {
    if x.ncols() != beta.len() {
        return Err(Error::Contract(alloc::format!(
            "design has {} columns but beta has {} entries",
            x.ncols(),
            beta.len()
        )));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Domain("beta must be finite"));
    }
    let t = x.nrows();
    let mut mu = DVector::zeros(t);
    let mut a_diag = DVector::zeros(t);
    let mut delta_diag = DVector::zeros(t);
    for i in 0..t {
        let eta = x.row(i).transpose().dot(beta);
        if !eta.is_finite() {
            return Err(Error::Domain("linear predictor must be finite"));
        }
        mu[i] = family.mean(eta)?;
        a_diag[i] = family.variance(eta)?;
        delta_diag[i] = family.link_deriv(eta);
    }
    let mut d = x.clone();
    for i in 0..t {
        let w = a_diag[i] * delta_diag[i];
        for j in 0..x.ncols() {
            d[(i, j)] *= w;
        }
    }
    Ok(SubjectMatrices { mu, a_diag, delta_diag, d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn logistic_mean_values() {
        let fam = FamilySpec::bernoulli_logit();
        assert_relative_eq!(fam.mean(0.0).unwrap(), 0.5);
        // 1/(1+e^{-2})
        assert_relative_eq!(fam.mean(2.0).unwrap(), 0.8807970779778823, epsilon = 1e-12);
        assert_relative_eq!(FamilySpec::gaussian_identity().mean(1.7).unwrap(), 1.7);
    }

    #[test]
    fn variance_values() {
        assert_relative_eq!(FamilySpec::bernoulli_logit().variance(0.0).unwrap(), 0.25);
        assert_relative_eq!(FamilySpec::gaussian_identity().variance(123.0).unwrap(), 1.0);
        assert_relative_eq!(FamilySpec::poisson_log().variance(0.0).unwrap(), 1.0);
    }

    #[test]
    fn variance_strictly_positive_at_extremes() {
        let fam = FamilySpec::bernoulli_logit();
        for eta in [-700.0, -100.0, -40.0, 40.0, 100.0, 700.0, 1e9] {
            assert!(fam.variance(eta).unwrap() > 0.0, "variance at eta={eta}");
        }
        assert!(FamilySpec::poisson_log().variance(-700.0).unwrap() > 0.0);
        assert!(FamilySpec::poisson_log().variance(1e10).unwrap().is_finite());
    }

    #[test]
    fn non_finite_eta_rejected() {
        let fam = FamilySpec::bernoulli_logit();
        assert!(fam.mean(f64::NAN).is_err());
        assert!(fam.mean(f64::INFINITY).is_err());
        assert!(fam.variance(f64::NAN).is_err());
    }

    #[test]
    fn mean_monotone_for_bernoulli_and_poisson() {
        for fam in [FamilySpec::bernoulli_logit(), FamilySpec::poisson_log()] {
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=120 {
                let eta = -30.0 + 0.5 * k as f64;
                let m = fam.mean(eta).unwrap();
                assert!(m > prev, "mean not increasing at eta={eta}");
                prev = m;
            }
        }
    }

    #[test]
    fn mean_derivative_matches_variance_over_phi() {
        // d mean / d eta == variance / phi for canonical links; central
        // finite differences at a spread of eta values.
        let etas = [
            -8.3, -5.0, -3.1, -2.0, -1.2, -0.7, -0.3, 0.0, 0.2, 0.5, 0.9, 1.4, 1.9, 2.6, 3.3, 4.1,
            5.2, 6.0, 7.5, 8.9,
        ];
        for fam in [
            FamilySpec::bernoulli_logit(),
            FamilySpec::gaussian_identity(),
            FamilySpec::poisson_log(),
        ] {
            for &eta in &etas {
                let h = 1e-5;
                let fd = (fam.mean(eta + h).unwrap() - fam.mean(eta - h).unwrap()) / (2.0 * h);
                let analytic = fam.variance(eta).unwrap() / fam.scale_phi;
                assert!(
                    (fd - analytic).abs() < 1e-6,
                    "family {:?} at eta={eta}: fd={fd}, analytic={analytic}",
                    fam.family
                );
            }
        }
    }

    #[test]
    fn subject_matrices_identity_single_obs() {
        let sm = subject_matrices(
            &FamilySpec::gaussian_identity(),
            &dmatrix![1.0],
            &dvector![2.0],
        )
        .unwrap();
        assert_eq!(sm.mu, dvector![2.0]);
        assert_eq!(sm.a_diag, dvector![1.0]);
        assert_eq!(sm.delta_diag, dvector![1.0]);
        assert_eq!(sm.d, dmatrix![1.0]);
    }

    #[test]
    fn subject_matrices_zero_coefficients() {
        let x = dmatrix![1.0, 0.0; 1.0, 1.0];
        let sm = subject_matrices(&FamilySpec::bernoulli_logit(), &x, &dvector![0.0, 0.0]).unwrap();
        assert_eq!(sm.mu, dvector![0.5, 0.5]);
        assert_eq!(sm.a_diag, dvector![0.25, 0.25]);
        assert_eq!(sm.delta_diag, dvector![1.0, 1.0]);
        assert_relative_eq!(sm.d, dmatrix![0.25, 0.0; 0.25, 0.25]);
    }

    #[test]
    fn subject_matrices_logistic_derived_case() {
        // p = 1/(1+e^{-2}) at eta = 2; A = p(1-p); D row = A * (1, 2).
        let sm = subject_matrices(
            &FamilySpec::bernoulli_logit(),
            &dmatrix![1.0, 2.0],
            &dvector![0.0, 1.0],
        )
        .unwrap();
        assert_relative_eq!(sm.mu[0], 0.8807970779778823, epsilon = 1e-9);
        assert_relative_eq!(sm.a_diag[0], 0.104993585403506, epsilon = 1e-9);
        assert_relative_eq!(sm.d[(0, 0)], 0.104993585403506, epsilon = 1e-9);
        assert_relative_eq!(sm.d[(0, 1)], 0.209987170807012, epsilon = 1e-9);
    }

    #[test]
    fn subject_matrices_reconstruction() {
        // D == A * Delta * X element-wise at machine precision.
        let x = dmatrix![1.0, -0.3, 2.0; 1.0, 0.7, -1.1; 1.0, 1.9, 0.4];
        let beta = dvector![0.2, -0.8, 0.5];
        for fam in [FamilySpec::bernoulli_logit(), FamilySpec::poisson_log()] {
            let sm = subject_matrices(&fam, &x, &beta).unwrap();
            for i in 0..3 {
                assert!(sm.a_diag[i] > 0.0);
                for j in 0..3 {
                    let expect = sm.a_diag[i] * sm.delta_diag[i] * x[(i, j)];
                    assert_eq!(sm.d[(i, j)], expect);
                }
            }
        }
    }
}
