//! Univariate and bivariate standard-normal functions.
//!
//! The bivariate CDF integrates the correlation derivative (Plackett's
//! identity) with adaptive Simpson quadrature, which keeps the whole stack
//! dependency-free and accurate to the absolute tolerance below.

use num_traits::Float;

use crate::error::{Error, Result};

/// Absolute tolerance of the bivariate CDF quadrature.
pub const BVN_TOL: f64 = 1e-12;

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    Float::exp(-0.5 * x * x) / Float::sqrt(TWO_PI)
}

/// Standard normal quantile (Wichura's PPND16 rational approximations,
/// polished with one Newton step on `norm_cdf`).
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain("normal quantile requires p in (0, 1)"));
    }
    let q = p - 0.5;
    let x = if Float::abs(q) <= 0.425 {
        let r = 0.180625 - q * q;
        q * poly(&PPND_A, r) / poly(&PPND_B, r)
    } else {
        let mut r = if q < 0.0 { p } else { 1.0 - p };
        r = Float::sqrt(-Float::ln(r));
        let v = if r <= 5.0 {
            let r = r - 1.6;
            poly(&PPND_C, r) / poly(&PPND_D, r)
        } else {
            let r = r - 5.0;
            poly(&PPND_E, r) / poly(&PPND_F, r)
        };
        if q < 0.0 {
            -v
        } else {
            v
        }
    };
    // One Newton step against the CDF tightens the tail approximation to
    // full double precision.
    let pdf = norm_pdf(x);
    if pdf > 1e-300 {
        Ok(x - (norm_cdf(x) - p) / pdf)
    } else {
        Ok(x)
    }
}

fn poly(coef: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coef.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

const PPND_A: [f64; 8] = [
    3.3871328727963666080e0,
    1.3314166789178437745e2,
    1.9715909503065514427e3,
    1.3731693765509461125e4,
    4.5921953931549871457e4,
    6.7265770927008700853e4,
    3.3430575583588128105e4,
    2.5090809287301226727e3,
];
const PPND_B: [f64; 8] = [
    1.0,
    4.2313330701600911252e1,
    6.8718700749205790830e2,
    5.3941960214247511077e3,
    2.1213794301586595867e4,
    3.9307895800092710610e4,
    2.8729085735721942674e4,
    5.2264952788528545610e3,
];
const PPND_C: [f64; 8] = [
    1.42343711074968357734e0,
    4.63033784615654529590e0,
    5.76949722146069140550e0,
    3.64784832476320460504e0,
    1.27045825245236838258e0,
    2.41780725177450611770e-1,
    2.27238449892691845833e-2,
    7.74545014278341407640e-4,
];
const PPND_D: [f64; 8] = [
    1.0,
    2.05319162663775882187e0,
    1.67638483018380384940e0,
    6.89767334985100004550e-1,
    1.48103976427480074590e-1,
    1.51986665636164571966e-2,
    5.47593808499534494600e-4,
    1.05075007164441684324e-9,
];
const PPND_E: [f64; 8] = [
    6.65790464350110377720e0,
    5.46378491116411436990e0,
    1.78482653991729133580e0,
    2.96560571828504891230e-1,
    2.65321895265761230930e-2,
    1.24266094738807843860e-3,
    2.71155556874348757815e-5,
    2.01033439929228813265e-7,
];
const PPND_F: [f64; 8] = [
    1.0,
    5.99832206555887937690e-1,
    1.36929880922735805310e-1,
    1.48753612908506148525e-2,
    7.86869131145613259100e-4,
    1.84631831751005468180e-5,
    1.42151175831644588870e-7,
    2.04426310338993978564e-15,
];

/// Bivariate standard-normal density at `(h, k)` with correlation `r`.
pub(crate) fn bvn_pdf(h: f64, k: f64, r: f64) -> f64 {
    let omr2 = 1.0 - r * r;
    let quad = (h * h - 2.0 * r * h * k + k * k) / (2.0 * omr2);
    Float::exp(-quad) / (TWO_PI * Float::sqrt(omr2))
}

/// `P(X <= h, Y <= k)` for standard bivariate normal `(X, Y)` with
/// correlation `rho`, via `Phi(h) Phi(k) + int_0^rho phi2(h, k; u) du`.
pub fn bvn_cdf(h: f64, k: f64, rho: f64) -> Result<f64> {
    if !h.is_finite() || !k.is_finite() || !rho.is_finite() || Float::abs(rho) > 1.0 {
        return Err(Error::Domain("bvn_cdf requires finite h, k and |rho| <= 1"));
    }
    if rho >= 1.0 - 1e-15 {
        return Ok(norm_cdf(Float::min(h, k)));
    }
    if rho <= -1.0 + 1e-15 {
        return Ok(Float::max(0.0, norm_cdf(h) + norm_cdf(k) - 1.0));
    }
    let base = norm_cdf(h) * norm_cdf(k);
    if rho == 0.0 {
        return Ok(base);
    }
    let integral = adaptive_simpson(|u| bvn_pdf(h, k, u), 0.0, rho, BVN_TOL)?;
    Ok((base + integral).clamp(0.0, 1.0))
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let v = simpson_step(&f, a, b, fa, fm, fb, whole, tol, 60);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric("quadrature diverged".into()))
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || Float::abs(delta) <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_reference_values() {
        assert_relative_eq!(norm_cdf(0.0), 0.5);
        assert_relative_eq!(norm_cdf(1.96), 0.9750021048517795, epsilon = 1e-14);
        assert_relative_eq!(norm_cdf(-1.0), 0.15865525393145707, epsilon = 1e-14);
    }

    #[test]
    fn quantile_reference_values() {
        assert_relative_eq!(norm_quantile(0.5).unwrap(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(norm_quantile(0.975).unwrap(), 1.9599639845400545, epsilon = 1e-12);
        assert_relative_eq!(norm_quantile(0.025).unwrap(), -1.9599639845400545, epsilon = 1e-12);
        assert!(norm_quantile(0.0).is_err());
        assert!(norm_quantile(1.0).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for k in 1..200 {
            let p = k as f64 / 200.0;
            let x = norm_quantile(p).unwrap();
            assert_relative_eq!(norm_cdf(x), p, epsilon = 1e-12);
        }
        // tails
        for &p in &[1e-10, 1e-6, 1e-3, 1.0 - 1e-3, 1.0 - 1e-6, 1.0 - 1e-10] {
            let x = norm_quantile(p).unwrap();
            assert_relative_eq!(norm_cdf(x), p, epsilon = 1e-13, max_relative = 1e-9);
        }
    }

    #[test]
    fn bvn_zero_correlation_factorizes() {
        for &(h, k) in &[(0.0, 0.0), (1.0, -0.5), (-2.0, 0.3)] {
            assert_relative_eq!(
                bvn_cdf(h, k, 0.0).unwrap(),
                norm_cdf(h) * norm_cdf(k),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn bvn_matches_arcsine_identity_at_zero_thresholds() {
        // Phi2(0, 0; r) = 1/4 + asin(r) / (2 pi)
        for &r in &[-0.95, -0.7, -0.3, 0.1, 0.4, 0.5, 0.70710678, 0.9, 0.99] {
            let expect = 0.25 + libm::asin(r) / TWO_PI;
            assert_relative_eq!(bvn_cdf(0.0, 0.0, r).unwrap(), expect, epsilon = 1e-11);
        }
    }

    #[test]
    fn bvn_boundary_cases() {
        assert_relative_eq!(bvn_cdf(0.3, 1.2, 1.0).unwrap(), norm_cdf(0.3));
        assert_relative_eq!(
            bvn_cdf(0.3, 1.2, -1.0).unwrap(),
            norm_cdf(0.3) + norm_cdf(1.2) - 1.0,
            epsilon = 1e-14
        );
        assert!(bvn_cdf(0.0, 0.0, 1.5).is_err());
        assert!(bvn_cdf(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn bvn_monotone_in_rho() {
        let mut prev = -1.0;
        for k in -19..=19 {
            let r = k as f64 / 20.0;
            let v = bvn_cdf(0.5, -0.2, r).unwrap();
            assert!(v >= prev, "not monotone at rho={r}");
            prev = v;
        }
    }
}
