//! Scalar and bivariate standard-normal machinery.
//!
//! The bivariate pieces work on a [`StandardizedPair`]: two unit-variance
//! normals `Z1`, `Z2` with correlation `rho`, truncated from below at `a` and
//! `b`. [`joint_ccdf`] gives `Pr(Z1 ≥ a, Z2 ≥ b)` from its Hermite expansion
//! (falling back to 2-D quadrature when the series is too slow), and
//! [`truncated_cross_moment`] gives the unnormalized moment
//! `E[Z1 Z2 · 1{Z1 ≥ a, Z2 ≥ b}]`.

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadratureOptions};
use crate::scalar::Scalar;

/// Series terms evaluated before giving up on the Hermite expansion.
pub const MAX_SERIES_TERMS: usize = 120;

/// Above this `|rho|` the Hermite series is skipped outright.
const CRAMER_K: f64 = 1.086_435;

pub const SERIES_RHO_LIMIT: f64 = 0.95;

/// Width (in standard deviations) of the quadrature box.
const QUADRATURE_SPAN: f64 = 10.0;

#[inline]
pub fn std_normal_pdf<S: Scalar>(z: S) -> S {
    (-(z * z) * S::lit(0.5)).exp() / S::TAU().sqrt()
}

#[inline]
pub fn std_normal_cdf<S: Scalar>(z: S) -> S {
    S::lit(0.5) * (-z * S::FRAC_1_SQRT_2()).erfc()
}

/// Upper tail `1 - Φ(z)`, accurate for large positive `z`.
#[inline]
pub fn std_normal_sf<S: Scalar>(z: S) -> S {
    S::lit(0.5) * (z * S::FRAC_1_SQRT_2()).erfc()
}

/// Probabilists' Hermite polynomial `He_n(z)` by the three-term recurrence
/// `He_{n+1} = z He_n - n He_{n-1}`.
pub fn hermite_he<S: Scalar>(n: usize, z: S) -> S {
    let mut prev = S::one();
    if n == 0 {
        return prev;
    }
    let mut cur = z;
    for k in 1..n {
        let next = z * cur - S::from_count(k) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Standard bivariate normal with correlation `rho`, truncated below at
/// `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardizedPair<S> {
    pub a: S,
    pub b: S,
    pub rho: S,
}

impl<S: Scalar> StandardizedPair<S> {
    pub fn new(a: S, b: S, rho: S) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::invalid(format!("truncation points must be finite (a={a}, b={b})")));
        }
        if !(rho.abs() < S::one()) {
            return Err(Error::invalid(format!("correlation must satisfy |rho| < 1, got {rho}")));
        }
        Ok(StandardizedPair { a, b, rho })
    }

    /// Same pair with the roles of `Z1` and `Z2` exchanged.
    pub fn swapped(&self) -> Self {
        StandardizedPair {
            a: self.b,
            b: self.a,
            rho: self.rho,
        }
    }

    fn sqrt_one_minus_rho_sq(&self) -> S {
        (S::one() - self.rho * self.rho).sqrt()
    }

    /// Conditional standardizations `A = (b - ρa)/√(1-ρ²)` and
    /// `B = (a - ρb)/√(1-ρ²)`.
    fn conditional_points(&self) -> (S, S) {
        let s = self.sqrt_one_minus_rho_sq();
        ((self.b - self.rho * self.a) / s, (self.a - self.rho * self.b) / s)
    }
}

/// Density of the standard bivariate normal at `(a, b)`.
pub fn bivariate_pdf<S: Scalar>(pair: &StandardizedPair<S>) -> S {
    density(pair.a, pair.b, pair.rho)
}

#[inline]
fn density<S: Scalar>(x: S, y: S, rho: S) -> S {
    let one_m = S::one() - rho * rho;
    let q = (x * x - S::lit(2.0) * rho * x * y + y * y) / one_m;
    (-q * S::lit(0.5)).exp() / (S::TAU() * one_m.sqrt())
}

/// `Pr(Z1 ≥ a, Z2 ≥ b)`.
///
/// Uses the Hermite series when `|rho| ≤ 0.95` and it converges within
/// [`MAX_SERIES_TERMS`]; otherwise integrates the density numerically.
pub fn joint_ccdf<S: Scalar>(pair: &StandardizedPair<S>) -> Result<S> {
    if pair.rho.abs() <= S::lit(SERIES_RHO_LIMIT) {
        if let Ok(v) = joint_ccdf_series(pair) {
            return Ok(v);
        }
    }
    joint_ccdf_quadrature(pair)
}

/// Hermite expansion of the joint CCDF:
///
/// `(1-Φ(a))(1-Φ(b)) + φ(a)φ(b) Σ_{n≥1} ρⁿ/n! He_{n-1}(a) He_{n-1}(b)`.
///
/// Terms are accumulated until two consecutive contributions fall below
/// `1e-13·(1 + |partial sum|)` and the remaining tail, bounded through
/// Cramér's inequality `|He_n(z)|/√n! ≤ K e^{z²/4}`, is below the same
/// threshold. The polynomials are carried in the normalized form
/// `He_n/√n!`, which keeps every term finite.
pub fn joint_ccdf_series<S: Scalar>(pair: &StandardizedPair<S>) -> Result<S> {
    let StandardizedPair { a, b, rho } = *pair;
    let tol = S::tolerance(1e-13);
    let prefactor = std_normal_pdf(a) * std_normal_pdf(b);
    let mut sum = std_normal_sf(a) * std_normal_sf(b);
    if rho == S::zero() {
        return Ok(sum);
    }

    // h_k(z) = He_k(z)/√k!, with h_{k+1} = (z h_k - √k h_{k-1}) / √(k+1)
    let (mut ha_prev, mut ha) = (S::zero(), S::one());
    let (mut hb_prev, mut hb) = (S::zero(), S::one());
    let mut rho_pow = S::one();
    let mut small_run = 0;
    let abs_rho = rho.abs();
    let envelope = prefactor * S::lit(CRAMER_K * CRAMER_K) * ((a * a + b * b) * S::lit(0.25)).exp();
    for n in 1..=MAX_SERIES_TERMS {
        if n > 1 {
            let k = S::from_count(n - 2);
            let denom = S::from_count(n - 1).sqrt();
            let next_a = (a * ha - k.sqrt() * ha_prev) / denom;
            let next_b = (b * hb - k.sqrt() * hb_prev) / denom;
            ha_prev = ha;
            ha = next_a;
            hb_prev = hb;
            hb = next_b;
        }
        rho_pow = rho_pow * rho;
        // ρⁿ/n! He_{n-1}(a) He_{n-1}(b) = ρⁿ/n · h_{n-1}(a) h_{n-1}(b)
        let term = prefactor * rho_pow / S::from_count(n) * ha * hb;
        sum = sum + term;
        if term.abs() < tol * (S::one() + sum.abs()) {
            small_run += 1;
            let tail = envelope * rho_pow.abs() * abs_rho / (S::from_count(n + 1) * (S::one() - abs_rho));
            if small_run >= 2 && tail < tol * (S::one() + sum.abs()) {
                return Ok(sum.max(S::zero()).min(S::one()));
            }
        } else {
            small_run = 0;
        }
    }
    Err(Error::NonConvergence {
        what: "Hermite series for the joint CCDF",
        tolerance: tol.to_f64_lossy(),
    })
}

fn quadrature_box<S: Scalar>(lo: S) -> (S, S) {
    let span = S::lit(QUADRATURE_SPAN);
    let lower = lo.max(-span);
    (lower, lo.max(S::zero()) + span)
}

/// Joint CCDF by adaptive quadrature over `[a, a⁺+10]` (lower limit clamped
/// at -10, `x⁺ = max(x, 0)`) of `φ(x)·(1-Φ((b-ρx)/√(1-ρ²)))`, the density
/// with its inner coordinate integrated in closed form.
pub fn joint_ccdf_quadrature<S: Scalar>(pair: &StandardizedPair<S>) -> Result<S> {
    let StandardizedPair { a, b, rho } = *pair;
    let (x_lo, x_hi) = quadrature_box(a);
    let s = pair.sqrt_one_minus_rho_sq();
    let opts = QuadratureOptions {
        abs_tol: S::tolerance(1e-15).to_f64_lossy(),
        rel_tol: S::tolerance(1e-13).to_f64_lossy(),
        max_intervals: 4000,
    };
    let v = integrate(
        |x| std_normal_pdf(x) * std_normal_sf((b - rho * x) / s),
        x_lo,
        x_hi,
        &opts,
    )?;
    Ok(v.max(S::zero()).min(S::one()))
}

/// `Pr(Z1 < a, Z2 < b)`, by the reflection `(Z1, Z2) → (-Z1, -Z2)`.
pub fn lower_orthant<S: Scalar>(pair: &StandardizedPair<S>) -> Result<S> {
    joint_ccdf(&StandardizedPair {
        a: -pair.a,
        b: -pair.b,
        rho: pair.rho,
    })
}

/// `E[Z1 · 1{Z1 ≥ a, Z2 ≥ b}] = φ(a)(1-Φ(A)) + ρ φ(b)(1-Φ(B))`.
pub fn truncated_first_moment<S: Scalar>(pair: &StandardizedPair<S>) -> S {
    let (big_a, big_b) = pair.conditional_points();
    std_normal_pdf(pair.a) * std_normal_sf(big_a)
        + pair.rho * std_normal_pdf(pair.b) * std_normal_sf(big_b)
}

/// Unnormalized truncated cross moment `E[Z1 Z2 · 1{Z1 ≥ a, Z2 ≥ b}]`:
///
/// `ρ (a φ(a)(1-Φ(A)) + b φ(b)(1-Φ(B)) + Ω_{a,b}) + (1-ρ²) f_Z(a, b; ρ)`.
///
/// Not divided by `Ω_{a,b}`; callers wanting the conditional moment divide.
pub fn truncated_cross_moment<S: Scalar>(pair: &StandardizedPair<S>) -> Result<S> {
    let StandardizedPair { a, b, rho } = *pair;
    let omega = joint_ccdf(pair)?;
    let (big_a, big_b) = pair.conditional_points();
    let edge = a * std_normal_pdf(a) * std_normal_sf(big_a) + b * std_normal_pdf(b) * std_normal_sf(big_b);
    Ok(rho * (edge + omega) + (S::one() - rho * rho) * bivariate_pdf(pair))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: f64, b: f64, rho: f64) -> StandardizedPair<f64> {
        StandardizedPair::new(a, b, rho).unwrap()
    }

    #[test]
    fn pdf_values() {
        assert!((std_normal_pdf(0.0_f64) - 0.398_942_280_401_432_7).abs() < 1e-16);
        assert!((std_normal_pdf(1.0_f64) - 0.241_970_724_519_143_37).abs() < 1e-16);
        assert_eq!(std_normal_pdf(-1.0), std_normal_pdf(1.0));
    }

    #[test]
    fn cdf_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_cdf(8.0_f64) - 1.0).abs() <= 1e-15);
        // 30-digit quadrature of φ over (-∞, 1.96]
        assert!((std_normal_cdf(1.96_f64) - 0.975_002_104_851_779_5).abs() < 1e-15);
        assert!((std_normal_sf(8.0_f64) - 6.220_960_574_271_785e-16).abs() < 1e-28);
    }

    #[test]
    fn hermite_low_orders() {
        assert_eq!(hermite_he(0, 3.7), 1.0);
        assert_eq!(hermite_he(1, 3.7), 3.7);
        assert_eq!(hermite_he(3, 2.0), 2.0);
        assert_eq!(hermite_he(4, 1.0), 1.0 - 6.0 + 3.0);
    }

    #[test]
    fn pair_validation() {
        assert!(StandardizedPair::new(0.0, 0.0, 1.0).is_err());
        assert!(StandardizedPair::new(0.0, f64::INFINITY, 0.2).is_err());
        assert!(StandardizedPair::new(0.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn bivariate_pdf_closed_forms() {
        assert!((bivariate_pdf(&pair(0.0, 0.0, 0.0)) - 0.159_154_943_091_895_34).abs() < 1e-16);
        assert!((bivariate_pdf(&pair(0.0, 0.0, 0.5)) - 0.183_776_298_473_930_7).abs() < 1e-15);
        assert!((bivariate_pdf(&pair(1.0, -1.0, 0.3)) - 0.039_983_310_267_730_25).abs() < 1e-15);
    }

    #[test]
    fn ccdf_independence_and_orthant() {
        assert!((joint_ccdf(&pair(0.0, 0.0, 0.0)).unwrap() - 0.25).abs() < 1e-15);
        let v = joint_ccdf(&pair(1.0, -1.0, 0.0)).unwrap();
        assert!((v - 0.133_483_764_331_401_93).abs() < 1e-15);
        let v = joint_ccdf(&pair(0.0, 0.0, 0.5)).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn series_stops_at_term_cap_for_strong_correlation() {
        assert!(matches!(
            joint_ccdf_series(&pair(0.0, 0.0, 0.9)),
            Err(Error::NonConvergence { .. })
        ));
        // the public entry point falls back to quadrature
        let v = joint_ccdf(&pair(0.0, 0.0, 0.9)).unwrap();
        let exact = 0.25 + 0.9f64.asin() / std::f64::consts::TAU;
        assert!((v - exact).abs() < 1e-10);
    }

    #[test]
    fn series_and_quadrature_agree() {
        for &(a, b, rho) in &[(0.3, -0.7, 0.6), (-1.5, 2.0, -0.4), (1.0, 1.0, 0.75), (-2.0, -2.0, 0.8)] {
            let p = pair(a, b, rho);
            let s = joint_ccdf_series(&p).unwrap();
            let q = joint_ccdf_quadrature(&p).unwrap();
            assert!((s - q).abs() < 1e-9, "({a},{b},{rho}): {s} vs {q}");
        }
    }

    #[test]
    fn moment_factorizes_without_correlation() {
        assert!((truncated_cross_moment(&pair(0.0, 0.0, 0.0)).unwrap() - 1.0 / std::f64::consts::TAU).abs() < 1e-15);
        for &(a, b) in &[(1.0, -1.0), (-0.3, 2.2), (3.0, 0.5)] {
            let m = truncated_cross_moment(&pair(a, b, 0.0)).unwrap();
            assert!((m - std_normal_pdf(a) * std_normal_pdf(b)).abs() < 1e-12);
        }
    }

    #[test]
    fn untruncated_limits() {
        let p = pair(-40.0, -40.0, 0.37);
        assert!((joint_ccdf(&p).unwrap() - 1.0).abs() < 1e-14);
        assert!((truncated_cross_moment(&p).unwrap() - 0.37).abs() < 1e-12);
        assert!(truncated_first_moment(&p).abs() < 1e-14);
        assert!(lower_orthant(&p).unwrap() < 1e-14);
    }

    #[test]
    fn first_moment_single_truncation() {
        // with b → -∞ only Z1 is truncated: E[Z1 1{Z1 ≥ a}] = φ(a)
        let p = pair(0.7, -40.0, -0.5);
        assert!((truncated_first_moment(&p) - std_normal_pdf(0.7)).abs() < 1e-15);
    }

    #[test]
    fn works_in_single_precision() {
        let p = StandardizedPair::new(0.0f32, 0.0, 0.5).unwrap();
        assert!((joint_ccdf(&p).unwrap() - 1.0 / 3.0).abs() < 1e-5);
        let m = truncated_cross_moment(&StandardizedPair::new(0.5f32, -0.5, 0.0).unwrap()).unwrap();
        assert!((m - std_normal_pdf(0.5f32) * std_normal_pdf(-0.5f32)).abs() < 1e-6);
    }
}
