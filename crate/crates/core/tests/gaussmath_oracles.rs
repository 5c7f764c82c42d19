mod common;

use common::{gauss_legendre, orthant_oracle, truncated_moment_oracle};
use hetfield::gaussmath::{
    hermite_he, joint_ccdf, joint_ccdf_quadrature, joint_ccdf_series, std_normal_pdf,
    truncated_cross_moment, truncated_first_moment, StandardizedPair,
};
use proptest::prelude::*;

const GRID: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
const RHOS: [f64; 5] = [-0.9, -0.5, 0.0, 0.5, 0.9];

fn pair(a: f64, b: f64, rho: f64) -> StandardizedPair<f64> {
    StandardizedPair::new(a, b, rho).unwrap()
}

fn hermite_explicit(n: u64, z: f64) -> f64 {
    let fact = |k: u64| (1..=k).map(|i| i as f64).product::<f64>();
    let mut total = 0.0;
    for m in 0..=n / 2 {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        total += sign / (fact(m) * fact(n - 2 * m)) * z.powi((n - 2 * m) as i32) / 2f64.powi(m as i32);
    }
    fact(n) * total
}

#[test]
fn oracle_rule_is_sane() {
    let (x, w) = gauss_legendre(20);
    let s: f64 = w.iter().sum();
    assert!((s - 2.0).abs() < 1e-14);
    let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
    assert!((m4 - 0.4).abs() < 1e-14);
}

#[test]
fn hermite_recurrence_matches_explicit_sum() {
    for n in 0..=12 {
        for &z in &[-2.0, 0.0, 1.0, 3.0] {
            let (x, y) = (hermite_he(n as usize, z), hermite_explicit(n, z));
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "n={n} z={z}");
        }
    }
}

#[test]
fn truncated_moment_matches_quadrature_on_grid() {
    let mut worst = 0.0f64;
    for &a in &GRID {
        for &b in &GRID {
            for &rho in &RHOS {
                let got = truncated_cross_moment(&pair(a, b, rho)).unwrap();
                let want = truncated_moment_oracle(a, b, rho);
                worst = worst.max((got - want).abs());
                assert!((got - want).abs() <= 1e-8, "a={a} b={b} rho={rho}: {got} vs {want}");
            }
        }
    }
    eprintln!("max |moment - quadrature| = {worst:e}");
}

#[test]
fn moment_example_point() {
    let got = truncated_cross_moment(&pair(0.5, -0.5, 0.6)).unwrap();
    assert!((got - truncated_moment_oracle(0.5, -0.5, 0.6)).abs() <= 1e-8);
}

#[test]
fn strongly_correlated_pairs_match_quadrature() {
    for &rho in &[0.96, 0.99, -0.97] {
        for &(a, b) in &[(0.0, 0.0), (1.0, -0.5), (-1.5, 0.7)] {
            let got = truncated_cross_moment(&pair(a, b, rho)).unwrap();
            let want = truncated_moment_oracle(a, b, rho);
            assert!((got - want).abs() <= 1e-8, "a={a} b={b} rho={rho}: {got} vs {want}");
        }
    }
}

#[test]
fn ccdf_matches_quadrature_oracle() {
    for &a in &GRID {
        for &b in &GRID {
            for &rho in &RHOS {
                let got = joint_ccdf(&pair(a, b, rho)).unwrap();
                let want = orthant_oracle(a, b, rho);
                assert!((got - want).abs() <= 1e-10, "a={a} b={b} rho={rho}");
            }
        }
    }
}

#[test]
fn orthant_identity() {
    for &rho in &RHOS {
        let got = joint_ccdf(&pair(0.0, 0.0, rho)).unwrap();
        let want = 0.25 + rho.asin() / std::f64::consts::TAU;
        assert!((got - want).abs() <= 1e-9, "rho={rho}");
    }
}

#[test]
fn series_and_quadrature_overlap() {
    for &a in &GRID {
        for &b in &GRID {
            for &rho in &[-0.8, -0.3, 0.2, 0.7] {
                let p = pair(a, b, rho);
                let s = joint_ccdf_series(&p).unwrap();
                let q = joint_ccdf_quadrature(&p).unwrap();
                assert!((s - q).abs() <= 1e-9, "a={a} b={b} rho={rho}");
            }
        }
    }
}

#[test]
fn first_moment_matches_quadrature() {
    for &(a, b, rho) in &[(0.0, 0.0, 0.5), (1.0, -1.0, -0.7), (-0.5, 1.5, 0.9)] {
        let got = truncated_first_moment(&pair(a, b, rho));
        let hi = |t: f64| t.max(0.0) + 12.0;
        let want = common::composite_2d(
            |x, y| x * common::bvn_density(x, y, rho),
            (a, hi(a)),
            (b, hi(b)),
            0.25,
            20,
        );
        assert!((got - want).abs() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ccdf_is_symmetric(a in -3.0f64..3.0, b in -3.0f64..3.0, rho in -0.99f64..0.99) {
        let x = joint_ccdf(&pair(a, b, rho)).unwrap();
        let y = joint_ccdf(&pair(b, a, rho)).unwrap();
        prop_assert!((x - y).abs() < 1e-11);
        prop_assert!((0.0..=1.0).contains(&x));
    }

    #[test]
    fn ccdf_is_monotone(a in -3.0f64..3.0, b in -3.0f64..3.0, rho in -0.99f64..0.99, da in 0.0f64..1.0) {
        let base = joint_ccdf(&pair(a, b, rho)).unwrap();
        prop_assert!(joint_ccdf(&pair(a + da, b, rho)).unwrap() <= base + 1e-11);
        prop_assert!(joint_ccdf(&pair(a, b + da, rho)).unwrap() <= base + 1e-11);
    }

    #[test]
    fn uncorrelated_moment_factorizes(a in -4.0f64..4.0, b in -4.0f64..4.0) {
        let m = truncated_cross_moment(&pair(a, b, 0.0)).unwrap();
        prop_assert!((m - std_normal_pdf(a) * std_normal_pdf(b)).abs() < 1e-12);
    }

    #[test]
    fn series_agrees_with_quadrature(a in -3.0f64..3.0, b in -3.0f64..3.0, rho in -0.95f64..0.95) {
        let p = pair(a, b, rho);
        if let Ok(s) = joint_ccdf_series(&p) {
            let q = joint_ccdf_quadrature(&p).unwrap();
            prop_assert!((s - q).abs() < 1e-9, "{s} vs {q}");
        }
    }
}
