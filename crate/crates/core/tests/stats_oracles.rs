mod common;

use certsmooth::stats::binomial_upper_tail;
use certsmooth::{certified_radius, clopper_pearson_lower, normal_cdf, normal_quantile, Probability, Sigma};
use proptest::prelude::*;

#[test]
fn oracle_matches_published_normal_values() {
    assert!((common::phi(2.0) - 0.9772498680518208).abs() < 1e-14);
    assert!((common::phi(-2.4) - 0.008197535924596131).abs() < 1e-15);
    assert!((common::phi(-6.0) - 9.865876450376946e-10).abs() < 1e-22);
}

#[test]
fn cdf_agrees_with_oracle() {
    let mut z = -8.0;
    while z <= 8.0 {
        let (a, b) = (normal_cdf(z), common::phi(z));
        let rel = (a - b).abs() / b.min(1.0 - b).max(1e-300);
        assert!((a - b).abs() < 2e-15 || rel < 1e-12, "z={z}: {a} vs {b}");
        z += 0.0625;
    }
}

#[test]
fn quantile_examples() {
    let z = normal_quantile(0.975).unwrap();
    assert!((z - 1.959964).abs() < 1e-5);
    assert!((z - common::phi_inv(0.975)).abs() < 1e-12);
    let z = normal_quantile(0.933254).unwrap();
    assert!((z - 1.50054).abs() < 1e-4);
    assert!((z - common::phi_inv(0.933254)).abs() < 1e-11);
}

#[test]
fn quantile_agrees_with_bisection_oracle() {
    for &p in &[1e-12, 1e-8, 1e-4, 0.01, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.9, 0.97575, 0.999, 1.0 - 1e-9] {
        let z = normal_quantile(p).unwrap();
        // Upper quantiles go through the tail, where the oracle keeps its digits.
        let oracle = if p > 0.5 { -common::phi_inv(1.0 - p) } else { common::phi_inv(p) };
        assert!((z - oracle).abs() < 1e-9 * z.abs().max(1.0), "p={p}");
    }
}

#[test]
fn clopper_pearson_examples() {
    let p = clopper_pearson_lower(100, 100, 0.001).unwrap().value();
    assert!((p - 0.933254).abs() < 1e-6);
    assert!((p - 0.001_f64.powf(0.01)).abs() < 1e-11);

    let p = clopper_pearson_lower(80, 100, 0.05).unwrap().value();
    assert!(p > 0.70 && p < 0.80);
    assert!((p - common::cp_lower(80, 100, 0.05)).abs() < 1e-9);
    assert!((p - 0.7227997503290864).abs() < 1e-9);

    assert_eq!(clopper_pearson_lower(0, 50, 0.05).unwrap().value(), 0.0);
}

#[test]
fn clopper_pearson_agrees_with_summation_oracle() {
    for &(k, n, alpha) in &[(1, 10, 0.05), (5, 10, 0.001), (37, 40, 0.01), (450, 500, 0.001), (999, 1000, 0.05), (2, 3000, 0.1)] {
        let a = clopper_pearson_lower(k, n, alpha).unwrap().value();
        let b = common::cp_lower(k, n, alpha);
        assert!((a - b).abs() < 1e-9, "({k},{n},{alpha}): {a} vs {b}");
    }
}

#[test]
fn tail_agrees_with_summation_oracle() {
    for &(k, n, p) in &[(3, 10, 0.2), (60, 100, 0.5), (900, 1000, 0.93), (1, 1, 0.4)] {
        let a = binomial_upper_tail(k, n, p);
        let b = common::upper_tail(k, n, p);
        assert!((a - b).abs() < 1e-10 * b, "({k},{n},{p}): {a} vs {b}");
    }
}

#[test]
fn radius_example() {
    let r = certified_radius(Sigma::new(0.25).unwrap(), Probability::new(0.933254).unwrap()).unwrap();
    assert!((r.value() - 0.375135).abs() < 1e-4);
    assert!((r.value() - 0.25 * common::phi_inv(0.933254)).abs() < 1e-11);
    let r = certified_radius(Sigma::new(0.25).unwrap(), Probability::new(0.5).unwrap()).unwrap();
    assert_eq!(r.value(), 0.0);
}

proptest! {
    #[test]
    fn quantile_is_antisymmetric(p in 1e-6..(1.0 - 1e-6)) {
        let a = normal_quantile(p).unwrap();
        let b = normal_quantile(1.0 - p).unwrap();
        prop_assert!((a + b).abs() < 1e-9);
    }

    #[test]
    // Above z = 5 the CDF value itself has lost most of its tail digits.
    fn quantile_inverts_cdf(z in -7.5..5.0_f64) {
        let back = normal_quantile(normal_cdf(z)).unwrap();
        prop_assert!((back - z).abs() < 1e-8 * z.abs().max(1.0));
    }

    #[test]
    fn clopper_pearson_is_below_the_point_estimate(n in 1u64..2000, frac in 0.0..=1.0_f64, alpha in 1e-4..0.49) {
        let k = (frac * n as f64).round() as u64;
        let p = clopper_pearson_lower(k, n, alpha).unwrap().value();
        prop_assert!(p <= k as f64 / n as f64);
    }

    #[test]
    fn clopper_pearson_is_monotone(n in 2u64..2000, frac in 0.0..1.0_f64, alpha in 1e-4..0.49) {
        let k = ((frac * n as f64) as u64).min(n - 1);
        let lo = clopper_pearson_lower(k, n, alpha).unwrap().value();
        let hi = clopper_pearson_lower(k + 1, n, alpha).unwrap().value();
        prop_assert!(hi >= lo);
        let looser = clopper_pearson_lower(k, n, (alpha * 2.0).min(0.9)).unwrap().value();
        prop_assert!(looser >= lo - 1e-12);
    }

    #[test]
    fn radius_is_homogeneous_in_sigma(s in 0.01..5.0_f64, c in 0.1..10.0_f64, p in 0.5..0.999_f64) {
        let pa = Probability::new(p).unwrap();
        let a = certified_radius(Sigma::new(s * c).unwrap(), pa).unwrap().value();
        let b = certified_radius(Sigma::new(s).unwrap(), pa).unwrap().value();
        prop_assert!((a - c * b).abs() <= 1e-12 * a.max(1.0));
    }
}
