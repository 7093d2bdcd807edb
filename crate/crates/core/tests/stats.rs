//! KS machinery: calibration and power by Monte Carlo, comparison with the
//! classical and Lilliefors asymptotic critical values, Q-Q tail shapes.

use bql::rng;
use bql::stats::{
    classical_critical_005, ks_statistic, normalize, qq_points, simulate_critical, Family, KsTester,
};
use proptest::prelude::*;
use rand::Rng;

fn draws(family: Family, n: usize, r: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| family.sample(r)).collect()
}

#[test]
fn in_family_rejection_rate_is_nominal() {
    // 2000 trials put the ±0.02 band at about four standard errors
    let n = 256;
    for (k, family) in [Family::Normal, Family::Laplace, Family::Logistic].into_iter().enumerate() {
        let mut r = rng::stream(61, k as u64);
        let mut tester = KsTester::new(4000, 0.05);
        let trials = 2000;
        let mut rejects = 0;
        for _ in 0..trials {
            // location and scale are arbitrary: the test standardizes
            let xs: Vec<f64> = draws(family, n, &mut r).iter().map(|x| 3.0 * x - 7.0).collect();
            rejects += tester.test(&xs, family, &mut r).unwrap().reject as usize;
        }
        let rate = rejects as f64 / trials as f64;
        assert!((rate - 0.05).abs() <= 0.02, "{family:?}: rate {rate}");
    }
}

#[test]
fn laplace_data_is_rejected_as_normal() {
    let mut r = rng::stream(62, 0);
    let mut tester = KsTester::new(2000, 0.05);
    for _ in 0..20 {
        let xs = draws(Family::Laplace, 8192, &mut r);
        assert!(tester.test(&xs, Family::Normal, &mut r).unwrap().reject);
    }
}

#[test]
fn quantile_grid_is_not_rejected() {
    let n = 1000;
    let mut r = rng::stream(63, 0);
    for family in [Family::Normal, Family::Laplace, Family::Logistic] {
        let xs: Vec<f64> = (0..n).map(|i| family.quantile((i as f64 + 0.5) / n as f64)).collect();
        let res = KsTester::new(1000, 0.05).test(&xs, family, &mut r).unwrap();
        assert!(!res.reject, "{res:?}");
    }
}

#[test]
fn simulated_critical_value_is_lilliefors_not_classical() {
    let n = 8192;
    let c = simulate_critical(Family::Normal, n, 2000, 0.05, &mut rng::stream(64, 0)).unwrap();
    assert!(c < classical_critical_005(n));
    // Lilliefors' large-sample 5% point for the normal family is 0.886/√n
    let lilliefors = 0.886 / (n as f64).sqrt();
    assert!((c / lilliefors - 1.0).abs() < 0.05, "{c} vs {lilliefors}");
}

#[test]
fn critical_values_are_reproducible() {
    let a = simulate_critical(Family::Logistic, 300, 500, 0.05, &mut rng::stream(65, 0)).unwrap();
    let b = simulate_critical(Family::Logistic, 300, 500, 0.05, &mut rng::stream(65, 0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn laplace_upper_tail_lies_above_normal_diagonal() {
    let mut r = rng::stream(66, 0);
    let xs = draws(Family::Laplace, 20_000, &mut r);
    let pts = qq_points(&xs, Family::Normal, true);
    let top = &pts[pts.len() - pts.len() / 100..];
    assert!(top.iter().all(|(t, s)| s > t), "heavier right tail expected");
    let bottom = &pts[..pts.len() / 100];
    assert!(bottom.iter().all(|(t, s)| s < t), "heavier left tail expected");
}

#[test]
fn single_point_qq_is_median_and_sample() {
    for family in [Family::Normal, Family::Laplace, Family::Logistic] {
        let pts = qq_points(&[4.2], family, true);
        assert_eq!(pts.len(), 1);
        assert!(pts[0].0.abs() < 1e-12);
        assert_eq!(pts[0].1, 4.2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn statistic_is_affine_invariant(
        seed in any::<u64>(),
        scale in prop_oneof![0.01f64..100.0, -100.0f64..-0.01],
        shift in -1e3f64..1e3,
    ) {
        let mut r = rng::stream(seed, 0);
        let xs = draws(Family::Logistic, 200, &mut r);
        let ys: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
        let d = |v: &[f64]| ks_statistic(&normalize(v).unwrap(), |x| Family::Normal.cdf(x));
        // a negative scale mirrors the data; the normal cdf is symmetric
        prop_assert!((d(&xs) - d(&ys)).abs() <= 1e-9);
    }

    #[test]
    fn normalized_output_has_zero_mean_unit_sd(xs in prop::collection::vec(-1e3f64..1e3, 2..200)) {
        prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-6));
        let z = normalize(&xs).unwrap();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() <= 1e-12);
        prop_assert!((sd - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn statistic_is_bounded(xs in prop::collection::vec(-5.0f64..5.0, 1..100)) {
        let d = ks_statistic(&xs, |x| Family::Laplace.cdf(x));
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(d >= 0.5 / xs.len() as f64 - 1e-15);
    }
}
