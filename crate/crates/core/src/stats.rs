//! Kolmogorov–Smirnov goodness-of-fit with estimated location and scale.
//!
//! Samples are standardized with their own mean and population standard
//! deviation before comparison with a unit-variance reference, so the
//! classical KS table does not apply. Critical values are simulated under
//! the null by running the exact same standardize-then-compare procedure on
//! draws from the reference family (Lilliefors-style).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_SAMPLE_SIZE: usize = 8192;
pub const DEFAULT_SIMULATIONS: usize = 10_000;
pub const DEFAULT_P_LEVEL: f64 = 0.05;
pub const MIN_TEST_SAMPLES: usize = 100;

/// Logistic scale giving unit variance: `sqrt(3) / pi`.
pub const UNIT_LOGISTIC_SCALE: f64 = 0.551_328_895_421_792_1;
/// Laplace scale giving unit variance: `1 / sqrt(2)`.
pub const UNIT_LAPLACE_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn standard_normal_quantile(p: f64) -> f64 {
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // One Halley step; erfc_inv alone is only good to about 1e-11.
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let e = standard_normal_cdf(x) - p;
    let u = e / pdf;
    x - u / (1.0 + 0.5 * x * u)
}

/// Reference distributions, always in their zero-mean unit-variance form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Normal,
    Laplace,
    Logistic,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Normal, Family::Laplace, Family::Logistic];

    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::Laplace => "laplace",
            Family::Logistic => "logistic",
        }
    }

    pub fn cdf(self, x: f64) -> f64 {
        match self {
            Family::Normal => standard_normal_cdf(x),
            Family::Laplace => {
                let t = x / UNIT_LAPLACE_SCALE;
                if t < 0.0 {
                    0.5 * t.exp()
                } else {
                    1.0 - 0.5 * (-t).exp()
                }
            }
            Family::Logistic => 1.0 / (1.0 + (-x / UNIT_LOGISTIC_SCALE).exp()),
        }
    }

    pub fn quantile(self, p: f64) -> f64 {
        match self {
            Family::Normal => standard_normal_quantile(p),
            Family::Laplace => {
                if p < 0.5 {
                    UNIT_LAPLACE_SCALE * (2.0 * p).ln()
                } else {
                    -UNIT_LAPLACE_SCALE * (2.0 * (1.0 - p)).ln()
                }
            }
            Family::Logistic => UNIT_LOGISTIC_SCALE * (p / (1.0 - p)).ln(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Family::Normal => StandardNormal.sample(rng),
            _ => {
                // inverse cdf on (0, 1)
                let u: f64 = rng.random::<f64>();
                let u = if u == 0.0 { f64::MIN_POSITIVE } else { u };
                self.quantile(u)
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(Family::Normal),
            "laplace" => Ok(Family::Laplace),
            "logistic" => Ok(Family::Logistic),
            other => Err(Error::Config(format!("unknown distribution family {other:?}"))),
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(x - mean) / std` with the population standard deviation.
pub fn normalize(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput("normalize needs at least two samples".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("samples to normalize".into()));
    }
    let (mean, std) = mean_std(samples);
    if !(std > 0.0) {
        return Err(Error::InvalidInput("samples have zero variance".into()));
    }
    Ok(samples.iter().map(|x| (x - mean) / std).collect())
}

/// One-sample KS statistic `sup |F_n - F|`, evaluated at the jump points.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    ks_statistic_sorted(&sorted, cdf)
}

fn ks_statistic_sorted<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let hi = (i + 1) as f64 / n;
        let lo = i as f64 / n;
        d = d.max((hi - f).abs()).max((lo - f).abs());
    }
    d
}

fn null_statistic<R: Rng + ?Sized>(family: Family, n: usize, rng: &mut R) -> f64 {
    let draws: Vec<f64> = (0..n).map(|_| family.sample(rng)).collect();
    let mut z = normalize(&draws).expect("continuous draws have positive variance");
    z.sort_by(f64::total_cmp);
    ks_statistic_sorted(&z, |x| family.cdf(x))
}

/// `(1 - p_level)` quantile of the KS statistic under the null, from `n_sim`
/// simulated samples of size `n`. `p_level = 0` gives the maximum simulated
/// value and `p_level = 1` the minimum.
pub fn simulate_critical<R: RngCore + ?Sized>(
    family: Family,
    n: usize,
    n_sim: usize,
    p_level: f64,
    rng: &mut R,
) -> Result<f64> {
    let stats = simulate_null(family, n, n_sim, rng)?;
    Ok(upper_quantile(&stats, p_level))
}

/// Sorted null statistics. Replicate `i` draws from its own stream derived
/// from one base seed, so the result does not depend on thread count.
pub fn simulate_null<R: RngCore + ?Sized>(
    family: Family,
    n: usize,
    n_sim: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n < 2 || n_sim == 0 {
        return Err(Error::InvalidInput(format!(
            "null simulation needs n >= 2 and n_sim >= 1 (got n={n}, n_sim={n_sim})"
        )));
    }
    let base = rng.next_u64();
    let mut stats: Vec<f64> = (0..n_sim as u64)
        .into_par_iter()
        .map(|i| null_statistic(family, n, &mut rng::child(base, i)))
        .collect();
    stats.sort_by(f64::total_cmp);
    Ok(stats)
}

/// Order statistic at `ceil((1 - p) * m)` (1-based) of sorted values.
pub fn upper_quantile(sorted: &[f64], p_level: f64) -> f64 {
    let m = sorted.len();
    let rank = ((1.0 - p_level.clamp(0.0, 1.0)) * m as f64).ceil() as usize;
    sorted[rank.clamp(1, m) - 1]
}

/// Asymptotic critical value of the classical (known-parameter) KS test at
/// the 5% level. Only for comparison; not valid after standardization.
pub fn classical_critical_005(n: usize) -> f64 {
    1.358 / (n as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub family: Family,
    pub n: usize,
    pub statistic: f64,
    pub critical_value: f64,
    pub p_level: f64,
    pub reject: bool,
}

/// KS tester with critical values memoized per `(family, n)`.
#[derive(Clone, Debug)]
pub struct KsTester {
    pub n_sim: usize,
    pub p_level: f64,
    cache: HashMap<(Family, usize), f64>,
}

impl Default for KsTester {
    fn default() -> Self {
        Self::new(DEFAULT_SIMULATIONS, DEFAULT_P_LEVEL)
    }
}

impl KsTester {
    pub fn new(n_sim: usize, p_level: f64) -> Self {
        Self {
            n_sim,
            p_level,
            cache: HashMap::new(),
        }
    }

    pub fn critical_value<R: RngCore + ?Sized>(
        &mut self,
        family: Family,
        n: usize,
        rng: &mut R,
    ) -> Result<f64> {
        if let Some(&c) = self.cache.get(&(family, n)) {
            return Ok(c);
        }
        let c = simulate_critical(family, n, self.n_sim, self.p_level, rng)?;
        self.cache.insert((family, n), c);
        Ok(c)
    }

    /// Standardize, compare with the family's unit-variance cdf, and test
    /// against the simulated critical value.
    pub fn test<R: RngCore + ?Sized>(
        &mut self,
        errors: &[f64],
        family: Family,
        rng: &mut R,
    ) -> Result<KsResult> {
        if errors.len() < MIN_TEST_SAMPLES {
            return Err(Error::InvalidInput(format!(
                "KS test needs at least {MIN_TEST_SAMPLES} samples, got {}",
                errors.len()
            )));
        }
        let z = normalize(errors)?;
        let statistic = ks_statistic(&z, |x| family.cdf(x));
        let critical_value = self.critical_value(family, errors.len(), rng)?;
        Ok(KsResult {
            family,
            n: errors.len(),
            statistic,
            critical_value,
            p_level: self.p_level,
            reject: statistic > critical_value,
        })
    }
}

/// [`KsTester::test`] with default simulation settings and no shared cache.
pub fn ks_test<R: RngCore + ?Sized>(errors: &[f64], family: Family, rng: &mut R) -> Result<KsResult> {
    KsTester::default().test(errors, family, rng)
}

/// Q-Q pairs `(theoretical, sample)`: sorted samples against the family's
/// quantiles at `(i - 1/2) / n`. With `standardize`, samples are first
/// normalized to mean 0 and standard deviation 1 (skipped when that is
/// impossible, e.g. a single sample).
pub fn qq_points(samples: &[f64], family: Family, standardize: bool) -> Vec<(f64, f64)> {
    let mut xs = if standardize {
        normalize(samples).unwrap_or_else(|_| samples.to_vec())
    } else {
        samples.to_vec()
    };
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.into_iter()
        .enumerate()
        .map(|(i, x)| (family.quantile((i as f64 + 0.5) / n), x))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[1.0, 3.0]).unwrap(), vec![-1.0, 1.0]);
        let z = normalize(&[-1.0, 1.0]).unwrap();
        assert_eq!(z, vec![-1.0, 1.0]);
        assert!(normalize(&[2.0, 2.0, 2.0]).is_err());
        assert!(normalize(&[2.0]).is_err());
    }

    #[test]
    fn ks_on_quantile_grid_is_half_over_n() {
        for n in [1usize, 5, 64, 1000] {
            let xs: Vec<f64> = (0..n)
                .map(|i| standard_normal_quantile((i as f64 + 0.5) / n as f64))
                .collect();
            let d = ks_statistic(&xs, standard_normal_cdf);
            assert_abs_diff_eq!(d, 0.5 / n as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn ks_single_zero_is_half() {
        assert_abs_diff_eq!(ks_statistic(&[0.0], standard_normal_cdf), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn ks_self_comparison_bounded_by_one_over_n() {
        let xs = [0.3, -1.2, 2.2, 0.9, 0.0, -0.4];
        let n = xs.len() as f64;
        let ecdf = |x: f64| xs.iter().filter(|&&v| v <= x).count() as f64 / n;
        assert!(ks_statistic(&xs, ecdf) <= 1.0 / n + 1e-15);
    }

    #[test]
    fn quantiles_invert_cdfs() {
        for fam in Family::ALL {
            for p in [0.001, 0.1, 0.37, 0.5, 0.8, 0.999] {
                assert_abs_diff_eq!(fam.cdf(fam.quantile(p)), p, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_p_levels() {
        let mut r = rng::stream(1, 0);
        let stats = simulate_null(Family::Normal, 50, 200, &mut r).unwrap();
        let mut r = rng::stream(1, 0);
        assert_eq!(simulate_critical(Family::Normal, 50, 200, 1.0, &mut r).unwrap(), stats[0]);
        let mut r = rng::stream(1, 0);
        assert_eq!(simulate_critical(Family::Normal, 50, 200, 0.0, &mut r).unwrap(), stats[199]);
    }

    #[test]
    fn qq_exact_quantiles_on_diagonal() {
        let n = 257;
        let xs: Vec<f64> = (0..n)
            .map(|i| Family::Normal.quantile((i as f64 + 0.5) / n as f64))
            .collect();
        for (t, s) in qq_points(&xs, Family::Normal, false) {
            assert_abs_diff_eq!(t, s, epsilon = 1e-12);
        }
        let one = qq_points(&[4.2], Family::Laplace, true);
        assert_eq!(one.len(), 1);
        assert_abs_diff_eq!(one[0].0, 0.0, epsilon = 1e-15);
        assert_eq!(one[0].1, 4.2);
    }

    #[test]
    fn family_parsing() {
        assert_eq!("Normal".parse::<Family>().unwrap(), Family::Normal);
        assert_eq!("logistic".parse::<Family>().unwrap(), Family::Logistic);
        assert!("cauchy".parse::<Family>().is_err());
    }

    #[test]
    fn ks_test_requires_hundred_samples() {
        let mut r = rng::stream(0, 0);
        assert!(ks_test(&[0.1; 50], Family::Normal, &mut r).is_err());
    }
}
