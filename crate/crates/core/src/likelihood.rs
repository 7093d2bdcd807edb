//! TD-error likelihoods: Gaussian, logistic, and learned flows.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::flow::FlowParams;
use crate::prior::load_flow;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Deep Sea likelihood scale.
pub const DEFAULT_TD_SIGMA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub enum LikelihoodSpec {
    Gaussian { sigma: f64 },
    /// Standard logistic with scale `s`; variance is `s²π²/3`.
    Logistic { scale: f64 },
    Flow(FlowParams),
}

impl LikelihoodSpec {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match self {
            LikelihoodSpec::Gaussian { sigma } => ("likelihood sigma", *sigma),
            LikelihoodSpec::Logistic { scale } => ("logistic scale", *scale),
            LikelihoodSpec::Flow(_) => return Ok(()),
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(config_err(format!("{name} must be positive, got {v}")))
        }
    }

    /// `log p_TD(td)`.
    pub fn log_lik(&self, td: f64) -> Result<f64> {
        if !td.is_finite() {
            return Err(Error::NonFinite(format!("TD error {td}")));
        }
        Ok(self.log_lik_unchecked(td))
    }

    pub(crate) fn log_lik_unchecked(&self, td: f64) -> f64 {
        match self {
            LikelihoodSpec::Gaussian { sigma } => {
                let t = td / sigma;
                -0.5 * t * t - sigma.ln() - HALF_LN_2PI
            }
            LikelihoodSpec::Logistic { scale } => {
                let a = td.abs() / scale;
                -a - scale.ln() - 2.0 * (-a).exp().ln_1p()
            }
            LikelihoodSpec::Flow(f) => f.log_prob(td),
        }
    }

    /// `d/d(td) log p_TD(td)`. Flow likelihoods take the left limit at
    /// spline knots.
    pub fn dlog_lik_dtd(&self, td: f64) -> f64 {
        match self {
            LikelihoodSpec::Gaussian { sigma } => -td / (sigma * sigma),
            LikelihoodSpec::Logistic { scale } => -(td / (2.0 * scale)).tanh() / scale,
            LikelihoodSpec::Flow(f) => f.dlogprob_dx(td),
        }
    }
}

/// Optimal shift `θ` for the family `q_i + θ` under least squares and under
/// the Gaussian log likelihood, found independently (closed form vs. root
/// bracketing of the score). Returns `None` for an empty dataset.
pub fn equivalence_optima(pairs: &[(f64, f64)], sigma: f64) -> Option<(f64, f64)> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let lsq = pairs.iter().map(|(q, t)| t - q).sum::<f64>() / n;

    let lik = LikelihoodSpec::Gaussian { sigma };
    let score = |theta: f64| -> f64 {
        pairs.iter().map(|(q, t)| lik.dlog_lik_dtd(q + theta - t)).sum()
    };
    let (mut lo, mut hi) = pairs
        .iter()
        .map(|(q, t)| t - q)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| (a.min(d), b.max(d)));
    lo -= 1.0;
    hi += 1.0;
    // Score is decreasing in θ: positive below the optimum, negative above.
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((lsq, 0.5 * (lo + hi)))
}

/// True when minimizing `Σ (q_i + θ − target_i)²` and maximizing the Gaussian
/// log likelihood of the same residuals pick the same `θ` (to 1e-8).
pub fn argmax_equivalence_check(pairs: &[(f64, f64)], sigma: f64) -> bool {
    match equivalence_optima(pairs, sigma) {
        None => true,
        Some((a, b)) => (a - b).abs() <= 1e-8 * a.abs().max(1.0),
    }
}

/// Serializable likelihood choice; flow likelihoods reference a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LikelihoodConfig {
    Gaussian { sigma: f64 },
    Logistic { scale: f64 },
    Flow { path: PathBuf },
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig::Gaussian {
            sigma: DEFAULT_TD_SIGMA,
        }
    }
}

impl LikelihoodConfig {
    pub fn resolve(&self, base_dir: &Path) -> Result<LikelihoodSpec> {
        let spec = match self {
            LikelihoodConfig::Gaussian { sigma } => LikelihoodSpec::Gaussian { sigma: *sigma },
            LikelihoodConfig::Logistic { scale } => LikelihoodSpec::Logistic { scale: *scale },
            LikelihoodConfig::Flow { path } => LikelihoodSpec::Flow(load_flow(&base_dir.join(path))?),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gaussian_values() {
        let g = LikelihoodSpec::Gaussian { sigma: 1.0 };
        assert_abs_diff_eq!(g.log_lik(0.0).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
        let g = LikelihoodSpec::Gaussian { sigma: 0.56 };
        let want = -0.5 - (0.56 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert_abs_diff_eq!(g.log_lik(0.56).unwrap(), want, epsilon = 1e-12);
        assert_eq!(LikelihoodSpec::Gaussian { sigma: 1.0 }.dlog_lik_dtd(0.0), 0.0);
        assert_eq!(LikelihoodSpec::Gaussian { sigma: 2.0 }.dlog_lik_dtd(1.0), -0.25);
    }

    #[test]
    fn logistic_mode() {
        let l = LikelihoodSpec::Logistic { scale: 1.0 };
        assert_abs_diff_eq!(l.log_lik(0.0).unwrap(), 0.25f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(l.log_lik(800.0).unwrap(), -800.0, epsilon = 1e-9);
    }

    #[test]
    fn non_finite_td_rejected() {
        let g = LikelihoodSpec::Gaussian { sigma: 1.0 };
        assert!(g.log_lik(f64::NAN).is_err());
        assert!(g.log_lik(f64::INFINITY).is_err());
    }

    #[test]
    fn equivalence_small_cases() {
        let (a, b) = equivalence_optima(&[(0.0, 1.0), (0.0, 3.0)], 1.0).unwrap();
        assert_abs_diff_eq!(a, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b, 2.0, epsilon = 1e-12);
        let (a, b) = equivalence_optima(&[(0.0, 0.0)], 0.3).unwrap();
        assert_eq!(a, 0.0);
        assert_abs_diff_eq!(b, 0.0, epsilon = 1e-12);
        assert!(argmax_equivalence_check(&[(0.5, 1.0), (-2.0, 3.0), (1.0, 1.0)], 0.1));
    }

    #[test]
    fn config_rejects_bad_scale() {
        let c: LikelihoodConfig = serde_json::from_str(r#"{"kind":"gaussian","sigma":-1}"#).unwrap();
        assert!(c.resolve(Path::new(".")).is_err());
    }
}
