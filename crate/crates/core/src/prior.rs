//! Log-prior densities over network parameters and their gradients.
//!
//! All priors factor over scalars. The flow prior assigns one flow to each
//! layer's weight matrix and one to each layer's LayerNorm gains; biases,
//! LayerNorm shifts, and any group without a flow fall back to a Gaussian.

use std::f64::consts::SQRT_2;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::flow::FlowParams;
use crate::qnet::NetworkParams;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Tuned Gaussian prior scale.
pub const DEFAULT_PRIOR_SIGMA: f64 = 1.679;

#[derive(Clone, Debug, PartialEq)]
pub enum PriorSpec {
    /// Constant log density (0); contributes no gradient.
    Flat,
    Gaussian { sigma: f64 },
    Laplace { b: f64 },
    Flow(FlowPrior),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowPrior {
    /// One entry per layer: flow for that layer's weight matrix.
    pub weights: Vec<Option<FlowParams>>,
    /// One entry per layer: flow for that layer's LayerNorm gains.
    pub gains: Vec<Option<FlowParams>>,
    /// Scale of the Gaussian used for every parameter without a flow.
    pub fallback_sigma: f64,
}

fn gaussian_logpdf(x: f64, sigma: f64) -> f64 {
    let t = x / sigma;
    -0.5 * t * t - sigma.ln() - HALF_LN_2PI
}

fn laplace_logpdf(x: f64, b: f64) -> f64 {
    -x.abs() / b - (2.0 * b).ln()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Laplace scale with the same standard deviation as `N(0, sigma²)`.
pub fn laplace_from_gaussian_scale(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(config_err(format!("prior scale must be positive, got {sigma}")));
    }
    Ok(sigma / SQRT_2)
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            PriorSpec::Flat => Ok(()),
            PriorSpec::Gaussian { sigma } => pos("prior sigma", *sigma),
            PriorSpec::Laplace { b } => pos("laplace scale", *b),
            PriorSpec::Flow(f) => pos("fallback sigma", f.fallback_sigma),
        }
    }

    /// Per-scalar log density for the non-flow priors.
    pub fn log_density_scalar(&self, x: f64) -> Result<f64> {
        match self {
            PriorSpec::Flat => Ok(0.0),
            PriorSpec::Gaussian { sigma } => Ok(gaussian_logpdf(x, *sigma)),
            PriorSpec::Laplace { b } => Ok(laplace_logpdf(x, *b)),
            PriorSpec::Flow(_) => Err(Error::InvalidInput(
                "flow priors are per layer group; use log_prior".into(),
            )),
        }
    }

    /// `d/dx` of [`Self::log_density_scalar`].
    pub fn grad_scalar(&self, x: f64) -> Result<f64> {
        match self {
            PriorSpec::Flat => Ok(0.0),
            PriorSpec::Gaussian { sigma } => Ok(-x / (sigma * sigma)),
            PriorSpec::Laplace { b } => Ok(-sign(x) / b),
            PriorSpec::Flow(_) => Err(Error::InvalidInput(
                "flow priors are per layer group; use grad_log_prior".into(),
            )),
        }
    }
}

/// Sum of per-scalar log densities over all parameters.
pub fn log_prior(spec: &PriorSpec, params: &NetworkParams) -> Result<f64> {
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters passed to log_prior".into()));
    }
    let v = params.values();
    Ok(match spec {
        PriorSpec::Flat => 0.0,
        PriorSpec::Gaussian { sigma } => v.iter().map(|&x| gaussian_logpdf(x, *sigma)).sum(),
        PriorSpec::Laplace { b } => v.iter().map(|&x| laplace_logpdf(x, *b)).sum(),
        PriorSpec::Flow(fp) => {
            let mut total = 0.0;
            for_each_group(fp, params, |slice, flow| {
                total += match flow {
                    Some(f) => slice.iter().map(|&x| f.log_prob(x)).sum::<f64>(),
                    None => slice.iter().map(|&x| gaussian_logpdf(x, fp.fallback_sigma)).sum(),
                };
            });
            total
        }
    })
}

/// `∇ log p(θ)`, same shape as the parameters.
pub fn grad_log_prior(spec: &PriorSpec, params: &NetworkParams) -> Result<NetworkParams> {
    let mut g = params.zeros_like();
    accumulate_grad_log_prior(spec, params, 1.0, g.values_mut())?;
    Ok(g)
}

/// Adds `scale * ∇ log p(θ)` into `grad`.
pub fn accumulate_grad_log_prior(
    spec: &PriorSpec,
    params: &NetworkParams,
    scale: f64,
    grad: &mut [f64],
) -> Result<()> {
    crate::error::check_dim("prior gradient", params.len(), grad.len())?;
    let v = params.values();
    match spec {
        PriorSpec::Flat => {}
        PriorSpec::Gaussian { sigma } => {
            let k = scale / (sigma * sigma);
            for (g, x) in grad.iter_mut().zip(v) {
                *g -= k * x;
            }
        }
        PriorSpec::Laplace { b } => {
            let k = scale / b;
            for (g, x) in grad.iter_mut().zip(v) {
                *g -= k * sign(*x);
            }
        }
        PriorSpec::Flow(fp) => {
            let base = v.as_ptr() as usize;
            let k = scale / (fp.fallback_sigma * fp.fallback_sigma);
            for_each_group(fp, params, |slice, flow| {
                let start = (slice.as_ptr() as usize - base) / std::mem::size_of::<f64>();
                let out = &mut grad[start..start + slice.len()];
                match flow {
                    Some(f) => {
                        for (g, &x) in out.iter_mut().zip(slice) {
                            *g += scale * f.dlogprob_dx(x);
                        }
                    }
                    None => {
                        for (g, &x) in out.iter_mut().zip(slice) {
                            *g -= k * x;
                        }
                    }
                }
            });
        }
    }
    Ok(())
}

/// Visits each parameter group of `params` with the flow assigned to it
/// (`None` means the Gaussian fallback).
fn for_each_group<'a, F>(fp: &'a FlowPrior, params: &'a NetworkParams, mut visit: F)
where
    F: FnMut(&'a [f64], Option<&'a FlowParams>),
{
    let n_layers = params.architecture().layers().len();
    for l in 0..n_layers {
        visit(params.weights(l), fp.weights.get(l).and_then(Option::as_ref));
        visit(params.bias(l), None);
        if let Some(g) = params.gain(l) {
            visit(g, fp.gains.get(l).and_then(Option::as_ref));
        }
        if let Some(s) = params.shift(l) {
            visit(s, None);
        }
    }
}

/// Serializable prior choice; flow priors reference checkpoint files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorConfig {
    Flat,
    Gaussian {
        sigma: f64,
    },
    Laplace {
        b: f64,
    },
    /// Laplace with `b = sigma / sqrt(2)` (same standard deviation as the
    /// Gaussian with scale `sigma`).
    LaplaceMatched {
        sigma: f64,
    },
    Flow {
        #[serde(default)]
        weights: Vec<Option<PathBuf>>,
        #[serde(default)]
        gains: Vec<Option<PathBuf>>,
        fallback_sigma: f64,
    },
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig::Gaussian {
            sigma: DEFAULT_PRIOR_SIGMA,
        }
    }
}

impl PriorConfig {
    /// Builds the prior, loading flow checkpoints relative to `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<PriorSpec> {
        let spec = match self {
            PriorConfig::Flat => PriorSpec::Flat,
            PriorConfig::Gaussian { sigma } => PriorSpec::Gaussian { sigma: *sigma },
            PriorConfig::Laplace { b } => PriorSpec::Laplace { b: *b },
            PriorConfig::LaplaceMatched { sigma } => PriorSpec::Laplace {
                b: laplace_from_gaussian_scale(*sigma)?,
            },
            PriorConfig::Flow {
                weights,
                gains,
                fallback_sigma,
            } => {
                let load = |paths: &[Option<PathBuf>]| -> Result<Vec<Option<FlowParams>>> {
                    paths
                        .iter()
                        .map(|p| p.as_ref().map(|p| load_flow(&base_dir.join(p))).transpose())
                        .collect()
                };
                PriorSpec::Flow(FlowPrior {
                    weights: load(weights)?,
                    gains: load(gains)?,
                    fallback_sigma: *fallback_sigma,
                })
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub(crate) fn load_flow(path: &Path) -> Result<FlowParams> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::Architecture;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;
    use std::sync::Arc;

    #[test]
    fn scalar_densities() {
        let g = PriorSpec::Gaussian { sigma: 1.0 };
        assert_abs_diff_eq!(g.log_density_scalar(0.0).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
        let l = PriorSpec::Laplace { b: 1.0 };
        assert_abs_diff_eq!(l.log_density_scalar(0.0).unwrap(), -LN_2, epsilon = 1e-12);
        assert_eq!(g.grad_scalar(2.0).unwrap(), -2.0);
        assert_eq!(l.grad_scalar(0.0).unwrap(), 0.0);
        assert_eq!(l.grad_scalar(-3.0).unwrap(), 1.0);
    }

    #[test]
    fn matched_laplace_scale() {
        assert_abs_diff_eq!(laplace_from_gaussian_scale(SQRT_2).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(laplace_from_gaussian_scale(1.679).unwrap(), 1.187_232, epsilon = 1e-6);
        assert!(laplace_from_gaussian_scale(0.0).is_err());
        assert!(laplace_from_gaussian_scale(-1.0).is_err());
    }

    #[test]
    fn laplace_has_heavier_tails_at_four_sigma() {
        for sigma in [0.1, 1.0, 1.679, 30.0] {
            let g = PriorSpec::Gaussian { sigma };
            let l = PriorSpec::Laplace {
                b: laplace_from_gaussian_scale(sigma).unwrap(),
            };
            let x = 4.0 * sigma;
            assert!(l.log_density_scalar(x).unwrap() > g.log_density_scalar(x).unwrap());
            assert!(l.log_density_scalar(-x).unwrap() > g.log_density_scalar(-x).unwrap());
        }
    }

    #[test]
    fn non_finite_params_rejected() {
        let arch = Arc::new(Architecture::mlp(2, &[], 1, false, 0.0).unwrap());
        let p = NetworkParams::from_values(arch, vec![0.0, f64::NAN, 1.0]).unwrap();
        assert!(log_prior(&PriorSpec::Gaussian { sigma: 1.0 }, &p).is_err());
    }

    #[test]
    fn flow_prior_with_identity_flows_equals_standard_gaussian() {
        let arch = Arc::new(Architecture::mlp(3, &[4], 2, true, 1e-5).unwrap());
        let p = NetworkParams::init(arch, &mut rng::stream(4, 0));
        let fp = PriorSpec::Flow(FlowPrior {
            weights: vec![Some(FlowParams::identity()), Some(FlowParams::identity())],
            gains: vec![Some(FlowParams::identity()), None],
            fallback_sigma: 1.0,
        });
        let g = PriorSpec::Gaussian { sigma: 1.0 };
        assert_abs_diff_eq!(log_prior(&fp, &p).unwrap(), log_prior(&g, &p).unwrap(), epsilon = 1e-10);
        let ga = grad_log_prior(&fp, &p).unwrap();
        let gb = grad_log_prior(&g, &p).unwrap();
        for (a, b) in ga.values().iter().zip(gb.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn config_round_trip() {
        let c = PriorConfig::Flow {
            weights: vec![Some("w0.json".into()), None],
            gains: vec![],
            fallback_sigma: 1.679,
        };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PriorConfig>(&s).unwrap(), c);
        let m: PriorConfig = serde_json::from_str(r#"{"kind":"laplace_matched","sigma":1.679}"#).unwrap();
        match m.resolve(Path::new(".")).unwrap() {
            PriorSpec::Laplace { b } => assert_abs_diff_eq!(b, 1.679 / SQRT_2, epsilon = 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }
}
