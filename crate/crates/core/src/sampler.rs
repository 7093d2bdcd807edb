//! Tempered Gradient-Guided Monte Carlo.
//!
//! Each step is a symmetric OBABO splitting of preconditioned underdamped
//! Langevin dynamics on the potential `U(θ)`; the temperature only scales the
//! injected noise, so the chain targets `exp(-U/T)`. `T = 0` turns the
//! sampler into heavy-ball gradient descent on `U`.

use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, config_err, Error, Result};
use crate::likelihood::LikelihoodSpec;
use crate::prior::{accumulate_grad_log_prior, log_prior, PriorSpec};
use crate::qnet::{accumulate_gradient, forward_into, BackpropScratch, ForwardCache, NetworkParams};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_PRECOND_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerHyper {
    /// Momentum retained per full step, `a`.
    pub damping: f64,
    /// `h`.
    pub step_size: f64,
    pub temperature: f64,
    /// `β₂`.
    pub precond_decay: f64,
    /// `ε_pre`, added to `sqrt(v)`.
    pub precond_floor: f64,
    /// When false, `M = I` and `v` is not tracked.
    pub preconditioned: bool,
    /// Adam inputs this was translated from (informational).
    pub learning_rate: f64,
    pub beta1: f64,
}

impl SamplerHyper {
    /// Plain underdamped Langevin with identity mass.
    pub fn unpreconditioned(damping: f64, step_size: f64, temperature: f64) -> Self {
        Self {
            damping,
            step_size,
            temperature,
            precond_decay: 0.0,
            precond_floor: DEFAULT_PRECOND_FLOOR,
            preconditioned: false,
            learning_rate: f64::NAN,
            beta1: f64::NAN,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(config_err(format!("damping must be in (0, 1], got {}", self.damping)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(config_err(format!("step size must be positive, got {}", self.step_size)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(config_err(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(0.0..1.0).contains(&self.precond_decay) {
            return Err(config_err(format!(
                "preconditioner decay must be in [0, 1), got {}",
                self.precond_decay
            )));
        }
        if !(self.precond_floor > 0.0) {
            return Err(config_err("preconditioner floor must be positive"));
        }
        Ok(())
    }
}

/// Translates Adam's `β₁`, `β₂` and learning rate into GGMC damping and step
/// size for a dataset of `n_data` transitions. Temperature defaults to 1.
pub fn hyper_from_adam(beta1: f64, beta2: f64, learning_rate: f64, n_data: u64) -> Result<SamplerHyper> {
    if !(beta1 > 0.0 && beta1 < 1.0) {
        return Err(config_err(format!("beta1 must be in (0, 1), got {beta1}")));
    }
    if !(0.0..1.0).contains(&beta2) {
        return Err(config_err(format!("beta2 must be in [0, 1), got {beta2}")));
    }
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(config_err(format!("learning rate must be positive, got {learning_rate}")));
    }
    if n_data == 0 {
        return Err(config_err("n_data must be at least 1"));
    }
    Ok(SamplerHyper {
        damping: (-(1.0 - beta1)).exp(),
        step_size: ((1.0 - beta1) * learning_rate / n_data as f64).sqrt(),
        temperature: 1.0,
        precond_decay: beta2,
        precond_floor: DEFAULT_PRECOND_FLOOR,
        preconditioned: true,
        learning_rate,
        beta1,
    })
}

/// Anything with a flat vector of coordinates.
pub trait Position: Clone {
    fn coords(&self) -> &[f64];
    fn coords_mut(&mut self) -> &mut [f64];
}

impl Position for Vec<f64> {
    fn coords(&self) -> &[f64] {
        self
    }
    fn coords_mut(&mut self) -> &mut [f64] {
        self
    }
}

impl Position for NetworkParams {
    fn coords(&self) -> &[f64] {
        self.values()
    }
    fn coords_mut(&mut self) -> &mut [f64] {
        self.values_mut()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState<P> {
    pub params: P,
    pub momentum: Vec<f64>,
    /// Second-moment accumulator `v`, on the mean-gradient scale `g / n_data`.
    pub precond: Vec<f64>,
    pub step_count: u64,
    pub n_data: u64,
    grad: Vec<f64>,
    mass: Vec<f64>,
}

impl<P: Position> ChainState<P> {
    pub fn new(params: P) -> Self {
        let n = params.coords().len();
        Self {
            params,
            momentum: vec![0.0; n],
            precond: vec![0.0; n],
            step_count: 0,
            n_data: 0,
            grad: vec![0.0; n],
            mass: vec![1.0; n],
        }
    }

    pub fn with_momentum(mut self, momentum: Vec<f64>) -> Result<Self> {
        check_dim("momentum", self.momentum.len(), momentum.len())?;
        self.momentum = momentum;
        Ok(self)
    }

    /// Adds `m` observed transitions; `n_data` never decreases.
    pub fn observe(&mut self, m: u64) {
        self.n_data += m;
    }

    pub fn is_finite(&self) -> bool {
        self.params.coords().iter().all(|x| x.is_finite()) && self.momentum.iter().all(|x| x.is_finite())
    }
}

fn ensure_finite(g: &[f64], what: &str, step: u64) -> Result<()> {
    match g.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Divergence(format!(
            "non-finite {what} at coordinate {i} (value {}) on step {step}",
            g[i]
        ))),
    }
}

/// One OBABO transition. `grad_u(θ, out)` must write `∇U(θ)` into `out`; it is
/// called twice (at the start and after the position update).
///
/// The preconditioner accumulates `(g / n_data)²`, with Adam's bias
/// correction, and is fixed for the duration of the step.
pub fn ggmc_step<P, F, R>(chain: &mut ChainState<P>, mut grad_u: F, hyper: &SamplerHyper, rng: &mut R) -> Result<()>
where
    P: Position,
    F: FnMut(&P, &mut [f64]) -> Result<()>,
    R: rand::Rng + ?Sized,
{
    let n = chain.params.coords().len();
    check_dim("chain momentum", n, chain.momentum.len())?;
    check_dim("chain preconditioner", n, chain.precond.len())?;
    let step = chain.step_count;

    let mut grad = std::mem::take(&mut chain.grad);
    grad.resize(n, 0.0);
    let mut mass = std::mem::take(&mut chain.mass);
    mass.resize(n, 1.0);

    grad.fill(0.0);
    grad_u(&chain.params, &mut grad)?;
    ensure_finite(&grad, "gradient", step)?;

    if hyper.preconditioned {
        let b2 = hyper.precond_decay;
        let inv_n = 1.0 / chain.n_data.max(1) as f64;
        let bias = 1.0 - b2.powi((step + 1).min(i32::MAX as u64) as i32);
        for ((v, m), g) in chain.precond.iter_mut().zip(mass.iter_mut()).zip(&grad) {
            let gs = g * inv_n;
            *v = b2 * *v + (1.0 - b2) * gs * gs;
            *m = (*v / bias).sqrt() + hyper.precond_floor;
        }
    } else {
        mass.fill(1.0);
    }

    let sqrt_a = hyper.damping.sqrt();
    let noise = ((1.0 - hyper.damping) * hyper.temperature).sqrt();
    let half_h = 0.5 * hyper.step_size;

    let o_step = |p: &mut [f64], mass: &[f64], rng: &mut R| {
        if noise > 0.0 {
            for (pi, mi) in p.iter_mut().zip(mass) {
                let xi: f64 = rng.sample(StandardNormal);
                *pi = sqrt_a * *pi + noise * mi.sqrt() * xi;
            }
        } else {
            for pi in p.iter_mut() {
                *pi *= sqrt_a;
            }
        }
    };

    o_step(&mut chain.momentum, &mass, rng);
    for (p, g) in chain.momentum.iter_mut().zip(&grad) {
        *p -= half_h * g;
    }
    for ((x, p), m) in chain.params.coords_mut().iter_mut().zip(&chain.momentum).zip(&mass) {
        *x += hyper.step_size * p / m;
    }

    grad.fill(0.0);
    grad_u(&chain.params, &mut grad)?;
    ensure_finite(&grad, "gradient", step)?;
    for (p, g) in chain.momentum.iter_mut().zip(&grad) {
        *p -= half_h * g;
    }
    o_step(&mut chain.momentum, &mass, rng);

    chain.grad = grad;
    chain.mass = mass;
    chain.step_count += 1;
    ensure_finite(chain.params.coords(), "parameter", step)?;
    Ok(())
}

/// One regression example: the Q-value of `action` at `obs` is pulled
/// towards the fixed `target`.
#[derive(Clone, Copy, Debug)]
pub struct TdExample<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub target: f64,
}

/// Reusable buffers for [`rescaled_batch_potential_into`].
#[derive(Clone, Debug)]
pub struct PotentialScratch {
    cache: ForwardCache,
    backprop: BackpropScratch,
    upstream: Vec<f64>,
}

impl PotentialScratch {
    pub fn new(params: &NetworkParams) -> Self {
        let arch = params.architecture();
        Self {
            cache: ForwardCache::new(arch),
            backprop: BackpropScratch::new(arch),
            upstream: vec![0.0; arch.output_dim()],
        }
    }
}

/// `U = -[n_data · mean_i log p_TD(td_i) + log p(θ)]` with
/// `td_i = Q(obs_i, action_i) - target_i`, and its gradient.
pub fn rescaled_batch_potential(
    params: &NetworkParams,
    minibatch: &[TdExample<'_>],
    n_data: u64,
    prior: &PriorSpec,
    likelihood: &LikelihoodSpec,
) -> Result<(f64, NetworkParams)> {
    let mut grad = params.zeros_like();
    let mut scratch = PotentialScratch::new(params);
    let u = rescaled_batch_potential_into(
        params,
        minibatch,
        n_data,
        prior,
        likelihood,
        None,
        grad.values_mut(),
        &mut scratch,
    )?;
    Ok((u, grad))
}

/// As [`rescaled_batch_potential`], writing the gradient into `grad`.
/// `lik_grad_clip` bounds `|d log p_TD / d td|` per example.
#[allow(clippy::too_many_arguments)]
pub fn rescaled_batch_potential_into(
    params: &NetworkParams,
    minibatch: &[TdExample<'_>],
    n_data: u64,
    prior: &PriorSpec,
    likelihood: &LikelihoodSpec,
    lik_grad_clip: Option<f64>,
    grad: &mut [f64],
    scratch: &mut PotentialScratch,
) -> Result<f64> {
    if minibatch.is_empty() {
        return Err(Error::InvalidInput("empty minibatch".into()));
    }
    check_dim("potential gradient", params.len(), grad.len())?;
    grad.fill(0.0);
    let scale = n_data as f64 / minibatch.len() as f64;
    let mut sum_ll = 0.0;
    for ex in minibatch {
        forward_into(params, ex.obs, &mut scratch.cache)?;
        let q = scratch.cache.q_values();
        if ex.action >= q.len() {
            return Err(Error::InvalidInput(format!(
                "action {} out of range for {} outputs",
                ex.action,
                q.len()
            )));
        }
        let td = q[ex.action] - ex.target;
        sum_ll += likelihood.log_lik(td)?;
        let mut d = likelihood.dlog_lik_dtd(td);
        if let Some(c) = lik_grad_clip {
            d = d.clamp(-c, c);
        }
        scratch.upstream.fill(0.0);
        // dU/dq = -scale · dlog p/dtd
        scratch.upstream[ex.action] = -scale * d;
        accumulate_gradient(params, ex.obs, &scratch.cache, &scratch.upstream, grad, &mut scratch.backprop)?;
    }
    accumulate_grad_log_prior(prior, params, -1.0, grad)?;
    Ok(-(scale * sum_ll + log_prior(prior, params)?))
}
