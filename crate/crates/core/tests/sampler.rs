//! GGMC against analytic stationary distributions, plus the potential's
//! relation to the regularized squared TD loss.

use std::sync::Arc;

use bql::likelihood::LikelihoodSpec;
use bql::prior::PriorSpec;
use bql::qnet::{forward, Architecture, NetworkParams};
use bql::rng;
use bql::sampler::{ggmc_step, hyper_from_adam, rescaled_batch_potential, ChainState, SamplerHyper, TdExample};
use rand::Rng;

/// Mean and variance of a scalar chain after `burn_in` steps.
fn run_scalar(
    grad: impl Fn(f64) -> f64,
    x0: f64,
    hyper: &SamplerHyper,
    burn_in: usize,
    steps: usize,
    seed: u64,
) -> (f64, f64) {
    let mut chain = ChainState::new(vec![x0]);
    let mut r = rng::stream(seed, 0);
    let mut g = |x: &Vec<f64>, out: &mut [f64]| {
        out[0] = grad(x[0]);
        Ok(())
    };
    for _ in 0..burn_in {
        ggmc_step(&mut chain, &mut g, hyper, &mut r).unwrap();
    }
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..steps {
        ggmc_step(&mut chain, &mut g, hyper, &mut r).unwrap();
        let x = chain.params[0];
        s += x;
        s2 += x * x;
    }
    let mean = s / steps as f64;
    (mean, s2 / steps as f64 - mean * mean)
}

#[test]
fn conjugate_gaussian_posterior() {
    // θ ~ N(0, s0²), y_i ~ N(θ, s²)
    let (s0, s) = (2.0, 1.5);
    let mut r = rng::stream(51, 0);
    let ys: Vec<f64> = (0..40).map(|_| 3.0 + s * r.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let precision = ys.len() as f64 / (s * s) + 1.0 / (s0 * s0);
    let post_mean = ys.iter().sum::<f64>() / (s * s) / precision;
    let post_var = 1.0 / precision;

    let prior = PriorSpec::Gaussian { sigma: s0 };
    let lik = LikelihoodSpec::Gaussian { sigma: s };
    let grad = |t: f64| -> f64 {
        -prior.grad_scalar(t).unwrap() - ys.iter().map(|y| lik.dlog_lik_dtd(t - y)).sum::<f64>()
    };
    let sd = post_var.sqrt();
    let h = 1e-3 * sd;
    // near-critical damping for a harmonic well of width `sd`
    let a = (-2.0 * h / sd).exp();
    let hyper = SamplerHyper::unpreconditioned(a, h, 1.0);
    let (mean, var) = run_scalar(grad, 0.0, &hyper, 50_000, 2_000_000, 52);
    assert!((mean / post_mean - 1.0).abs() < 0.05, "mean {mean} vs {post_mean}");
    assert!((var / post_var - 1.0).abs() < 0.15, "var {var} vs {post_var}");
}

#[test]
fn unit_quadratic_variance_at_t_one() {
    let hyper = SamplerHyper::unpreconditioned(0.9, 0.01, 1.0);
    let (_, var) = run_scalar(|x| x, 0.0, &hyper, 10_000, 10_000_000, 53);
    assert!((0.95..=1.05).contains(&var), "variance {var}");
}

#[test]
fn stationary_variance_tracks_temperature() {
    for (k, t) in [0.1, 0.5, 1.0].into_iter().enumerate() {
        let hyper = SamplerHyper::unpreconditioned((-0.02f64).exp(), 0.01, t);
        let (_, var) = run_scalar(|x| x, 0.0, &hyper, 10_000, 2_000_000, 54 + k as u64);
        assert!((var / t - 1.0).abs() < 0.2, "T={t}: variance {var}");
    }
}

#[test]
fn zero_temperature_converges_to_minimizer() {
    // U = ½ (θ-θ*)ᵀ A (θ-θ*) with A positive definite
    let a = [[1.0, 0.4], [0.4, 3.0]];
    let star = [1.5, -0.7];
    let mut chain = ChainState::new(vec![-4.0, 6.0]);
    let hyper = SamplerHyper::unpreconditioned(0.9, 0.01, 0.0);
    let mut r = rng::stream(55, 0);
    let grad = |x: &Vec<f64>, g: &mut [f64]| {
        for i in 0..2 {
            g[i] = (0..2).map(|j| a[i][j] * (x[j] - star[j])).sum();
        }
        Ok(())
    };
    let err = |x: &[f64]| ((x[0] - star[0]).powi(2) + (x[1] - star[1]).powi(2)).sqrt();
    let mut prev = f64::INFINITY;
    for k in 0..40_000 {
        ggmc_step(&mut chain, grad, &hyper, &mut r).unwrap();
        let e = err(&chain.params);
        if k >= 2_000 {
            assert!(e <= prev, "step {k}: {e} > {prev}");
        }
        prev = e;
    }
    assert!(prev < 1e-6, "final error {prev}");
}

fn small_problem(seed: u64) -> (NetworkParams, Vec<(Vec<f64>, usize, f64)>) {
    let arch = Arc::new(Architecture::mlp(3, &[5], 2, true, 1e-5).unwrap());
    let mut r = rng::stream(seed, 0);
    let p = NetworkParams::init(arch, &mut r);
    let data = (0..12)
        .map(|_| {
            let obs: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            (obs, r.random_range(0..2), r.random_range(-1.0..1.0))
        })
        .collect();
    (p, data)
}

fn examples(data: &[(Vec<f64>, usize, f64)]) -> Vec<TdExample<'_>> {
    data.iter()
        .map(|(o, a, t)| TdExample {
            obs: o,
            action: *a,
            target: *t,
        })
        .collect()
}

#[test]
fn identical_seeds_give_bitwise_identical_chains() {
    let run = || {
        let (p, data) = small_problem(56);
        let ex = examples(&data);
        let prior = PriorSpec::Gaussian { sigma: 1.679 };
        let lik = LikelihoodSpec::Gaussian { sigma: 0.1 };
        let mut chain = ChainState::new(p);
        chain.observe(500);
        let hyper = hyper_from_adam(0.9, 0.999, 1e-3, 500).unwrap();
        let mut r = rng::stream(57, 0);
        for _ in 0..200 {
            let g = |q: &NetworkParams, out: &mut [f64]| {
                let (_, grad) = rescaled_batch_potential(q, &ex, 500, &prior, &lik)?;
                out.copy_from_slice(grad.values());
                Ok(())
            };
            ggmc_step(&mut chain, g, &hyper, &mut r).unwrap();
        }
        chain
    };
    let (a, b) = (run(), run());
    assert_eq!(a.params.values(), b.params.values());
    assert_eq!(a.momentum, b.momentum);
    assert_eq!(a.precond, b.precond);
}

/// `L(θ) = mean td² + κ‖θ‖²` with `κ = σ_TD² / (n_data σ_p²)`.
fn regularized_loss(p: &NetworkParams, data: &[(Vec<f64>, usize, f64)], kappa: f64) -> f64 {
    let mse = data
        .iter()
        .map(|(o, a, t)| {
            let (q, _) = forward(p, o).unwrap();
            (q[*a] - t).powi(2)
        })
        .sum::<f64>()
        / data.len() as f64;
    mse + kappa * p.values().iter().map(|x| x * x).sum::<f64>()
}

#[test]
fn zero_temperature_step_follows_scaled_squared_loss_gradient() {
    let (p, data) = small_problem(58);
    let ex = examples(&data);
    let (sigma_p, sigma_td, n_data) = (1.679, 0.3, 400u64);
    let prior = PriorSpec::Gaussian { sigma: sigma_p };
    let lik = LikelihoodSpec::Gaussian { sigma: sigma_td };
    let kappa = sigma_td * sigma_td / (n_data as f64 * sigma_p * sigma_p);

    // central differences of L
    let mut fd = vec![0.0; p.len()];
    for (i, slot) in fd.iter_mut().enumerate() {
        let eps = 1e-6;
        let mut plus = p.clone();
        plus.values_mut()[i] += eps;
        let mut minus = p.clone();
        minus.values_mut()[i] -= eps;
        *slot = (regularized_loss(&plus, &data, kappa) - regularized_loss(&minus, &data, kappa)) / (2.0 * eps);
    }
    let scale = n_data as f64 / (2.0 * sigma_td * sigma_td);
    let (_, grad) = rescaled_batch_potential(&p, &ex, n_data, &prior, &lik).unwrap();
    let norm = fd.iter().map(|x| x * x).sum::<f64>().sqrt() * scale;
    let diff = grad
        .values()
        .iter()
        .zip(&fd)
        .map(|(g, f)| (g - scale * f).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(diff / norm < 1e-6, "relative error {}", diff / norm);

    // from rest at T = 0 with M = I, one step moves θ by -(h²/2)∇U
    let h = 1e-3;
    let hyper = SamplerHyper::unpreconditioned(0.9, h, 0.0);
    let mut chain = ChainState::new(p.clone());
    let mut r = rng::stream(59, 0);
    let mut first = true;
    let g = |q: &NetworkParams, out: &mut [f64]| {
        if first {
            first = false;
            let (_, grad) = rescaled_batch_potential(q, &ex, n_data, &prior, &lik)?;
            out.copy_from_slice(grad.values());
        }
        Ok(())
    };
    ggmc_step(&mut chain, g, &hyper, &mut r).unwrap();
    for ((after, before), f) in chain.params.values().iter().zip(p.values()).zip(&fd) {
        let want = -(h * h / 2.0) * scale * f;
        assert!((after - before - want).abs() <= 1e-6 * norm * h * h, "{} vs {want}", after - before);
    }
}

#[test]
fn flat_prior_leaves_pure_likelihood() {
    let (p, data) = small_problem(60);
    let ex = examples(&data);
    let lik = LikelihoodSpec::Logistic { scale: 0.4 };
    let n_data = 250;
    let (u, grad) = rescaled_batch_potential(&p, &ex, n_data, &PriorSpec::Flat, &lik).unwrap();
    let mut want_u = 0.0;
    let mut want_g = vec![0.0; p.len()];
    for e in &ex {
        let (u1, g1) = rescaled_batch_potential(&p, std::slice::from_ref(e), 1, &PriorSpec::Flat, &lik).unwrap();
        want_u += u1;
        for (w, g) in want_g.iter_mut().zip(g1.values()) {
            *w += g;
        }
    }
    let scale = n_data as f64 / ex.len() as f64;
    assert!((u - scale * want_u).abs() <= 1e-10 * u.abs());
    for (g, w) in grad.values().iter().zip(&want_g) {
        assert!((g - scale * w).abs() <= 1e-10 * (1.0 + g.abs()));
    }
}
