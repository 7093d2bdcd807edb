//! Watkins Q(λ) targets against an explicit weighted sum of n-step returns.

use std::sync::Arc;

use bql::agent::{watkins_recursion, watkins_targets, TrajectoryBatch, Transition};
use bql::env::{Env, EnvSpec, RewardNoise};
use bql::qnet::{forward, greedy_action, Architecture, NetworkParams};
use bql::rng;
use proptest::prelude::*;
use rand::Rng;

/// `G_t = Σ_{n<K} (1-λ)λ^{n-1} G^(n) + λ^{K-1} G^(K)`, where `K` is how far
/// the trace can run from `t`: up to a terminal step, the end of the batch,
/// or the first later step whose action is not greedy.
fn brute_force(
    rewards: &[f64],
    dones: &[bool],
    next_max: &[f64],
    next_greedy: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let len = rewards.len();
    (0..len)
        .map(|t| {
            let mut k = 1;
            while !dones[t + k - 1] && t + k < len && next_greedy[t + k - 1] {
                k += 1;
            }
            let n_step = |n: usize| -> f64 {
                let mut g = 0.0;
                for j in 0..n {
                    g += gamma.powi(j as i32) * rewards[t + j];
                }
                let last = t + n - 1;
                if !dones[last] {
                    g += gamma.powi(n as i32) * next_max[last];
                }
                g
            };
            let mut total = 0.0;
            for n in 1..k {
                total += (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(n);
            }
            total + lambda.powi(k as i32 - 1) * n_step(k)
        })
        .collect()
}

fn trajectory() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<f64>, Vec<bool>, f64, f64)> {
    (1usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec(-2.0f64..2.0, n),
            prop::collection::vec(prop::bool::weighted(0.25), n),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(prop::bool::weighted(0.7), n),
            0.01f64..0.999,
            prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0],
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn recursion_equals_brute_force((r, d, m, g, gamma, lambda) in trajectory()) {
        let a = watkins_recursion(&r, &d, &m, &g, gamma, lambda);
        let b = brute_force(&r, &d, &m, &g, gamma, lambda);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn lambda_zero_is_one_step_target((r, d, m, g, gamma, _l) in trajectory()) {
        let a = watkins_recursion(&r, &d, &m, &g, gamma, 0.0);
        for t in 0..r.len() {
            let want = if d[t] { r[t] } else { r[t] + gamma * m[t] };
            prop_assert!((a[t] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn lambda_one_all_greedy_is_discounted_return(
        r in prop::collection::vec(-2.0f64..2.0, 1..=8),
        gamma in 0.01f64..0.999,
    ) {
        let n = r.len();
        let mut d = vec![false; n];
        d[n - 1] = true;
        let a = watkins_recursion(&r, &d, &vec![99.0; n], &vec![true; n], gamma, 1.0);
        for t in 0..n {
            let want: f64 = (t..n).map(|j| gamma.powi((j - t) as i32) * r[j]).sum();
            prop_assert!((a[t] - want).abs() <= 1e-12);
        }
    }
}

/// Random rollouts on the chain environment with a random policy, so that
/// the trace is cut at arbitrary places.
#[test]
fn network_targets_equal_brute_force() {
    let env = Env::new(EnvSpec::chain(5, RewardNoise::Gaussian { sigma: 0.5 })).unwrap();
    let arch = Arc::new(Architecture::mlp(env.obs_dim(), &[6], 2, true, 1e-5).unwrap());
    let mut r = rng::stream(7, 0);
    for case in 0..200 {
        let p = NetworkParams::init(arch.clone(), &mut r);
        let (mut s, mut obs) = env.reset(&mut r);
        let len = r.random_range(1..=8);
        let mut tr = Vec::new();
        for _ in 0..len {
            let a = r.random_range(0..2);
            let (next, res) = env.step(&s, a, &mut r).unwrap();
            tr.push(Transition {
                obs: obs.clone(),
                action: a,
                reward: res.reward,
                next_obs: res.obs.clone(),
                done: res.done,
                was_greedy: false,
                chain: 0,
            });
            if res.done {
                let (s0, o0) = env.reset(&mut r);
                s = s0;
                obs = o0;
            } else {
                s = next;
                obs = res.obs;
            }
        }
        let (gamma, lambda) = (r.random_range(0.5..0.99), r.random_range(0.0..=1.0));
        let batch = TrajectoryBatch {
            transitions: tr.clone(),
            ..Default::default()
        };
        let got = watkins_targets(&batch, &p, gamma, lambda).unwrap();

        let mut next_max = vec![0.0; len];
        let mut next_greedy = vec![false; len];
        for t in 0..len {
            let (q, _) = forward(&p, &tr[t].next_obs).unwrap();
            next_max[t] = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if t + 1 < len {
                next_greedy[t] = tr[t + 1].action == greedy_action(&q);
            }
        }
        let rewards: Vec<f64> = tr.iter().map(|x| x.reward).collect();
        let dones: Vec<bool> = tr.iter().map(|x| x.done).collect();
        let want = brute_force(&rewards, &dones, &next_max, &next_greedy, gamma, lambda);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12, "case {case}: {got:?} vs {want:?}");
        }
    }
}
