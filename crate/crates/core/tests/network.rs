//! Forward pass against a straight-line re-implementation, LayerNorm scale
//! invariance, and flattening round trips.

use std::sync::Arc;

use bql::qnet::{forward, Architecture, NetworkParams};
use bql::rng;
use proptest::prelude::*;
use rand::Rng;

/// 4-2-2 network with LayerNorm on the hidden layer, written out by hand from
/// the flat layout: w0 (2x4), b0, g0, s0, w1 (2x2), b1.
fn oracle_422(v: &[f64], x: &[f64], eps: f64) -> [f64; 2] {
    let (w0, rest) = v.split_at(8);
    let (b0, rest) = rest.split_at(2);
    let (g0, rest) = rest.split_at(2);
    let (s0, rest) = rest.split_at(2);
    let (w1, b1) = rest.split_at(4);
    let z0 = w0[0] * x[0] + w0[1] * x[1] + w0[2] * x[2] + w0[3] * x[3] + b0[0];
    let z1 = w0[4] * x[0] + w0[5] * x[1] + w0[6] * x[2] + w0[7] * x[3] + b0[1];
    let mean = (z0 + z1) / 2.0;
    let var = ((z0 - mean).powi(2) + (z1 - mean).powi(2)) / 2.0;
    let sd = (var + eps).sqrt();
    let h0 = (g0[0] * (z0 - mean) / sd + s0[0]).max(0.0);
    let h1 = (g0[1] * (z1 - mean) / sd + s0[1]).max(0.0);
    [
        w1[0] * h0 + w1[1] * h1 + b1[0],
        w1[2] * h0 + w1[3] * h1 + b1[1],
    ]
}

#[test]
fn forward_matches_hand_rolled_oracle() {
    let arch = Arc::new(Architecture::mlp(4, &[2], 2, true, 1e-5).unwrap());
    assert_eq!(arch.num_params(), 8 + 2 + 2 + 2 + 4 + 2);
    let mut r = rng::stream(21, 0);
    for _ in 0..200 {
        let v: Vec<f64> = (0..arch.num_params()).map(|_| r.random_range(-1.5..1.5)).collect();
        let x: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        let p = NetworkParams::from_values(arch.clone(), v.clone()).unwrap();
        let (q, _) = forward(&p, &x).unwrap();
        let want = oracle_422(&v, &x, 1e-5);
        assert!((q[0] - want[0]).abs() < 1e-12 && (q[1] - want[1]).abs() < 1e-12);
    }
}

#[test]
fn forward_is_deterministic_and_cache_consistent() {
    let arch = Arc::new(Architecture::mlp(6, &[5, 5], 3, true, 1e-5).unwrap());
    let p = NetworkParams::init(arch, &mut rng::stream(3, 0));
    let x = [0.0, 1.0, 0.0, 0.0, -0.5, 0.2];
    let (a, ca) = forward(&p, &x).unwrap();
    let (b, cb) = forward(&p, &x).unwrap();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert_eq!(ca.q_values(), &a[..]);
}

fn scaled(p: &NetworkParams, layer: usize, c: f64) -> NetworkParams {
    let mut q = p.clone();
    for w in q.weights_mut(layer) {
        *w *= c;
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// With ε_ln = 0 (and zero biases, so the whole pre-activation scales),
    /// scaling a LayerNorm layer's weight matrix leaves the outputs unchanged.
    #[test]
    fn layernorm_scale_invariance(
        seed in any::<u64>(),
        layer in 0usize..2,
        c in prop_oneof![Just(0.1), Just(3.7), Just(100.0), 0.05f64..200.0],
    ) {
        let arch = Arc::new(Architecture::mlp(5, &[6, 4], 3, true, 0.0).unwrap());
        let mut r = rng::stream(seed, 0);
        let p = NetworkParams::init(arch, &mut r);
        let x: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let (a, ca) = forward(&p, &x).unwrap();
        let (b, cb) = forward(&scaled(&p, layer, c), &x).unwrap();
        for (u, v) in ca.normalized[layer].iter().zip(&cb.normalized[layer]) {
            prop_assert!((u - v).abs() <= 1e-9);
        }
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-9, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn flatten_round_trip(seed in any::<u64>(), h1 in 1usize..6, h2 in 1usize..6, ln in any::<bool>()) {
        let arch = Arc::new(Architecture::mlp(3, &[h1, h2], 2, ln, 1e-5).unwrap());
        let p = NetworkParams::init(arch.clone(), &mut rng::stream(seed, 0));
        let flat = p.flatten();
        prop_assert_eq!(flat.len(), arch.num_params());
        let back = NetworkParams::unflatten(&flat, arch).unwrap();
        prop_assert_eq!(back, p);
    }
}
