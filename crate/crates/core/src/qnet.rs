//! Fully connected Q-network with optional LayerNorm and exact gradients.
//!
//! Parameters live in one flat `Vec<f64>`; per-layer tensors are views into
//! it. The flat layout is the checkpoint layout: layer by layer, `w`
//! (row-major, `out_dim x in_dim`), then `b`, then LayerNorm gain `g` and
//! shift `s` for layers that have them.
//!
//! A LayerNorm layer computes
//! `y = g * (x - mean(x)) / sqrt(var(x) + eps) + s` on the full
//! pre-activation `x = W h + b` (population variance), then applies the
//! activation.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, config_err, Error, Result};

pub const DEFAULT_LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub layernorm: bool,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Offsets {
    w: usize,
    b: usize,
    g: usize,
    s: usize,
    end: usize,
}

/// Layer stack plus the LayerNorm epsilon. Shared between all parameter
/// vectors of the same network through an `Arc`.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    layers: Vec<LayerSpec>,
    ln_eps: f64,
    offsets: Vec<Offsets>,
    len: usize,
}

impl Architecture {
    pub fn new(layers: Vec<LayerSpec>, ln_eps: f64) -> Result<Self> {
        if !(ln_eps >= 0.0 && ln_eps.is_finite()) {
            return Err(config_err(format!("layernorm epsilon must be >= 0, got {ln_eps}")));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(config_err(format!("layer {i} has a zero dimension")));
            }
            if i > 0 && layers[i - 1].out_dim != l.in_dim {
                return Err(config_err(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.in_dim,
                    i - 1,
                    layers[i - 1].out_dim
                )));
            }
        }
        if let Some(last) = layers.last() {
            if last.layernorm || last.activation != Activation::Identity {
                return Err(config_err(
                    "output layer must be linear (identity activation, no layernorm)",
                ));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut cursor = 0;
        for l in &layers {
            let w = cursor;
            let b = w + l.in_dim * l.out_dim;
            let g = b + l.out_dim;
            let (s, end) = if l.layernorm {
                (g + l.out_dim, g + 2 * l.out_dim)
            } else {
                (g, g)
            };
            offsets.push(Offsets { w, b, g, s, end });
            cursor = end;
        }
        Ok(Self {
            layers,
            ln_eps,
            offsets,
            len: cursor,
        })
    }

    /// `input -> hidden... -> outputs`, ReLU on hidden layers, LayerNorm on
    /// hidden layers when `layernorm` is set.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        outputs: usize,
        layernorm: bool,
        ln_eps: f64,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push(LayerSpec {
                in_dim: prev,
                out_dim: h,
                layernorm,
                activation: Activation::Relu,
            });
            prev = h;
        }
        layers.push(LayerSpec {
            in_dim: prev,
            out_dim: outputs,
            layernorm: false,
            activation: Activation::Identity,
        });
        Self::new(layers, ln_eps)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn ln_eps(&self) -> f64 {
        self.ln_eps
    }

    pub fn num_params(&self) -> usize {
        self.len
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Same layer stack with a different epsilon.
    pub fn with_ln_eps(&self, ln_eps: f64) -> Result<Self> {
        Self::new(self.layers.clone(), ln_eps)
    }

    pub(crate) fn weight_range(&self, layer: usize) -> std::ops::Range<usize> {
        let o = self.offsets[layer];
        o.w..o.b
    }

    pub(crate) fn bias_range(&self, layer: usize) -> std::ops::Range<usize> {
        let o = self.offsets[layer];
        o.b..o.g
    }

    pub(crate) fn gain_range(&self, layer: usize) -> Option<std::ops::Range<usize>> {
        let o = self.offsets[layer];
        self.layers[layer].layernorm.then_some(o.g..o.s)
    }

    pub(crate) fn shift_range(&self, layer: usize) -> Option<std::ops::Range<usize>> {
        let o = self.offsets[layer];
        self.layers[layer].layernorm.then_some(o.s..o.end)
    }

    fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim.max(l.out_dim))
            .max()
            .unwrap_or(0)
    }
}

/// The learnable parameters θ of one Q-network (also used for gradients,
/// which have the same shape).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    arch: Arc<Architecture>,
    values: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: Arc<Architecture>) -> Self {
        let mut values = vec![0.0; arch.num_params()];
        for l in 0..arch.layers.len() {
            if let Some(r) = arch.gain_range(l) {
                values[r].fill(1.0);
            }
        }
        Self { arch, values }
    }

    /// An all-zero vector of the right shape, gains included. Used for
    /// gradient accumulators.
    pub fn zeros_like(&self) -> Self {
        Self {
            arch: Arc::clone(&self.arch),
            values: vec![0.0; self.values.len()],
        }
    }

    /// Fan-in uniform weights in `[-1/sqrt(in), 1/sqrt(in)]`, zero biases,
    /// unit gains, zero shifts.
    pub fn init<R: Rng + ?Sized>(arch: Arc<Architecture>, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        for l in 0..p.arch.layers.len() {
            let bound = 1.0 / (p.arch.layers[l].in_dim as f64).sqrt();
            let r = p.arch.weight_range(l);
            for w in &mut p.values[r] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn from_values(arch: Arc<Architecture>, values: Vec<f64>) -> Result<Self> {
        check_dim("parameter vector", arch.num_params(), values.len())?;
        Ok(Self { arch, values })
    }

    pub fn architecture(&self) -> &Arc<Architecture> {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.values[self.arch.weight_range(layer)]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.arch.weight_range(layer);
        &mut self.values[r]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.values[self.arch.bias_range(layer)]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.arch.bias_range(layer);
        &mut self.values[r]
    }

    pub fn gain(&self, layer: usize) -> Option<&[f64]> {
        self.arch.gain_range(layer).map(|r| &self.values[r])
    }

    pub fn gain_mut(&mut self, layer: usize) -> Option<&mut [f64]> {
        self.arch.gain_range(layer).map(|r| &mut self.values[r])
    }

    pub fn shift(&self, layer: usize) -> Option<&[f64]> {
        self.arch.shift_range(layer).map(|r| &self.values[r])
    }

    pub fn shift_mut(&mut self, layer: usize) -> Option<&mut [f64]> {
        self.arch.shift_range(layer).map(|r| &mut self.values[r])
    }

    /// Flat copy in checkpoint order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn unflatten(values: &[f64], arch: Arc<Architecture>) -> Result<Self> {
        Self::from_values(arch, values.to_vec())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let layers = (0..self.arch.layers.len())
            .map(|l| LayerTensors {
                w: self.weights(l).to_vec(),
                b: self.bias(l).to_vec(),
                g: self.gain(l).map(<[f64]>::to_vec).unwrap_or_default(),
                s: self.shift(l).map(<[f64]>::to_vec).unwrap_or_default(),
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            ln_eps: self.arch.ln_eps,
            spec: self.arch.layers.clone(),
            layers,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let arch = Arc::new(Architecture::new(ckpt.spec.clone(), ckpt.ln_eps)?);
        check_dim("checkpoint layers", arch.layers.len(), ckpt.layers.len())?;
        let mut values = Vec::with_capacity(arch.num_params());
        for (spec, t) in arch.layers.iter().zip(&ckpt.layers) {
            check_dim("checkpoint weights", spec.in_dim * spec.out_dim, t.w.len())?;
            check_dim("checkpoint bias", spec.out_dim, t.b.len())?;
            values.extend_from_slice(&t.w);
            values.extend_from_slice(&t.b);
            if spec.layernorm {
                check_dim("checkpoint gain", spec.out_dim, t.g.len())?;
                check_dim("checkpoint shift", spec.out_dim, t.s.len())?;
                values.extend_from_slice(&t.g);
                values.extend_from_slice(&t.s);
            } else if !t.g.is_empty() || !t.s.is_empty() {
                return Err(config_err("gain/shift given for a layer without layernorm"));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Self::from_values(arch, values)
    }
}

pub const CHECKPOINT_VERSION: &str = "v1";

/// On-disk network checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(default = "default_version")]
    pub version: String,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
    pub spec: Vec<LayerSpec>,
    pub layers: Vec<LayerTensors>,
}

fn default_version() -> String {
    CHECKPOINT_VERSION.to_string()
}

fn default_ln_eps() -> f64 {
    DEFAULT_LN_EPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTensors {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub g: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub s: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    /// `W h + b` per layer.
    pub linear: Vec<Vec<f64>>,
    /// `(x - mean) / sqrt(var + eps)` for LayerNorm layers, empty otherwise.
    pub normalized: Vec<Vec<f64>>,
    /// `1 / sqrt(var + eps)` for LayerNorm layers, 0 otherwise.
    pub inv_std: Vec<f64>,
    /// Input to the activation (post-normalization, after gain and shift).
    pub pre_activation: Vec<Vec<f64>>,
    /// Layer outputs; the last one holds the Q-values.
    pub output: Vec<Vec<f64>>,
    nonzero: Vec<usize>,
}

impl ForwardCache {
    pub fn new(arch: &Architecture) -> Self {
        let n = arch.layers.len();
        let mut c = Self {
            linear: Vec::with_capacity(n),
            normalized: Vec::with_capacity(n),
            inv_std: vec![0.0; n],
            pre_activation: Vec::with_capacity(n),
            output: Vec::with_capacity(n),
            nonzero: Vec::with_capacity(arch.max_width()),
        };
        for l in &arch.layers {
            c.linear.push(vec![0.0; l.out_dim]);
            c.normalized
                .push(if l.layernorm { vec![0.0; l.out_dim] } else { Vec::new() });
            c.pre_activation.push(vec![0.0; l.out_dim]);
            c.output.push(vec![0.0; l.out_dim]);
        }
        c
    }

    pub fn q_values(&self) -> &[f64] {
        self.output.last().map_or(&[], Vec::as_slice)
    }
}

/// Q-values for `obs`, plus the cache needed by [`backprop`].
pub fn forward(params: &NetworkParams, obs: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let mut cache = ForwardCache::new(&params.arch);
    forward_into(params, obs, &mut cache)?;
    let q = if params.arch.layers.is_empty() {
        obs.to_vec()
    } else {
        cache.q_values().to_vec()
    };
    Ok((q, cache))
}

/// Forward pass reusing a preallocated cache (must come from the same
/// architecture).
pub fn forward_into(params: &NetworkParams, obs: &[f64], cache: &mut ForwardCache) -> Result<()> {
    let arch = &*params.arch;
    if let Some(first) = arch.layers.first() {
        check_dim("observation", first.in_dim, obs.len())?;
    }
    check_dim("forward cache", arch.layers.len(), cache.output.len())?;
    let v = &params.values;
    for (l, spec) in arch.layers.iter().enumerate() {
        let o = arch.offsets[l];
        let (done, rest) = cache.output.split_at_mut(l);
        let input: &[f64] = if l == 0 { obs } else { &done[l - 1] };
        // Sparse-aware matvec: one-hot observations and ReLU outputs are
        // mostly zero. Skipping exact zeros does not change the sum.
        cache.nonzero.clear();
        cache
            .nonzero
            .extend(input.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(j, _)| j));
        let lin = &mut cache.linear[l];
        let w = &v[o.w..o.b];
        let b = &v[o.b..o.g];
        for i in 0..spec.out_dim {
            let row = &w[i * spec.in_dim..(i + 1) * spec.in_dim];
            let mut acc = b[i];
            for &j in &cache.nonzero {
                acc += row[j] * input[j];
            }
            lin[i] = acc;
        }
        let pre = &mut cache.pre_activation[l];
        if spec.layernorm {
            let n = spec.out_dim as f64;
            let mean = lin.iter().sum::<f64>() / n;
            let var = lin.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv_std = 1.0 / (var + arch.ln_eps).sqrt();
            cache.inv_std[l] = inv_std;
            let g = &v[o.g..o.s];
            let s = &v[o.s..o.end];
            let norm = &mut cache.normalized[l];
            for i in 0..spec.out_dim {
                norm[i] = (lin[i] - mean) * inv_std;
                pre[i] = g[i] * norm[i] + s[i];
            }
        } else {
            pre.copy_from_slice(lin);
        }
        let out = &mut rest[0];
        match spec.activation {
            Activation::Relu => {
                for (y, x) in out.iter_mut().zip(pre.iter()) {
                    *y = x.max(0.0);
                }
            }
            Activation::Identity => out.copy_from_slice(pre),
        }
    }
    Ok(())
}

/// Exact gradient of `<upstream, q_values>` with respect to every parameter.
pub fn backprop(
    params: &NetworkParams,
    obs: &[f64],
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<NetworkParams> {
    let mut grad = params.zeros_like();
    let mut scratch = BackpropScratch::new(&params.arch);
    accumulate_gradient(params, obs, cache, upstream, &mut grad.values, &mut scratch)?;
    Ok(grad)
}

/// Reusable buffers for [`accumulate_gradient`].
#[derive(Clone, Debug)]
pub struct BackpropScratch {
    delta: Vec<f64>,
    below: Vec<f64>,
}

impl BackpropScratch {
    pub fn new(arch: &Architecture) -> Self {
        let w = arch.max_width();
        Self {
            delta: vec![0.0; w],
            below: vec![0.0; w],
        }
    }
}

/// Adds the gradient of `<upstream, q_values>` into `grad` (flat layout).
pub fn accumulate_gradient(
    params: &NetworkParams,
    obs: &[f64],
    cache: &ForwardCache,
    upstream: &[f64],
    grad: &mut [f64],
    scratch: &mut BackpropScratch,
) -> Result<()> {
    let arch = &*params.arch;
    let n_layers = arch.layers.len();
    if n_layers == 0 {
        return Ok(());
    }
    check_dim("upstream gradient", arch.output_dim(), upstream.len())?;
    check_dim("gradient buffer", arch.num_params(), grad.len())?;
    let v = &params.values;

    let out_dim = arch.layers[n_layers - 1].out_dim;
    scratch.delta[..out_dim].copy_from_slice(upstream);

    for l in (0..n_layers).rev() {
        let spec = &arch.layers[l];
        let o = arch.offsets[l];
        let m = spec.out_dim;
        let delta = &mut scratch.delta[..m];

        // through the activation
        if spec.activation == Activation::Relu {
            for (d, x) in delta.iter_mut().zip(&cache.pre_activation[l]) {
                if *x <= 0.0 {
                    *d = 0.0;
                }
            }
        }

        // through gain/shift and the normalization
        if spec.layernorm {
            let norm = &cache.normalized[l];
            let (gg, rest) = grad[o.g..o.end].split_at_mut(m);
            let gs = rest;
            let g = &v[o.g..o.s];
            let mut mean_d = 0.0;
            let mut mean_dn = 0.0;
            for i in 0..m {
                gg[i] += delta[i] * norm[i];
                gs[i] += delta[i];
                let dn = delta[i] * g[i];
                delta[i] = dn;
                mean_d += dn;
                mean_dn += dn * norm[i];
            }
            let mf = m as f64;
            mean_d /= mf;
            mean_dn /= mf;
            let inv_std = cache.inv_std[l];
            for i in 0..m {
                delta[i] = inv_std * (delta[i] - mean_d - norm[i] * mean_dn);
            }
        }

        // through the affine map
        let input: &[f64] = if l == 0 { obs } else { &cache.output[l - 1] };
        let n = spec.in_dim;
        {
            let (gw, gb) = grad[o.w..o.g].split_at_mut(n * m);
            for i in 0..m {
                let d = delta[i];
                gb[i] += d;
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[i * n..(i + 1) * n];
                for (gwij, x) in row.iter_mut().zip(input) {
                    if *x != 0.0 {
                        *gwij += d * x;
                    }
                }
            }
        }
        if l > 0 {
            let w = &v[o.w..o.b];
            let below = &mut scratch.below[..n];
            below.fill(0.0);
            for i in 0..m {
                let d = delta[i];
                if d == 0.0 {
                    continue;
                }
                let row = &w[i * n..(i + 1) * n];
                for (b, wij) in below.iter_mut().zip(row) {
                    *b += d * wij;
                }
            }
            scratch.delta[..n].copy_from_slice(&scratch.below[..n]);
        }
    }
    Ok(())
}

/// Index of the largest Q-value; ties go to the lowest index.
pub fn greedy_action(q: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = a;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn arch_422(ln: bool, eps: f64) -> Arc<Architecture> {
        Arc::new(Architecture::mlp(4, &[2], 2, ln, eps).unwrap())
    }

    #[test]
    fn zero_network_gives_zero_q() {
        let arch = Arc::new(Architecture::mlp(5, &[3, 3], 2, true, DEFAULT_LN_EPS).unwrap());
        let p = NetworkParams::zeros(arch);
        let (q, _) = forward(&p, &[0.3, -1.0, 2.0, 0.0, 5.0]).unwrap();
        assert_eq!(q, vec![0.0, 0.0]);
    }

    #[test]
    fn param_count_422() {
        // 4*2 + 2 (+ 2 + 2 with layernorm) for the hidden layer, 2*2 + 2 for the head.
        assert_eq!(arch_422(false, 0.0).num_params(), 8 + 2 + 4 + 2);
        assert_eq!(arch_422(true, 0.0).num_params(), 8 + 2 + 2 + 2 + 4 + 2);
    }

    #[test]
    fn empty_network_flattens_to_empty() {
        let arch = Arc::new(Architecture::new(vec![], DEFAULT_LN_EPS).unwrap());
        let p = NetworkParams::zeros(arch.clone());
        assert!(p.flatten().is_empty());
        assert!(NetworkParams::unflatten(&[], arch).unwrap().is_empty());
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let arch = arch_422(true, DEFAULT_LN_EPS);
        assert!(matches!(
            NetworkParams::unflatten(&[0.0; 3], arch),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = NetworkParams::zeros(arch_422(true, DEFAULT_LN_EPS));
        assert!(forward(&p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rejects_nonlinear_head_and_broken_chain() {
        let bad_head = vec![LayerSpec {
            in_dim: 2,
            out_dim: 2,
            layernorm: false,
            activation: Activation::Relu,
        }];
        assert!(Architecture::new(bad_head, 0.0).is_err());
        let broken = vec![
            LayerSpec { in_dim: 2, out_dim: 3, layernorm: false, activation: Activation::Relu },
            LayerSpec { in_dim: 4, out_dim: 1, layernorm: false, activation: Activation::Identity },
        ];
        assert!(Architecture::new(broken, 0.0).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let arch = Arc::new(Architecture::mlp(3, &[4], 2, true, DEFAULT_LN_EPS).unwrap());
        let p = NetworkParams::init(arch, &mut rng::stream(1, 0));
        let obs = [0.5, -0.2, 1.0];
        let (_, cache) = forward(&p, &obs).unwrap();
        let g = backprop(&p, &obs, &cache, &[0.0, 0.0]).unwrap();
        assert!(g.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_layer_weight_row_gradient_is_obs() {
        let arch = Arc::new(Architecture::mlp(3, &[], 2, false, 0.0).unwrap());
        let p = NetworkParams::init(arch, &mut rng::stream(2, 0));
        let obs = [0.5, -0.2, 1.5];
        let (_, cache) = forward(&p, &obs).unwrap();
        let g = backprop(&p, &obs, &cache, &[0.0, 1.0]).unwrap();
        assert_eq!(&g.weights(0)[3..6], &obs);
        assert_eq!(&g.weights(0)[0..3], &[0.0; 3]);
        assert_eq!(g.bias(0), &[0.0, 1.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let arch = Arc::new(Architecture::mlp(3, &[4, 4], 2, true, DEFAULT_LN_EPS).unwrap());
        let p = NetworkParams::init(arch, &mut rng::stream(3, 0));
        let json = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(NetworkParams::from_checkpoint(&back).unwrap(), p);
    }

    #[test]
    fn checkpoint_json_keys() {
        let arch = Arc::new(Architecture::mlp(2, &[2], 2, true, DEFAULT_LN_EPS).unwrap());
        let p = NetworkParams::zeros(arch);
        let v = serde_json::to_value(p.to_checkpoint()).unwrap();
        assert!(v["spec"].is_array());
        let l0 = &v["layers"][0];
        for k in ["w", "b", "g", "s"] {
            assert!(l0[k].is_array(), "missing {k}");
        }
        assert!(v["layers"][1].get("g").is_none());
    }

    #[test]
    fn greedy_ties_go_low() {
        assert_eq!(greedy_action(&[0.0, 0.0]), 0);
        assert_eq!(greedy_action(&[0.0, 1.0, 1.0]), 1);
    }
}
