//! Scalar normalizing flow: `x = post(spline(pre(z)))` with `z ~ N(0, 1)`.
//!
//! `pre` and `post` are affine maps with positive scales; `spline` is a
//! monotone rational-quadratic spline with two bins (three knots) on
//! `[-B, B]` and the identity outside. The flow has 11 free scalars:
//!
//! | index | meaning                                 |
//! |-------|-----------------------------------------|
//! | 0, 1  | pre log-scale, pre shift                |
//! | 2, 3  | bin widths (unnormalized)               |
//! | 4, 5  | bin heights (unnormalized)              |
//! | 6..9  | knot derivatives (unconstrained)        |
//! | 9, 10 | post log-scale, post shift              |
//!
//! Widths and heights go through softplus and are normalized to span the
//! interval; derivatives go through a shifted softplus. All-zero raw
//! parameters are the identity map.
//!
//! Boundary derivatives are free, so the density is continuous but its
//! derivative jumps at the interval ends. At knots the derivative uses the
//! left limit.

pub mod dual;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use dual::{Dual, Real};

pub const NUM_PARAMS: usize = 11;
pub const DEFAULT_HALF_WIDTH: f64 = 6.0;
pub const CHECKPOINT_KIND: &str = "scalar_flow_v1";

const MIN_BIN_FRACTION: f64 = 1e-3;
const MIN_DERIVATIVE: f64 = 1e-3;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

const PRE_LOG_SCALE: usize = 0;
const PRE_SHIFT: usize = 1;
const WIDTHS: usize = 2;
const HEIGHTS: usize = 4;
const DERIVS: usize = 6;
const POST_LOG_SCALE: usize = 9;
const POST_SHIFT: usize = 10;

/// Offset so that a zero raw derivative maps to exactly 1.
fn derivative_offset() -> f64 {
    ((1.0 - MIN_DERIVATIVE).exp() - 1.0).ln()
}

#[derive(Clone, Copy, Debug)]
struct Spline<T> {
    xk: [T; 3],
    yk: [T; 3],
    d: [T; 3],
}

#[derive(Clone, Copy, Debug)]
struct Parts<T> {
    pre_scale: T,
    pre_shift: T,
    spline: Spline<T>,
    post_scale: T,
    post_shift: T,
}

fn knots<T: Real>(r0: T, r1: T, half_width: f64) -> [T; 3] {
    let s0 = r0.softplus();
    let s1 = r1.softplus();
    let f0 = s0 / (s0 + s1) * (1.0 - 2.0 * MIN_BIN_FRACTION) + MIN_BIN_FRACTION;
    [
        T::cst(-half_width),
        f0 * (2.0 * half_width) - half_width,
        T::cst(half_width),
    ]
}

fn parts<T: Real>(raw: &[T; NUM_PARAMS], half_width: f64) -> Parts<T> {
    let off = derivative_offset();
    let d = |i: usize| (raw[DERIVS + i] + off).softplus() + MIN_DERIVATIVE;
    Parts {
        pre_scale: raw[PRE_LOG_SCALE].exp(),
        pre_shift: raw[PRE_SHIFT],
        spline: Spline {
            xk: knots(raw[WIDTHS], raw[WIDTHS + 1], half_width),
            yk: knots(raw[HEIGHTS], raw[HEIGHTS + 1], half_width),
            d: [d(0), d(1), d(2)],
        },
        post_scale: raw[POST_LOG_SCALE].exp(),
        post_shift: raw[POST_SHIFT],
    }
}

/// Where a point falls relative to the spline.
#[derive(Clone, Copy, Debug)]
enum Segment {
    Tail,
    Bin { k: usize, xi: f64 },
}

/// Inverse spline `v -> u` and `ln spline'(u)`. Bins are `(y_k, y_{k+1}]`.
fn spline_inverse<T: Real>(s: &Spline<T>, v: T, half_width: f64) -> (T, T, Segment) {
    let vr = v.re();
    if vr <= -half_width || vr > half_width {
        return (v, T::cst(0.0), Segment::Tail);
    }
    let k = usize::from(vr > s.yk[1].re());
    let (xk, xk1) = (s.xk[k], s.xk[k + 1]);
    let (yk, yk1) = (s.yk[k], s.yk[k + 1]);
    let (dk, dk1) = (s.d[k], s.d[k + 1]);
    let w = xk1 - xk;
    let h = yk1 - yk;
    let delta = h / w;
    let dy = v - yk;
    let c2 = dk1 + dk - delta * 2.0;
    let a = h * (delta - dk) + dy * c2;
    let b = h * dk - dy * c2;
    let c = -(delta * dy);
    let mut disc = b * b - a * c * 4.0;
    if disc.re() < 0.0 {
        disc = T::cst(0.0);
    }
    let xi = (c * 2.0) / (-b - disc.sqrt());
    let u = xk + xi * w;
    let one_minus = T::cst(1.0) - xi;
    let t = xi * one_minus;
    let denom = delta + c2 * t;
    let num = delta * delta * (dk1 * xi * xi + delta * t * 2.0 + dk * one_minus * one_minus);
    let ln_deriv = num.ln() - denom.ln() * 2.0;
    (u, ln_deriv, Segment::Bin { k, xi: xi.re() })
}

fn log_prob_generic<T: Real>(raw: &[T; NUM_PARAMS], half_width: f64, x: f64) -> T {
    let p = parts(raw, half_width);
    let v = (T::cst(x) - p.post_shift) / p.post_scale;
    let (u, ln_spline, _) = spline_inverse(&p.spline, v, half_width);
    let z = (u - p.pre_shift) / p.pre_scale;
    let log_det = raw[PRE_LOG_SCALE] + ln_spline + raw[POST_LOG_SCALE];
    -(z * z) * 0.5 - HALF_LN_2PI - log_det
}

/// Parameters ψ of one scalar flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlowCheckpoint", into = "FlowCheckpoint")]
pub struct FlowParams {
    raw: [f64; NUM_PARAMS],
    half_width: f64,
}

/// On-disk form: `{"kind": "scalar_flow_v1", "raw_params": [...], "interval": B}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowCheckpoint {
    pub kind: String,
    pub raw_params: Vec<f64>,
    pub interval: f64,
}

impl From<FlowParams> for FlowCheckpoint {
    fn from(p: FlowParams) -> Self {
        Self {
            kind: CHECKPOINT_KIND.to_string(),
            raw_params: p.raw.to_vec(),
            interval: p.half_width,
        }
    }
}

impl TryFrom<FlowCheckpoint> for FlowParams {
    type Error = Error;
    fn try_from(c: FlowCheckpoint) -> Result<Self> {
        if c.kind != CHECKPOINT_KIND {
            return Err(Error::Config(format!("unknown flow checkpoint kind {:?}", c.kind)));
        }
        let raw: [f64; NUM_PARAMS] = c.raw_params.as_slice().try_into().map_err(|_| {
            Error::Dimension {
                context: "flow raw_params",
                expected: NUM_PARAMS,
                got: c.raw_params.len(),
            }
        })?;
        FlowParams::from_raw(raw, c.interval)
    }
}

impl Default for FlowParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl FlowParams {
    pub fn identity() -> Self {
        Self {
            raw: [0.0; NUM_PARAMS],
            half_width: DEFAULT_HALF_WIDTH,
        }
    }

    pub fn from_raw(raw: [f64; NUM_PARAMS], half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::Config(format!("flow interval must be positive, got {half_width}")));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow parameters".into()));
        }
        Ok(Self { raw, half_width })
    }

    /// Identity spline with the given affine maps.
    pub fn affine(pre_scale: f64, pre_shift: f64, post_scale: f64, post_shift: f64) -> Result<Self> {
        if !(pre_scale > 0.0 && post_scale > 0.0) {
            return Err(Error::Config("flow affine scales must be positive".into()));
        }
        let mut raw = [0.0; NUM_PARAMS];
        raw[PRE_LOG_SCALE] = pre_scale.ln();
        raw[PRE_SHIFT] = pre_shift;
        raw[POST_LOG_SCALE] = post_scale.ln();
        raw[POST_SHIFT] = post_shift;
        Self::from_raw(raw, DEFAULT_HALF_WIDTH)
    }

    /// Identity spline with the post map matched to the sample mean and
    /// standard deviation, i.e. the moment-matched Gaussian.
    pub fn moment_matched(samples: &[f64]) -> Result<Self> {
        let n = samples.len() as f64;
        if samples.len() < 2 {
            return Err(Error::InvalidInput("need at least two samples".into()));
        }
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        if !(var > 0.0) {
            return Err(Error::InvalidInput("samples have zero variance".into()));
        }
        Self::affine(1.0, 0.0, var.sqrt(), mean)
    }

    pub fn raw(&self) -> &[f64; NUM_PARAMS] {
        &self.raw
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    fn parts(&self) -> Parts<f64> {
        parts(&self.raw, self.half_width)
    }

    /// Knot x-positions, widths, heights and derivatives of the spline
    /// after reparameterization: `(xk, yk, d)`.
    pub fn spline_knots(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let s = self.parts().spline;
        (s.xk, s.yk, s.d)
    }

    /// Data-space points where the density is not smooth (images of the
    /// spline knots).
    pub fn breakpoints(&self) -> [f64; 3] {
        let p = self.parts();
        p.spline.yk.map(|y| p.post_scale * y + p.post_shift)
    }

    /// `z = f⁻¹(x)` and `ln |f'(z)|`.
    pub fn transform_inverse(&self, x: f64) -> (f64, f64) {
        let p = self.parts();
        let v = (x - p.post_shift) / p.post_scale;
        let (u, ln_spline, _) = spline_inverse(&p.spline, v, self.half_width);
        let z = (u - p.pre_shift) / p.pre_scale;
        (z, self.raw[PRE_LOG_SCALE] + ln_spline + self.raw[POST_LOG_SCALE])
    }

    /// `x = f(z)`.
    pub fn transform_forward(&self, z: f64) -> f64 {
        let p = self.parts();
        let u = p.pre_scale * z + p.pre_shift;
        let b = self.half_width;
        let v = if u <= -b || u > b {
            u
        } else {
            let s = &p.spline;
            let k = usize::from(u > s.xk[1]);
            let w = s.xk[k + 1] - s.xk[k];
            let h = s.yk[k + 1] - s.yk[k];
            let delta = h / w;
            let xi = (u - s.xk[k]) / w;
            let t = xi * (1.0 - xi);
            s.yk[k]
                + h * (delta * xi * xi + s.d[k] * t)
                    / (delta + (s.d[k + 1] + s.d[k] - 2.0 * delta) * t)
        };
        p.post_scale * v + p.post_shift
    }

    pub fn log_prob(&self, x: f64) -> f64 {
        log_prob_generic(&self.raw, self.half_width, x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (z, _) = self.transform_inverse(x);
        crate::stats::standard_normal_cdf(z)
    }

    /// Analytic `d log p(x) / dx`.
    pub fn dlogprob_dx(&self, x: f64) -> f64 {
        let p = self.parts();
        let v = (x - p.post_shift) / p.post_scale;
        let (u, ln_spline, seg) = spline_inverse(&p.spline, v, self.half_width);
        let z = (u - p.pre_shift) / p.pre_scale;
        let sp = ln_spline.exp();
        let spp = match seg {
            Segment::Tail => 0.0,
            Segment::Bin { k, xi } => {
                let s = &p.spline;
                let w = s.xk[k + 1] - s.xk[k];
                let delta = (s.yk[k + 1] - s.yk[k]) / w;
                let (d0, d1) = (s.d[k], s.d[k + 1]);
                let c2 = d1 + d0 - 2.0 * delta;
                let om = 1.0 - xi;
                let num = d1 * xi * xi + 2.0 * delta * xi * om + d0 * om * om;
                let num_d = 2.0 * d1 * xi + 2.0 * delta * (1.0 - 2.0 * xi) - 2.0 * d0 * om;
                let den = delta + c2 * xi * om;
                let den_d = c2 * (1.0 - 2.0 * xi);
                delta * delta * (num_d * den - 2.0 * num * den_d) / (den * den * den) / w
            }
        };
        -z / (p.pre_scale * p.post_scale * sp) - spp / (sp * sp * p.post_scale)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.transform_forward(z)
    }

    pub fn mean_nll(&self, samples: &[f64]) -> f64 {
        -samples.iter().map(|&x| self.log_prob(x)).sum::<f64>() / samples.len() as f64
    }

    /// Mean negative log density and its gradient with respect to the raw
    /// parameters.
    pub fn mean_nll_and_grad<'a, I>(&self, samples: I) -> (f64, [f64; NUM_PARAMS])
    where
        I: IntoIterator<Item = &'a f64>,
    {
        let raw: [Dual<NUM_PARAMS>; NUM_PARAMS] =
            std::array::from_fn(|i| Dual::variable(self.raw[i], i));
        let mut total = Dual::<NUM_PARAMS>::constant(0.0);
        let mut n = 0usize;
        for &x in samples {
            total = total - log_prob_generic(&raw, self.half_width, x);
            n += 1;
        }
        let n = n.max(1) as f64;
        (total.re / n, total.eps.map(|g| g / n))
    }
}

/// Adam settings and schedule for [`fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Minibatch size; 0 means full batch.
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Full-data evaluations (for best-iterate tracking) every this many steps.
    pub eval_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            step_size: 0.01,
            batch_size: 4096,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            eval_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub params: FlowParams,
    pub nll_before: f64,
    pub nll_after: f64,
}

pub const MIN_FIT_SAMPLES: usize = 100;

/// Minimizes the mean negative log density of `samples` under the flow,
/// starting from `init`. Returns the best full-data iterate seen, so the
/// result is never worse than `init`.
pub fn fit<R: Rng + ?Sized>(
    samples: &[f64],
    init: &FlowParams,
    cfg: &FitConfig,
    rng: &mut R,
) -> Result<FitOutcome> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "flow fitting needs at least {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("flow fit samples".into()));
    }
    let nll_before = init.mean_nll(samples);
    if !nll_before.is_finite() {
        return Err(Error::Divergence(format!("initial flow NLL is {nll_before}")));
    }
    let mut best = init.clone();
    let mut best_nll = nll_before;
    let mut cur = init.clone();
    let mut m = [0.0; NUM_PARAMS];
    let mut v = [0.0; NUM_PARAMS];
    let full = cfg.batch_size == 0 || cfg.batch_size >= samples.len();
    let mut batch = Vec::with_capacity(if full { 0 } else { cfg.batch_size });
    let eval_every = cfg.eval_every.max(1);

    for step in 1..=cfg.steps {
        let (loss, grad) = if full {
            cur.mean_nll_and_grad(samples)
        } else {
            batch.clear();
            batch.extend((0..cfg.batch_size).map(|_| samples[rng.random_range(0..samples.len())]));
            cur.mean_nll_and_grad(&batch)
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "flow fit loss became non-finite at step {step} (loss {loss})"
            )));
        }
        let bc1 = 1.0 - cfg.beta1.powi(step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(step as i32);
        let mut raw = cur.raw;
        for i in 0..NUM_PARAMS {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            raw[i] -= cfg.step_size * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
        }
        cur = FlowParams::from_raw(raw, cur.half_width)?;

        if step % eval_every == 0 || step == cfg.steps {
            let nll = cur.mean_nll(samples);
            if !nll.is_finite() {
                return Err(Error::Divergence(format!("flow NLL is {nll} at step {step}")));
            }
            if nll < best_nll {
                best_nll = nll;
                best = cur.clone();
            }
        }
    }
    Ok(FitOutcome {
        params: best,
        nll_before,
        nll_after: best_nll,
    })
}
