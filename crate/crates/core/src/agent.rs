//! Bayesian deep Q-learning: an ensemble of GGMC chains over Q-networks,
//! Thompson-sampling exploration and Watkins Q(λ) targets.
//!
//! Every collected batch is shared by all chains. Each chain recomputes its
//! targets from its own parameters once per batch, then takes
//! `epochs_per_batch * minibatches_per_batch` sampler steps on it.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvState};
use crate::error::{config_err, Error, Result};
use crate::likelihood::{LikelihoodConfig, LikelihoodSpec};
use crate::prior::{PriorConfig, PriorSpec};
use crate::qnet::{self, forward_into, greedy_action, Architecture, ForwardCache, NetworkParams};
use crate::rng::{self, streams, Rng};
use crate::sampler::{
    self, ggmc_step, hyper_from_adam, rescaled_batch_potential_into, ChainState, PotentialScratch, TdExample,
};

/// Completed episodes averaged for `mean_return`, and needed before a run
/// can count as solved.
pub const RETURN_WINDOW: usize = 100;
/// Windowed mean return above which a run counts as solved.
pub const SOLVE_THRESHOLD: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_floor")]
    pub precond_floor: f64,
    #[serde(default = "d_true")]
    pub preconditioned: bool,
}

fn d_beta1() -> f64 {
    sampler::DEFAULT_BETA1
}
fn d_beta2() -> f64 {
    sampler::DEFAULT_BETA2
}
fn d_lr() -> f64 {
    sampler::DEFAULT_LEARNING_RATE
}
fn d_floor() -> f64 {
    sampler::DEFAULT_PRECOND_FLOOR
}
fn d_true() -> bool {
    true
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            beta1: d_beta1(),
            beta2: d_beta2(),
            learning_rate: d_lr(),
            precond_floor: d_floor(),
            preconditioned: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_ensemble")]
    pub ensemble_size: usize,
    #[serde(default = "d_temperature")]
    pub temperature: f64,
    #[serde(default = "d_rollout")]
    pub rollout_len: usize,
    #[serde(default = "d_minibatches")]
    pub minibatches_per_batch: usize,
    #[serde(default = "d_epochs")]
    pub epochs_per_batch: usize,
    #[serde(default)]
    pub total_env_steps: u64,
    /// Steps between Thompson draws; defaults to `rollout_len`.
    #[serde(default)]
    pub resample_every: Option<usize>,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub likelihood: LikelihoodConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_true")]
    pub layernorm: bool,
    #[serde(default = "d_ln_eps")]
    pub ln_eps: f64,
    #[serde(default)]
    pub seed: u64,
    /// TD errors of chain 0 kept for the dump (most recent first out).
    #[serde(default)]
    pub td_dump_size: usize,
    /// Bound on `|d log p_TD / d td|` per example.
    #[serde(default)]
    pub lik_grad_clip: Option<f64>,
}

fn d_gamma() -> f64 {
    0.99
}
fn d_lambda() -> f64 {
    0.65
}
fn d_ensemble() -> usize {
    10
}
fn d_temperature() -> f64 {
    1.0
}
fn d_rollout() -> usize {
    128
}
fn d_minibatches() -> usize {
    4
}
fn d_epochs() -> usize {
    2
}
fn d_hidden() -> Vec<usize> {
    vec![128, 128]
}
fn d_ln_eps() -> f64 {
    qnet::DEFAULT_LN_EPS
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: d_gamma(),
            lambda: d_lambda(),
            ensemble_size: d_ensemble(),
            temperature: d_temperature(),
            rollout_len: d_rollout(),
            minibatches_per_batch: d_minibatches(),
            epochs_per_batch: d_epochs(),
            total_env_steps: 0,
            resample_every: None,
            prior: PriorConfig::default(),
            likelihood: LikelihoodConfig::default(),
            sampler: SamplerConfig::default(),
            hidden: d_hidden(),
            layernorm: true,
            ln_eps: d_ln_eps(),
            seed: 0,
            td_dump_size: 0,
            lik_grad_clip: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(config_err(format!("gamma must be in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(config_err(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if self.ensemble_size == 0 {
            return Err(config_err("ensemble_size must be at least 1"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(config_err(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.rollout_len == 0 || self.minibatches_per_batch == 0 || self.epochs_per_batch == 0 {
            return Err(config_err(
                "rollout_len, minibatches_per_batch and epochs_per_batch must be positive",
            ));
        }
        if self.resample_every == Some(0) {
            return Err(config_err("resample_every must be positive"));
        }
        if let Some(c) = self.lik_grad_clip {
            if !(c > 0.0) {
                return Err(config_err(format!("lik_grad_clip must be positive, got {c}")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(config_err("hidden layer widths must be positive"));
        }
        hyper_from_adam(self.sampler.beta1, self.sampler.beta2, self.sampler.learning_rate, 1)?;
        if !(self.sampler.precond_floor > 0.0) {
            return Err(config_err("precond_floor must be positive"));
        }
        Ok(())
    }

    pub fn resample_period(&self) -> usize {
        self.resample_every.unwrap_or(self.rollout_len)
    }

    pub fn architecture(&self, env: &Env) -> Result<Architecture> {
        Architecture::mlp(env.obs_dim(), &self.hidden, env.num_actions(), self.layernorm, self.ln_eps)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    /// Greedy under the acting chain at decision time.
    pub was_greedy: bool,
    /// Index of the acting chain.
    pub chain: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryBatch {
    pub transitions: Vec<Transition>,
    pub targets: Vec<f64>,
    /// Chain drawn at the start of the batch.
    pub source_chain: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub ret: f64,
    pub reached_goal: bool,
}

/// Persistent acting state: episodes continue across collected batches.
#[derive(Clone, Debug)]
pub struct Collector {
    env: Env,
    state: EnvState,
    obs: Vec<f64>,
    resample_every: usize,
    since_draw: usize,
    acting: usize,
    ep_return: f64,
    ep_goal: bool,
    act_rng: Rng,
    env_rng: Rng,
    cache: Option<ForwardCache>,
}

impl Collector {
    pub fn new(env: Env, resample_every: usize, act_rng: Rng, mut env_rng: Rng) -> Result<Self> {
        if resample_every == 0 {
            return Err(config_err("resample_every must be positive"));
        }
        let (state, obs) = env.reset(&mut env_rng);
        Ok(Self {
            env,
            state,
            obs,
            resample_every,
            since_draw: 0,
            acting: 0,
            ep_return: 0.0,
            ep_goal: false,
            act_rng,
            env_rng,
            cache: None,
        })
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    /// Runs `rollout_len` steps. A chain index is drawn uniformly every
    /// `resample_every` steps and its greedy action is taken.
    pub fn collect(
        &mut self,
        chains: &[&NetworkParams],
        rollout_len: usize,
    ) -> Result<(TrajectoryBatch, Vec<EpisodeSummary>)> {
        if chains.is_empty() {
            return Err(Error::InvalidInput("no chains to act with".into()));
        }
        let mut batch = TrajectoryBatch {
            transitions: Vec::with_capacity(rollout_len),
            targets: Vec::new(),
            source_chain: 0,
        };
        let mut episodes = Vec::new();
        for t in 0..rollout_len {
            if self.since_draw == 0 {
                self.acting = self.act_rng.random_range(0..chains.len());
            }
            if t == 0 {
                batch.source_chain = self.acting;
            }
            self.since_draw = (self.since_draw + 1) % self.resample_every;

            let params = chains[self.acting];
            let cache = self.cache.get_or_insert_with(|| ForwardCache::new(params.architecture()));
            forward_into(params, &self.obs, cache)?;
            let action = greedy_action(cache.q_values());

            let (next, res) = self.env.step(&self.state, action, &mut self.env_rng)?;
            self.ep_return += res.reward;
            self.ep_goal |= res.reached_goal;
            let obs = std::mem::replace(&mut self.obs, res.obs);
            batch.transitions.push(Transition {
                obs,
                action,
                reward: res.reward,
                next_obs: self.obs.clone(),
                done: res.done,
                was_greedy: true,
                chain: self.acting,
            });
            if res.done {
                episodes.push(EpisodeSummary {
                    ret: self.ep_return,
                    reached_goal: self.ep_goal,
                });
                self.ep_return = 0.0;
                self.ep_goal = false;
                let (s, o) = self.env.reset(&mut self.env_rng);
                self.state = s;
                self.obs = o;
            } else {
                self.state = next;
            }
        }
        Ok((batch, episodes))
    }
}

/// One batch of Thompson-sampling interaction from a fresh episode.
pub fn thompson_act(
    chains: &[&NetworkParams],
    env: &Env,
    rollout_len: usize,
    resample_every: usize,
    rng: &mut Rng,
) -> Result<TrajectoryBatch> {
    let act = rng::stream(rng.random(), streams::ACTING);
    let env_rng = rng::stream(rng.random(), streams::ENVIRONMENT);
    let mut c = Collector::new(env.clone(), resample_every, act, env_rng)?;
    Ok(c.collect(chains, rollout_len)?.0)
}

/// Backward Watkins Q(λ) recursion over precomputed bootstrap quantities.
///
/// `next_max[t] = max_a Q(s_{t+1}, a)`; `next_greedy[t]` says whether the
/// action taken at `t + 1` is greedy at `s_{t+1}`. Terminal steps return the
/// reward alone; the last step of a non-terminal batch bootstraps fully.
pub fn watkins_recursion(
    rewards: &[f64],
    dones: &[bool],
    next_max: &[f64],
    next_greedy: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let mut g = vec![0.0; n];
    for t in (0..n).rev() {
        g[t] = if dones[t] {
            rewards[t]
        } else if t + 1 == n {
            rewards[t] + gamma * next_max[t]
        } else {
            let lt = if next_greedy[t] { lambda } else { 0.0 };
            rewards[t] + gamma * ((1.0 - lt) * next_max[t] + lt * g[t + 1])
        };
    }
    g
}

/// Errors unless each non-terminal transition is followed by the one that
/// starts from its `next_obs`.
pub fn check_contiguous(batch: &TrajectoryBatch) -> Result<()> {
    for (t, w) in batch.transitions.windows(2).enumerate() {
        if !w[0].done && w[0].next_obs != w[1].obs {
            return Err(Error::InvalidInput(format!(
                "batch is not contiguous at transition {t}"
            )));
        }
    }
    Ok(())
}

/// Watkins Q(λ) targets with the trace cut whenever the next action is not
/// greedy under `params`.
pub fn watkins_targets(batch: &TrajectoryBatch, params: &NetworkParams, gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    check_contiguous(batch)?;
    let tr = &batch.transitions;
    let n = tr.len();
    let mut cache = ForwardCache::new(params.architecture());
    let mut next_max = vec![0.0; n];
    let mut next_greedy = vec![false; n];
    for t in 0..n {
        if tr[t].done {
            continue;
        }
        forward_into(params, &tr[t].next_obs, &mut cache)?;
        let q = cache.q_values();
        let best = greedy_action(q);
        next_max[t] = q[best];
        if t + 1 < n {
            next_greedy[t] = tr[t + 1].action == best;
        }
    }
    let rewards: Vec<f64> = tr.iter().map(|x| x.reward).collect();
    let dones: Vec<bool> = tr.iter().map(|x| x.done).collect();
    Ok(watkins_recursion(&rewards, &dones, &next_max, &next_greedy, gamma, lambda))
}

/// Mean over chains of the mean greedy-episode return.
pub fn evaluate(chains: &[&NetworkParams], env: &Env, episodes: usize, rng: &mut Rng) -> Result<f64> {
    if chains.is_empty() || episodes == 0 {
        return Err(Error::InvalidInput("evaluate needs at least one chain and one episode".into()));
    }
    let mut total = 0.0;
    for p in chains {
        let mut cache = ForwardCache::new(p.architecture());
        let mut sum = 0.0;
        for _ in 0..episodes {
            let (mut s, mut obs) = env.reset(rng);
            loop {
                forward_into(p, &obs, &mut cache)?;
                let (next, res) = env.step(&s, greedy_action(cache.q_values()), rng)?;
                sum += res.reward;
                if res.done {
                    break;
                }
                s = next;
                obs = res.obs;
            }
        }
        total += sum / episodes as f64;
    }
    Ok(total / chains.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_step: u64,
    pub episode_count: u64,
    /// Mean return over the last [`RETURN_WINDOW`] completed episodes.
    pub mean_return: f64,
    pub return_sem: f64,
    pub temperature: f64,
    pub seed: u64,
    pub chain_logpost_mean: f64,
    pub solved_flag: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    /// Per-batch log posterior of every chain, parallel to `rows`.
    pub chain_logpost: Vec<Vec<f64>>,
    /// Set when training stopped on a non-finite quantity.
    pub diverged: Option<String>,
}

impl MetricsLog {
    pub fn solved(&self) -> bool {
        self.rows.last().is_some_and(|r| r.solved_flag)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub metrics: MetricsLog,
    pub chains: Vec<ChainState<NetworkParams>>,
    /// Most recent TD errors of chain 0 (`q - target`), oldest first.
    pub td_errors: Vec<f64>,
}

struct Worker {
    chain: ChainState<NetworkParams>,
    rng: Rng,
    scratch: PotentialScratch,
    grad: Vec<f64>,
    order: Vec<usize>,
}

struct Shared<'a> {
    cfg: &'a AgentConfig,
    prior: &'a PriorSpec,
    likelihood: &'a LikelihoodSpec,
}

impl Worker {
    fn update(&mut self, batch: &TrajectoryBatch, sh: &Shared<'_>, mut td_out: Option<&mut Vec<f64>>) -> Result<f64> {
        let cfg = sh.cfg;
        let targets = watkins_targets(batch, &self.chain.params, cfg.gamma, cfg.lambda)?;
        let examples: Vec<TdExample<'_>> = batch
            .transitions
            .iter()
            .zip(&targets)
            .map(|(tr, &target)| TdExample {
                obs: &tr.obs,
                action: tr.action,
                target,
            })
            .collect();
        if let Some(out) = td_out.as_deref_mut() {
            let mut cache = ForwardCache::new(self.chain.params.architecture());
            for ex in &examples {
                forward_into(&self.chain.params, ex.obs, &mut cache)?;
                out.push(cache.q_values()[ex.action] - ex.target);
            }
        }

        let n_data = self.chain.n_data;
        let mut hyper = hyper_from_adam(cfg.sampler.beta1, cfg.sampler.beta2, cfg.sampler.learning_rate, n_data)?;
        hyper.temperature = cfg.temperature;
        hyper.precond_floor = cfg.sampler.precond_floor;
        hyper.preconditioned = cfg.sampler.preconditioned;

        let m = examples.len();
        let chunk = m.div_ceil(cfg.minibatches_per_batch);
        self.order.clear();
        self.order.extend(0..m);
        let mut mb: Vec<TdExample<'_>> = Vec::with_capacity(chunk);
        for _ in 0..cfg.epochs_per_batch {
            self.order.shuffle(&mut self.rng);
            for idx in self.order.chunks(chunk) {
                mb.clear();
                mb.extend(idx.iter().map(|&i| examples[i]));
                let scratch = &mut self.scratch;
                let grad_u = |p: &NetworkParams, g: &mut [f64]| {
                    rescaled_batch_potential_into(p, &mb, n_data, sh.prior, sh.likelihood, cfg.lik_grad_clip, g, scratch)
                        .map(|_| ())
                };
                ggmc_step(&mut self.chain, grad_u, &hyper, &mut self.rng)?;
            }
        }
        let u = rescaled_batch_potential_into(
            &self.chain.params,
            &examples,
            n_data,
            sh.prior,
            sh.likelihood,
            None,
            &mut self.grad,
            &mut self.scratch,
        )?;
        Ok(-u)
    }
}

fn mean_sem(xs: &VecDeque<f64>) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Initial parameters of chain `i` for a run with `seed`.
pub fn init_chain(arch: &Arc<Architecture>, seed: u64, i: usize) -> (NetworkParams, Rng) {
    let mut r = rng::stream(seed, streams::CHAIN_BASE + i as u64);
    let p = NetworkParams::init(arch.clone(), &mut r);
    (p, r)
}

/// Trains with priors/likelihoods resolved from `cfg` (flow checkpoint paths
/// relative to `base_dir`).
pub fn train_config(env: &Env, cfg: &AgentConfig, base_dir: &Path) -> Result<TrainOutcome> {
    let prior = cfg.prior.resolve(base_dir)?;
    let likelihood = cfg.likelihood.resolve(base_dir)?;
    train(env, cfg, &prior, &likelihood)
}

/// Runs the full loop for `cfg.total_env_steps` environment steps. A
/// divergence stops training and is reported in `metrics.diverged`.
pub fn train(env: &Env, cfg: &AgentConfig, prior: &PriorSpec, likelihood: &LikelihoodSpec) -> Result<TrainOutcome> {
    cfg.validate()?;
    prior.validate()?;
    likelihood.validate()?;
    let arch = Arc::new(cfg.architecture(env)?);
    let mut workers: Vec<Worker> = (0..cfg.ensemble_size)
        .map(|i| {
            let (p, rng) = init_chain(&arch, cfg.seed, i);
            let scratch = PotentialScratch::new(&p);
            let grad = vec![0.0; p.len()];
            Worker {
                chain: ChainState::new(p),
                rng,
                scratch,
                grad,
                order: Vec::new(),
            }
        })
        .collect();
    let mut collector = Collector::new(
        env.clone(),
        cfg.resample_period(),
        rng::stream(cfg.seed, streams::ACTING),
        rng::stream(cfg.seed, streams::ENVIRONMENT),
    )?;
    let shared = Shared { cfg, prior, likelihood };

    let mut log = MetricsLog::default();
    let mut returns: VecDeque<f64> = VecDeque::with_capacity(RETURN_WINDOW);
    let mut episode_count = 0u64;
    let mut env_step = 0u64;
    let mut td_ring: VecDeque<f64> = VecDeque::with_capacity(cfg.td_dump_size);

    while env_step < cfg.total_env_steps {
        let m = (cfg.total_env_steps - env_step).min(cfg.rollout_len as u64) as usize;
        let (batch, episodes) = {
            let params: Vec<&NetworkParams> = workers.iter().map(|w| &w.chain.params).collect();
            collector.collect(&params, m)?
        };
        env_step += m as u64;
        for e in &episodes {
            if returns.len() == RETURN_WINDOW {
                returns.pop_front();
            }
            returns.push_back(e.ret);
        }
        episode_count += episodes.len() as u64;

        let want_td = cfg.td_dump_size > 0;
        let results: Vec<(Result<f64>, Vec<f64>)> = workers
            .par_iter_mut()
            .enumerate()
            .map(|(i, w)| {
                w.chain.observe(m as u64);
                let mut td = Vec::new();
                let r = w.update(&batch, &shared, (i == 0 && want_td).then_some(&mut td));
                (r, td)
            })
            .collect();

        let mut logpost = Vec::with_capacity(results.len());
        for (r, td) in results {
            match r {
                Ok(lp) => logpost.push(lp),
                Err(e @ (Error::Divergence(_) | Error::NonFinite(_))) => {
                    log.diverged = Some(format!("at env step {env_step}: {e}"));
                    break;
                }
                Err(e) => return Err(e),
            }
            for x in td {
                if td_ring.len() == cfg.td_dump_size {
                    td_ring.pop_front();
                }
                td_ring.push_back(x);
            }
        }
        if log.diverged.is_some() {
            break;
        }

        let (mean_return, return_sem) = mean_sem(&returns);
        log.rows.push(MetricsRow {
            env_step,
            episode_count,
            mean_return,
            return_sem,
            temperature: cfg.temperature,
            seed: cfg.seed,
            chain_logpost_mean: logpost.iter().sum::<f64>() / logpost.len() as f64,
            solved_flag: returns.len() == RETURN_WINDOW && mean_return > SOLVE_THRESHOLD,
        });
        log.chain_logpost.push(logpost);
    }

    Ok(TrainOutcome {
        metrics: log,
        chains: workers.into_iter().map(|w| w.chain).collect(),
        td_errors: td_ring.into(),
    })
}
