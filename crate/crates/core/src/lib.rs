//! Tempered Bayesian deep Q-learning.
//!
//! A Q-network ensemble is trained by stochastic-gradient MCMC over a tempered
//! posterior, with Watkins Q(λ) targets and Thompson-sampling exploration. The
//! crate also provides the Deep Sea and stochastic chain environments, scalar
//! normalizing flows for learned priors and likelihoods, and Lilliefors-style
//! KS tests for TD-error diagnostics.

pub mod error;
pub mod rng;
pub mod qnet;
pub mod env;
pub mod flow;
pub mod stats;
pub mod prior;
pub mod likelihood;
pub mod sampler;
pub mod agent;

pub use error::{Error, Result};
