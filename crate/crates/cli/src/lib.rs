//! Experiment orchestration for `bql`: configuration files, training runs and
//! sweeps, flow fitting for learned priors and likelihoods, and KS audits of
//! TD-error dumps. Every command writes plain CSV and JSON.

pub mod config;
pub mod fit;
pub mod ks;
pub mod output;
pub mod sweep;
pub mod train;

use std::fmt;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// A command failure, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, malformed or invalid configuration, unusable input data.
    Usage(anyhow::Error),
    /// Training produced non-finite values. Partial outputs are kept.
    Diverged(String),
    /// Anything else (for example a failed write).
    Failure(anyhow::Error),
}

impl CliError {
    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        CliError::Usage(e.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "{e:#}"),
            CliError::Diverged(m) => write!(f, "run diverged: {m}"),
            CliError::Failure(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failure(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.into())
    }
}

/// Library errors from user-supplied data or configuration are usage errors;
/// numeric blow-ups are divergence.
impl From<bql::Error> for CliError {
    fn from(e: bql::Error) -> Self {
        match e {
            bql::Error::Divergence(m) => CliError::Diverged(m),
            bql::Error::Io(e) => CliError::Failure(e.into()),
            other => CliError::Usage(other.into()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Worker pool capped by `BQL_THREADS` when set.
pub fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("BQL_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(anyhow::anyhow!("BQL_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Usage(anyhow::anyhow!("BQL_THREADS must be at least 1")));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Failure(e.into()))
}
