//! On-disk formats: metrics CSV, run checkpoints, TD-error dumps, flows.

use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};
use bql::agent::MetricsRow;
use bql::flow::FlowParams;
use bql::qnet::{Checkpoint, NetworkParams};
use bql::sampler::ChainState;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const METRICS_COLUMNS: [&str; 8] = [
    "env_step",
    "episode_count",
    "mean_return",
    "return_sem",
    "temperature",
    "seed",
    "chain_logpost_mean",
    "solved_flag",
];

/// Writes the metrics table; the header is present even with no rows.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(METRICS_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> CliResult<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let rows = r.deserialize().collect::<Result<Vec<MetricsRow>, _>>().map_err(csv_err)?;
    Ok(rows)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Failure(e.into())
}

/// One chain of a run checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainCheckpoint {
    pub step_count: u64,
    pub n_data: u64,
    pub network: Checkpoint,
}

/// Final state of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub version: String,
    pub env_step: u64,
    pub chains: Vec<ChainCheckpoint>,
}

impl RunCheckpoint {
    pub fn from_chains(env_step: u64, chains: &[ChainState<NetworkParams>]) -> Self {
        Self {
            version: crate::config::CONFIG_VERSION.to_string(),
            env_step,
            chains: chains
                .iter()
                .map(|c| ChainCheckpoint {
                    step_count: c.step_count,
                    n_data: c.n_data,
                    network: c.params.to_checkpoint(),
                })
                .collect(),
        }
    }

    pub fn networks(&self) -> CliResult<Vec<NetworkParams>> {
        self.chains
            .iter()
            .map(|c| NetworkParams::from_checkpoint(&c.network).map_err(CliError::from))
            .collect()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failure(e.into()))?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(CliError::Usage)?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(anyhow!("{}: {e}", path.display())))
}

pub fn write_flow(path: &Path, flow: &FlowParams) -> CliResult<()> {
    write_json(path, flow)
}

/// Newline-delimited decimal floats, written with shortest round-trip digits.
pub fn write_td_dump(path: &Path, values: &[f64]) -> CliResult<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in values {
        writeln!(f, "{v}")?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a TD dump. Blank lines are skipped; anything else must parse as a
/// finite float.
pub fn read_td_dump(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read dump {}", path.display()))
        .map_err(CliError::Usage)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        let v: f64 = s
            .parse()
            .map_err(|_| CliError::Usage(anyhow!("{}:{}: not a number: {s:?}", path.display(), i + 1)))?;
        if !v.is_finite() {
            return Err(CliError::Usage(anyhow!("{}:{}: non-finite value", path.display(), i + 1)));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::Usage(anyhow!("dump {} is empty", path.display())));
    }
    Ok(out)
}
