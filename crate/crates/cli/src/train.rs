//! `bql train`: one run of the agent, written to `output_dir/run_id`.

use std::path::{Path, PathBuf};

use anyhow::Context;
use bql::agent::{train_config, MetricsLog};
use bql::env::Env;

use crate::config::{ExperimentConfig, LoadedConfig};
use crate::output::{write_json, write_metrics_csv, write_td_dump, RunCheckpoint};
use crate::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_AS_RUN_FILE: &str = "config-as-run.json";
pub const TD_DUMP_FILE: &str = "td_errors.txt";

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub metrics: MetricsLog,
}

impl RunSummary {
    pub fn solved(&self) -> bool {
        self.metrics.solved()
    }

    pub fn final_return(&self) -> Option<f64> {
        self.metrics.rows.last().map(|r| r.mean_return)
    }
}

/// Runs `config` into `run_dir`.
///
/// Writes `config-as-run.json` first, then the metrics and final checkpoint,
/// plus the TD dump when `td_dump_size > 0`. A diverged run still writes the
/// rows it produced and is returned normally; callers decide the exit code.
pub fn run_into(config: &ExperimentConfig, base_dir: &Path, run_dir: &Path) -> CliResult<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(run_dir).with_context(|| format!("cannot create {}", run_dir.display()))?;
    write_json(&run_dir.join(CONFIG_AS_RUN_FILE), config)?;
    let env = Env::new(config.env.clone())?;
    let out = train_config(&env, &config.agent, base_dir)?;
    write_metrics_csv(&run_dir.join(METRICS_FILE), &out.metrics.rows)?;
    let env_step = out.metrics.rows.last().map_or(0, |r| r.env_step);
    write_json(&run_dir.join(CHECKPOINT_FILE), &RunCheckpoint::from_chains(env_step, &out.chains))?;
    if config.agent.td_dump_size > 0 {
        write_td_dump(&run_dir.join(TD_DUMP_FILE), &out.td_errors)?;
    }
    Ok(RunSummary {
        run_dir: run_dir.to_path_buf(),
        metrics: out.metrics,
    })
}

/// `bql train`: optional seed and output-directory overrides, then one run.
/// Divergence becomes [`CliError::Diverged`] after the outputs are written.
pub fn cmd_train(loaded: &LoadedConfig, seed: Option<u64>, out: Option<&Path>) -> CliResult<RunSummary> {
    let mut config = loaded.config.clone();
    if let Some(s) = seed {
        config.agent.seed = s;
    }
    if let Some(o) = out {
        config.output_dir = o.to_path_buf();
    }
    let config = config.with_absolute_paths(&loaded.base_dir)?;
    let run_dir = config.output_dir.join(&config.run_id);
    let summary = run_into(&config, &loaded.base_dir, &run_dir)?;
    match &summary.metrics.diverged {
        Some(m) => Err(CliError::Diverged(m.clone())),
        None => Ok(summary),
    }
}
