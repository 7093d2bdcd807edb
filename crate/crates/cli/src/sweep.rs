//! `bql sweep`: the cartesian product of one or more axes times a number of
//! seeds, with a per-cell solve-rate summary.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use bql::prior::{PriorConfig, DEFAULT_PRIOR_SIGMA};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, LoadedConfig};
use crate::train::{run_into, RunSummary};
use crate::{thread_pool, CliError, CliResult};

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Temperature,
    PriorKind,
    EnvSize,
}

impl Axis {
    pub fn parse(name: &str) -> CliResult<Self> {
        match name {
            "temperature" => Ok(Axis::Temperature),
            "prior_kind" => Ok(Axis::PriorKind),
            "env_size" => Ok(Axis::EnvSize),
            other => Err(CliError::Usage(anyhow!(
                "unknown sweep axis {other:?} (expected temperature, prior_kind or env_size)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Temperature => "temperature",
            Axis::PriorKind => "prior_kind",
            Axis::EnvSize => "env_size",
        }
    }

    /// Sets this axis to `value` in `cfg`.
    pub fn apply(self, cfg: &mut ExperimentConfig, value: &str) -> CliResult<()> {
        let bad = |what: &str| CliError::Usage(anyhow!("bad {} value {value:?}: {what}", self.name()));
        match self {
            Axis::Temperature => {
                let t: f64 = value.parse().map_err(|_| bad("not a number"))?;
                cfg.agent.temperature = t;
            }
            Axis::EnvSize => {
                cfg.env.size = value.parse().map_err(|_| bad("not a positive integer"))?;
            }
            Axis::PriorKind => {
                let sigma = match &cfg.agent.prior {
                    PriorConfig::Gaussian { sigma } | PriorConfig::LaplaceMatched { sigma } => *sigma,
                    PriorConfig::Laplace { b } => b * std::f64::consts::SQRT_2,
                    PriorConfig::Flow { fallback_sigma, .. } => *fallback_sigma,
                    PriorConfig::Flat => DEFAULT_PRIOR_SIGMA,
                };
                cfg.agent.prior = match value {
                    "gaussian" => PriorConfig::Gaussian { sigma },
                    "laplace" => PriorConfig::LaplaceMatched { sigma },
                    "flat" => PriorConfig::Flat,
                    "flow" if matches!(cfg.agent.prior, PriorConfig::Flow { .. }) => cfg.agent.prior.clone(),
                    "flow" => return Err(bad("the base config must already name flow checkpoints")),
                    _ => return Err(bad("expected gaussian, laplace, flat or flow")),
                };
            }
        }
        cfg.validate()
    }
}

/// Axes with their values, plus the number of seeds per cell.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub axes: Vec<(Axis, Vec<String>)>,
    pub seeds: u64,
}

impl SweepSpec {
    /// Pairs each `--axis` with the `--values` list at the same position.
    pub fn parse(axes: &[String], values: &[String], seeds: u64) -> CliResult<Self> {
        if axes.is_empty() || axes.len() != values.len() {
            return Err(CliError::Usage(anyhow!(
                "give one --values list per --axis (got {} axes, {} value lists)",
                axes.len(),
                values.len()
            )));
        }
        if seeds == 0 {
            return Err(CliError::Usage(anyhow!("--seeds must be at least 1")));
        }
        let mut out = Vec::new();
        for (a, v) in axes.iter().zip(values) {
            let axis = Axis::parse(a)?;
            if out.iter().any(|(b, _)| *b == axis) {
                return Err(CliError::Usage(anyhow!("axis {a} given twice")));
            }
            let vals: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            if vals.is_empty() {
                return Err(CliError::Usage(anyhow!("axis {a} has no values")));
            }
            out.push((axis, vals));
        }
        Ok(Self { axes: out, seeds })
    }

    /// All value combinations, first axis varying slowest.
    pub fn cells(&self) -> Vec<Vec<String>> {
        let mut cells = vec![Vec::new()];
        for (_, vals) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    vals.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push(v.clone());
                        c
                    })
                })
                .collect();
        }
        cells
    }

    fn label(&self, cell: &[String]) -> String {
        self.axes
            .iter()
            .zip(cell)
            .map(|((a, _), v)| format!("{}={v}", a.name()))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Standard error of a solve rate over `n` independent seeds.
pub fn solve_rate_sem(solved: usize, n: usize) -> f64 {
    let p = solved as f64 / n as f64;
    (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub values: Vec<String>,
    pub n_seeds: usize,
    pub n_solved: usize,
    pub n_diverged: usize,
    pub solve_rate: f64,
    pub solve_rate_sem: f64,
    /// Mean over seeds of the last logged windowed return (NaN if none).
    pub mean_final_return: f64,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub root: PathBuf,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunSummary>,
}

/// Runs every cell and seed, then writes `summary.csv` under
/// `output_dir/run_id`. Seeds are `agent.seed, agent.seed + 1, ...`.
pub fn cmd_sweep(loaded: &LoadedConfig, spec: &SweepSpec, out: Option<&Path>) -> CliResult<SweepOutcome> {
    let mut base = loaded.config.with_absolute_paths(&loaded.base_dir)?;
    if let Some(o) = out {
        base.output_dir = o.to_path_buf();
    }
    let root = base.output_dir.join(&base.run_id);
    let cells = spec.cells();
    let mut jobs = Vec::new();
    for cell in &cells {
        let mut cfg = base.clone();
        for ((axis, _), v) in spec.axes.iter().zip(cell) {
            axis.apply(&mut cfg, v)?;
        }
        for k in 0..spec.seeds {
            let mut c = cfg.clone();
            c.agent.seed = base.agent.seed + k;
            let dir = root.join(spec.label(cell)).join(format!("seed={}", c.agent.seed));
            jobs.push((c, dir));
        }
    }

    let pool = thread_pool()?;
    let results: Vec<CliResult<RunSummary>> =
        pool.install(|| jobs.par_iter().map(|(c, dir)| run_into(c, &loaded.base_dir, dir)).collect());
    let runs = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let per = spec.seeds as usize;
    let summaries: Vec<CellSummary> = cells
        .iter()
        .zip(runs.chunks(per))
        .map(|(cell, rs)| {
            let n_solved = rs.iter().filter(|r| r.solved()).count();
            let finals: Vec<f64> = rs.iter().filter_map(RunSummary::final_return).collect();
            CellSummary {
                values: cell.clone(),
                n_seeds: rs.len(),
                n_solved,
                n_diverged: rs.iter().filter(|r| r.metrics.diverged.is_some()).count(),
                solve_rate: n_solved as f64 / rs.len() as f64,
                solve_rate_sem: solve_rate_sem(n_solved, rs.len()),
                mean_final_return: if finals.is_empty() {
                    f64::NAN
                } else {
                    finals.iter().sum::<f64>() / finals.len() as f64
                },
            }
        })
        .collect();
    write_summary(&root.join(SUMMARY_FILE), spec, &summaries)?;

    let diverged: Vec<String> = runs
        .iter()
        .filter_map(|r| r.metrics.diverged.as_ref().map(|m| format!("{}: {m}", r.run_dir.display())))
        .collect();
    if !diverged.is_empty() {
        return Err(CliError::Diverged(diverged.join("; ")));
    }
    Ok(SweepOutcome {
        root,
        cells: summaries,
        runs,
    })
}

fn write_summary(path: &Path, spec: &SweepSpec, cells: &[CellSummary]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Failure(e.into()))?;
    let mut header: Vec<String> = spec.axes.iter().map(|(a, _)| a.name().to_string()).collect();
    header.extend(
        ["n_seeds", "n_solved", "solve_rate", "solve_rate_sem", "n_diverged", "mean_final_return"].map(String::from),
    );
    w.write_record(&header).map_err(|e| CliError::Failure(e.into()))?;
    for c in cells {
        let mut rec = c.values.clone();
        rec.extend([
            c.n_seeds.to_string(),
            c.n_solved.to_string(),
            c.solve_rate.to_string(),
            c.solve_rate_sem.to_string(),
            c.n_diverged.to_string(),
            c.mean_final_return.to_string(),
        ]);
        w.write_record(&rec).map_err(|e| CliError::Failure(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
