//! `bql ks`: KS tests of a TD-error dump against several families, plus Q-Q
//! tables.

use std::path::Path;

use anyhow::anyhow;
use bql::rng;
use bql::stats::{qq_points, Family, KsResult, KsTester, DEFAULT_P_LEVEL, DEFAULT_SAMPLE_SIZE, DEFAULT_SIMULATIONS};
use rand::seq::index;

use crate::output::read_td_dump;
use crate::{CliError, CliResult};

pub const KS_FILE: &str = "ks.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct KsOptions {
    pub families: Vec<Family>,
    pub reps: usize,
    /// Sample size per repetition (capped at the dump size).
    pub sample_size: usize,
    pub n_sim: usize,
    pub p_level: f64,
    pub seed: u64,
}

impl Default for KsOptions {
    fn default() -> Self {
        Self {
            families: vec![Family::Normal, Family::Logistic, Family::Laplace],
            reps: 1,
            sample_size: DEFAULT_SAMPLE_SIZE,
            n_sim: DEFAULT_SIMULATIONS,
            p_level: DEFAULT_P_LEVEL,
            seed: 0,
        }
    }
}

/// Comma-separated family names; an empty string means no families.
pub fn parse_families(s: &str) -> CliResult<Vec<Family>> {
    s.split(',')
        .map(str::trim)
        .filter(|f| !f.is_empty())
        .map(|f| f.parse::<Family>().map_err(|e| CliError::Usage(e.into())))
        .collect()
}

const SUBSAMPLE_STREAM: u64 = 1 << 20;
const CRITICAL_STREAM: u64 = 1 << 21;

/// Runs `reps` tests per family. Each repetition draws `min(sample_size, n)`
/// errors without replacement from the dump (all of them when the dump is
/// not larger than that). Writes `ks.csv` and one `qq_<family>.csv` per
/// family over the whole standardized dump.
pub fn cmd_ks(dump: &Path, out_dir: &Path, opts: &KsOptions) -> CliResult<Vec<KsResult>> {
    if opts.reps == 0 {
        return Err(CliError::Usage(anyhow!("--reps must be at least 1")));
    }
    let xs = read_td_dump(dump)?;
    let m = opts.sample_size.min(xs.len());
    std::fs::create_dir_all(out_dir)?;

    let mut tester = KsTester::new(opts.n_sim, opts.p_level);
    let mut results = Vec::new();
    for (fi, &family) in opts.families.iter().enumerate() {
        let mut crit_rng = rng::stream(opts.seed, CRITICAL_STREAM + fi as u64);
        for rep in 0..opts.reps {
            let sample: Vec<f64> = if m == xs.len() {
                xs.clone()
            } else {
                let mut r = rng::stream(opts.seed, SUBSAMPLE_STREAM + rep as u64);
                let mut idx = index::sample(&mut r, xs.len(), m).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| xs[i]).collect()
            };
            results.push(tester.test(&sample, family, &mut crit_rng)?);
        }
    }

    let mut w = csv::Writer::from_path(out_dir.join(KS_FILE)).map_err(|e| CliError::Failure(e.into()))?;
    w.write_record(["family", "n", "D", "critical", "reject"])
        .map_err(|e| CliError::Failure(e.into()))?;
    for r in &results {
        w.write_record([
            r.family.name().to_string(),
            r.n.to_string(),
            r.statistic.to_string(),
            r.critical_value.to_string(),
            r.reject.to_string(),
        ])
        .map_err(|e| CliError::Failure(e.into()))?;
    }
    w.flush()?;

    for &family in &opts.families {
        let path = out_dir.join(format!("qq_{}.csv", family.name()));
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Failure(e.into()))?;
        w.write_record(["theoretical_q", "sample_q"]).map_err(|e| CliError::Failure(e.into()))?;
        for (t, s) in qq_points(&xs, family, true) {
            w.write_record([t.to_string(), s.to_string()]).map_err(|e| CliError::Failure(e.into()))?;
        }
        w.flush()?;
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_lists() {
        assert_eq!(parse_families("").unwrap(), vec![]);
        assert_eq!(parse_families("normal, laplace").unwrap(), vec![Family::Normal, Family::Laplace]);
        assert_eq!(parse_families("cauchy").unwrap_err().exit_code(), crate::EXIT_USAGE);
    }
}
