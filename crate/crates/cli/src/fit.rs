//! `bql fit-prior` and `bql fit-likelihood`: scalar flows fitted to pooled
//! network parameters or to a TD-error dump.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use bql::flow::{fit, FitConfig, FitOutcome, FlowParams};
use bql::prior::{PriorConfig, DEFAULT_PRIOR_SIGMA};
use bql::qnet::{Checkpoint, NetworkParams};
use bql::rng;
use bql::stats::{classical_critical_005, ks_statistic, mean_std};

use crate::output::{read_json, read_td_dump, write_json, write_flow, RunCheckpoint};
use crate::{CliError, CliResult};

pub const PRIOR_REPORT_FILE: &str = "prior_fit_report.csv";
pub const PRIOR_CONFIG_FILE: &str = "prior_config.json";
pub const LIKELIHOOD_FILE: &str = "likelihood_flow.json";
pub const LIKELIHOOD_REPORT_FILE: &str = "likelihood_fit_report.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tensor {
    Weights,
    Bias,
    Gain,
    Shift,
}

/// One tensor kind in one layer, or in every layer (`layer = None`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selector {
    pub tensor: Tensor,
    pub layer: Option<usize>,
}

impl Selector {
    /// `w0`, `b2`, `g*`, ...
    pub fn parse(s: &str) -> CliResult<Self> {
        let bad = || CliError::Usage(anyhow!("bad selector {s:?}: expected w|b|g|s followed by a layer index or *"));
        let mut chars = s.chars();
        let tensor = match chars.next() {
            Some('w') => Tensor::Weights,
            Some('b') => Tensor::Bias,
            Some('g') => Tensor::Gain,
            Some('s') => Tensor::Shift,
            _ => return Err(bad()),
        };
        let rest = chars.as_str();
        let layer = if rest == "*" {
            None
        } else {
            Some(rest.parse().map_err(|_| bad())?)
        };
        Ok(Self { tensor, layer })
    }

    fn matches(&self, tensor: Tensor, layer: usize) -> bool {
        self.tensor == tensor && self.layer.is_none_or(|l| l == layer)
    }
}

/// A set of tensors pooled into one flow.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub name: String,
    pub selectors: Vec<Selector>,
}

impl Group {
    fn includes(&self, tensor: Tensor, layer: usize) -> bool {
        self.selectors.iter().any(|s| s.matches(tensor, layer))
    }

    /// File-name-safe label.
    pub fn label(&self) -> String {
        self.name.replace('+', "_").replace('*', "all")
    }
}

/// `w0,w1+w2,g*`: groups separated by commas, selectors within a group by `+`.
pub fn parse_groups(spec: &str) -> CliResult<Vec<Group>> {
    let groups: Vec<Group> = spec
        .split(',')
        .map(str::trim)
        .filter(|g| !g.is_empty())
        .map(|g| {
            Ok(Group {
                name: g.to_string(),
                selectors: g.split('+').map(|s| Selector::parse(s.trim())).collect::<CliResult<_>>()?,
            })
        })
        .collect::<CliResult<_>>()?;
    if groups.is_empty() {
        return Err(CliError::Usage(anyhow!("no parameter groups in {spec:?}")));
    }
    Ok(groups)
}

/// One group per layer's weight matrix.
pub fn per_layer_weight_groups(layers: usize) -> Vec<Group> {
    (0..layers)
        .map(|l| Group {
            name: format!("w{l}"),
            selectors: vec![Selector {
                tensor: Tensor::Weights,
                layer: Some(l),
            }],
        })
        .collect()
}

fn tensor<'a>(p: &'a NetworkParams, t: Tensor, layer: usize) -> &'a [f64] {
    match t {
        Tensor::Weights => p.weights(layer),
        Tensor::Bias => p.bias(layer),
        Tensor::Gain => p.gain(layer).unwrap_or(&[]),
        Tensor::Shift => p.shift(layer).unwrap_or(&[]),
    }
}

/// Pooled values of `group` over all `nets`.
pub fn pool(nets: &[NetworkParams], group: &Group) -> CliResult<Vec<f64>> {
    let mut out = Vec::new();
    for p in nets {
        let layers = p.architecture().layers().len();
        for s in &group.selectors {
            if let Some(l) = s.layer {
                if l >= layers {
                    return Err(CliError::Usage(anyhow!(
                        "group {} selects layer {l}, but the network has {layers} layers",
                        group.name
                    )));
                }
            }
        }
        for l in 0..layers {
            for t in [Tensor::Weights, Tensor::Bias, Tensor::Gain, Tensor::Shift] {
                if group.includes(t, l) {
                    out.extend_from_slice(tensor(p, t, l));
                }
            }
        }
    }
    Ok(out)
}

/// Networks from every file matching `pattern`, in sorted path order. A file
/// may hold a run checkpoint (all chains) or a single network checkpoint.
pub fn load_networks(pattern: &str) -> CliResult<(Vec<PathBuf>, Vec<NetworkParams>)> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| CliError::Usage(anyhow!("bad glob {pattern:?}: {e}")))?
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Failure(e.into()))?;
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(anyhow!("no checkpoint matches {pattern:?}")));
    }
    let mut nets = Vec::new();
    for p in &paths {
        let value: serde_json::Value = read_json(p)?;
        if value.get("chains").is_some() {
            let run: RunCheckpoint = serde_json::from_value(value)
                .map_err(|e| CliError::Usage(anyhow!("{}: {e}", p.display())))?;
            nets.extend(run.networks()?);
        } else {
            let ck: Checkpoint = serde_json::from_value(value)
                .map_err(|e| CliError::Usage(anyhow!("{}: {e}", p.display())))?;
            nets.push(NetworkParams::from_checkpoint(&ck)?);
        }
    }
    Ok((paths, nets))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub name: String,
    pub n: usize,
    pub nll_before: f64,
    pub nll_after: f64,
    /// KS distance between the data and the fitted flow's cdf.
    pub ks_statistic: f64,
    /// Classical 5% critical value `1.358 / sqrt(n)`.
    pub ks_critical: f64,
    pub ks_reject: bool,
    pub flow: FlowParams,
}

fn fit_one(name: &str, samples: &[f64], cfg: &FitConfig, seed: u64, stream: u64) -> CliResult<FitReport> {
    let init = FlowParams::moment_matched(samples)?;
    let FitOutcome {
        params,
        nll_before,
        nll_after,
    } = fit(samples, &init, cfg, &mut rng::stream(seed, stream))?;
    let d = ks_statistic(samples, |x| params.cdf(x));
    let c = classical_critical_005(samples.len());
    Ok(FitReport {
        name: name.to_string(),
        n: samples.len(),
        nll_before,
        nll_after,
        ks_statistic: d,
        ks_critical: c,
        ks_reject: d > c,
        flow: params,
    })
}

#[derive(Clone, Debug)]
pub struct PriorFit {
    pub checkpoints: Vec<PathBuf>,
    pub reports: Vec<FitReport>,
    pub flow_files: Vec<PathBuf>,
    pub prior_config: PriorConfig,
}

/// Fits one flow per group to the pooled parameters of all matching
/// checkpoints. Writes `flow_<group>.json` per group, a fit report, and a
/// `prior_config.json` whose paths are relative to `out_dir`.
pub fn cmd_fit_prior(
    pattern: &str,
    groups: Option<&str>,
    out_dir: &Path,
    cfg: &FitConfig,
    seed: u64,
) -> CliResult<PriorFit> {
    let (checkpoints, nets) = load_networks(pattern)?;
    let layers = nets[0].architecture().layers().len();
    let groups = match groups {
        Some(s) => parse_groups(s)?,
        None => per_layer_weight_groups(layers),
    };
    std::fs::create_dir_all(out_dir)?;
    let mut reports = Vec::new();
    let mut flow_files = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        let samples = pool(&nets, g)?;
        let r = fit_one(&g.name, &samples, cfg, seed, i as u64)?;
        let file = PathBuf::from(format!("flow_{}.json", g.label()));
        write_flow(&out_dir.join(&file), &r.flow)?;
        flow_files.push(file);
        reports.push(r);
    }
    write_reports(&out_dir.join(PRIOR_REPORT_FILE), &reports)?;

    let assign = |t: Tensor| -> Vec<Option<PathBuf>> {
        (0..layers)
            .map(|l| groups.iter().position(|g| g.includes(t, l)).map(|i| flow_files[i].clone()))
            .collect()
    };
    let prior_config = PriorConfig::Flow {
        weights: assign(Tensor::Weights),
        gains: assign(Tensor::Gain),
        fallback_sigma: DEFAULT_PRIOR_SIGMA,
    };
    write_json(&out_dir.join(PRIOR_CONFIG_FILE), &prior_config)?;
    Ok(PriorFit {
        checkpoints,
        reports,
        flow_files,
        prior_config,
    })
}

#[derive(Clone, Debug)]
pub struct LikelihoodFit {
    pub report: FitReport,
    /// NLL of the maximum-likelihood Gaussian, `½ ln(2πe σ̂²)`.
    pub gaussian_nll: f64,
    pub flow_file: PathBuf,
}

/// Fits a flow to a TD-error dump and writes it to `out` (default:
/// `likelihood_flow.json` next to the dump) with a fit report beside it.
pub fn cmd_fit_likelihood(dump: &Path, out: Option<&Path>, cfg: &FitConfig, seed: u64) -> CliResult<LikelihoodFit> {
    let xs = read_td_dump(dump)?;
    let flow_file = match out {
        Some(p) => p.to_path_buf(),
        None => dump.with_file_name(LIKELIHOOD_FILE),
    };
    let report = fit_one("td_errors", &xs, cfg, seed, 0)?;
    let (_, sd) = mean_std(&xs);
    let gaussian_nll = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sd * sd).ln();
    if let Some(dir) = flow_file.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_flow(&flow_file, &report.flow)?;
    let report_path = flow_file.with_file_name(LIKELIHOOD_REPORT_FILE);
    let mut w = csv::Writer::from_path(&report_path).map_err(|e| CliError::Failure(e.into()))?;
    w.write_record(["n", "nll_before", "nll_after", "gaussian_nll", "ks_statistic", "ks_critical", "ks_reject"])
        .map_err(|e| CliError::Failure(e.into()))?;
    w.write_record([
        report.n.to_string(),
        report.nll_before.to_string(),
        report.nll_after.to_string(),
        gaussian_nll.to_string(),
        report.ks_statistic.to_string(),
        report.ks_critical.to_string(),
        report.ks_reject.to_string(),
    ])
    .map_err(|e| CliError::Failure(e.into()))?;
    w.flush()?;
    Ok(LikelihoodFit {
        report,
        gaussian_nll,
        flow_file,
    })
}

fn write_reports(path: &Path, reports: &[FitReport]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Failure(e.into()))?;
    w.write_record(["group", "n", "nll_before", "nll_after", "ks_statistic", "ks_critical", "ks_reject"])
        .map_err(|e| CliError::Failure(e.into()))?;
    for r in reports {
        w.write_record([
            r.name.clone(),
            r.n.to_string(),
            r.nll_before.to_string(),
            r.nll_after.to_string(),
            r.ks_statistic.to_string(),
            r.ks_critical.to_string(),
            r.ks_reject.to_string(),
        ])
        .map_err(|e| CliError::Failure(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
