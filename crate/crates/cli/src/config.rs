//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use bql::agent::AgentConfig;
use bql::env::{Env, EnvSpec};
use bql::likelihood::LikelihoodConfig;
use bql::prior::PriorConfig;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const CONFIG_VERSION: &str = "v1";

/// One training run: environment, agent, and where to put the results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: String,
    pub env: EnvSpec,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_run_id")]
    pub run_id: String,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_run_id() -> String {
    "run".to_string()
}

impl ExperimentConfig {
    pub fn new(env: EnvSpec, agent: AgentConfig) -> Self {
        Self {
            version: CONFIG_VERSION.to_string(),
            env,
            agent,
            output_dir: default_output_dir(),
            run_id: default_run_id(),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Usage(anyhow!(
                "unsupported config version {:?} (expected {CONFIG_VERSION:?})",
                self.version
            )));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(CliError::Usage(anyhow!("run_id must be a non-empty file name, got {:?}", self.run_id)));
        }
        self.env.validate()?;
        self.agent.validate()?;
        Env::new(self.env.clone())?;
        Ok(())
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Usage(anyhow!("malformed config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Rewrites flow checkpoint paths as absolute paths, so the config can be
    /// rerun from any directory (in particular from `config-as-run.json`).
    pub fn with_absolute_paths(&self, base_dir: &Path) -> CliResult<Self> {
        let abs = |p: &Path| -> CliResult<PathBuf> {
            let joined = base_dir.join(p);
            joined
                .canonicalize()
                .with_context(|| format!("flow checkpoint {} not found", joined.display()))
                .map_err(CliError::Usage)
        };
        let mut out = self.clone();
        if let PriorConfig::Flow { weights, gains, .. } = &mut out.agent.prior {
            for p in weights.iter_mut().chain(gains.iter_mut()).flatten() {
                *p = abs(p)?;
            }
        }
        if let LikelihoodConfig::Flow { path } = &mut out.agent.likelihood {
            *path = abs(path)?;
        }
        Ok(out)
    }
}

/// A config file together with the directory that relative flow paths in it
/// are resolved against.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

pub fn load(path: &Path) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(CliError::Usage)?;
    let config = ExperimentConfig::from_json(&text)
        .map_err(|e| CliError::Usage(anyhow!("{}: {e}", path.display())))?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig { config, base_dir })
}

#[cfg(test)]
mod tests {
    use super::*;
    use bql::env::RewardNoise;

    #[test]
    fn round_trip() {
        let mut agent = AgentConfig {
            temperature: 0.1,
            prior: PriorConfig::LaplaceMatched { sigma: 1.679 },
            ..AgentConfig::default()
        };
        agent.resample_every = Some(17);
        let cfg = ExperimentConfig::new(EnvSpec::chain(5, RewardNoise::Gaussian { sigma: 0.3 }), agent);
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"version":"v1","env":{"kind":"deep_sea","size":8}}"#).unwrap();
        assert_eq!(cfg.agent, AgentConfig::default());
        assert_eq!(cfg.run_id, "run");
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "{",
            r#"{"version":"v2","env":{"kind":"deep_sea","size":8}}"#,
            r#"{"version":"v1","env":{"kind":"deep_sea","size":1}}"#,
            r#"{"version":"v1","env":{"kind":"deep_sea","size":8},"agent":{"gamma":1.5}}"#,
            r#"{"version":"v1","env":{"kind":"deep_sea","size":8},"agent":{"typo":1}}"#,
            r#"{"version":"v1","env":{"kind":"deep_sea","size":8},"run_id":"a/b"}"#,
        ] {
            let e = ExperimentConfig::from_json(text).unwrap_err();
            assert_eq!(e.exit_code(), crate::EXIT_USAGE, "{text}");
        }
    }
}
