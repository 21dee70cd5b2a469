//! TOML configuration shared by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{EgoDims, Stp3Collision};
use crate::gateway::EndpointConfig;
use crate::kinematics::ThresholdConfig;
use crate::pipeline::PipelineConfig;
use crate::reward::RewardConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config key {key} points to {path}, which does not exist")]
    MissingFile { key: &'static str, path: PathBuf },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub ego: EgoDims,
    #[serde(default)]
    pub stp3_collision: Stp3Collision,
}

fn default_log_level() -> String {
    "info".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default = "default_log_level")]
    pub log_level: String,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    /// Required by `annotate`.
    #[serde(default)]
    pub annotator: Option<EndpointConfig>,
    /// Required by `annotate`.
    #[serde(default)]
    pub checker: Option<EndpointConfig>,
    #[serde(default)]
    pub rewards: RewardConfig,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            log_level: default_log_level(),
            pipeline: PipelineConfig::default(),
            annotator: None,
            checker: None,
            rewards: RewardConfig::default(),
            thresholds: ThresholdConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>, key: &'static str) -> Result<(), ConfigError> {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
        if !path.exists() {
            return Err(ConfigError::MissingFile {
                key,
                path: path.clone(),
            });
        }
    }
    Ok(())
}

impl AppConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Parses `path`, resolves referenced files relative to its directory
    /// and checks that they exist.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.pipeline;
        resolve(base, &mut p.threshold_file, "pipeline.threshold_file")?;
        resolve(base, &mut p.templates.annotator, "pipeline.templates.annotator")?;
        resolve(base, &mut p.templates.logic_check, "pipeline.templates.logic_check")?;
        resolve(base, &mut p.templates.reannotate, "pipeline.templates.reannotate")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.rewards
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (name, ep) in [("annotator", &self.annotator), ("checker", &self.checker)] {
            if let Some(ep) = ep {
                ep.validate()
                    .map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))?;
            }
        }
        let ego = self.eval.ego;
        if !(ego.length > 0.0 && ego.width > 0.0) {
            return Err(ConfigError::Invalid("eval.ego dimensions must be > 0".into()));
        }
        Ok(())
    }
}
