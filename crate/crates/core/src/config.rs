//! Run configuration: one TOML file with `[sim]`, `[search]`, `[net]` and
//! `[train]` sections. Missing keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcts::SearchConfig;
use crate::net::NetConfig;
use crate::sim::SimConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub search: SearchConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// The reduced setting used for single-machine experiments: 100-step
    /// episodes and narrow networks.
    pub fn desk() -> Self {
        RunConfig {
            sim: SimConfig::desk(),
            net: NetConfig::desk(),
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.search
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(ConfigError::Invalid)?;
        if self.net.hidden == 0 || self.net.latent == 0 || self.net.action_embed == 0 {
            return Err(ConfigError::Invalid(
                "network widths must be positive".into(),
            ));
        }
        Ok(())
    }
}
