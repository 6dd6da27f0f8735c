//! Service configuration.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! fixtures = "fixtures/cascade.jsonl"   # omit for the live rule-based backends
//! regime = "multimodal"
//!
//! [routing]
//! tau_low = 0.30
//! tau_high = 0.70
//! text_trigger = true
//! ```
//!
//! `MODCASCADE_LISTEN` and `MODCASCADE_FIXTURES` override the file.

use std::path::{Path, PathBuf};

use modcascade::adapters::replay::{load_replay, ReplayError};
use modcascade::adapters::synthetic::synthetic_live_backends;
use modcascade::adapters::BackendSet;
use modcascade::{Regime, RoutingConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_LISTEN: &str = "MODCASCADE_LISTEN";
pub const ENV_FIXTURES: &str = "MODCASCADE_FIXTURES";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("loading fixtures `{path}`: {source}")]
    Fixtures {
        path: PathBuf,
        #[source]
        source: ReplayError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Replay fixture file. Absent means live mode.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default = "default_regime")]
    pub regime: Regime,
    #[serde(default)]
    pub routing: RoutingConfig,
}

fn default_listen() -> String {
    DEFAULT_LISTEN.to_string()
}

fn default_regime() -> Regime {
    Regime::Multimodal
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            fixtures: None,
            regime: default_regime(),
            routing: RoutingConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.routing
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies overrides from `lookup` (normally `std::env::var`).
    pub fn with_overrides<F>(mut self, lookup: F) -> Self
    where
        F: Fn(&str) -> Option<String>,
    {
        if let Some(listen) = lookup(ENV_LISTEN).filter(|s| !s.is_empty()) {
            self.listen = listen;
        }
        if let Some(fixtures) = lookup(ENV_FIXTURES).filter(|s| !s.is_empty()) {
            self.fixtures = Some(fixtures.into());
        }
        self
    }

    pub fn with_env(self) -> Self {
        self.with_overrides(|k| std::env::var(k).ok())
    }

    pub fn backends(&self) -> Result<BackendSet, ConfigError> {
        match &self.fixtures {
            Some(path) => {
                load_replay(path)
                    .map(|r| r.backends())
                    .map_err(|source| ConfigError::Fixtures {
                        path: path.clone(),
                        source,
                    })
            }
            None => Ok(synthetic_live_backends()),
        }
    }
}
