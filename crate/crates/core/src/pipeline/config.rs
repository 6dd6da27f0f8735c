//! Routing configuration file.
//!
//! TOML with four optional keys; missing keys take the defaults shown:
//!
//! ```toml
//! tau_low = 0.30
//! tau_high = 0.70
//! text_trigger = true
//! regime = "multimodal"   # or "vision_only"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Regime, RoutingConfig};

#[derive(Debug, Error)]
pub enum PipelineConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Invalid(#[from] super::ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub tau_low: f64,
    pub tau_high: f64,
    pub text_trigger: bool,
    pub regime: Regime,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let r = RoutingConfig::default();
        Self {
            tau_low: r.tau_low,
            tau_high: r.tau_high,
            text_trigger: r.text_trigger,
            regime: Regime::Multimodal,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, PipelineConfigError> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.routing().validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn routing(&self) -> RoutingConfig {
        RoutingConfig {
            tau_low: self.tau_low,
            tau_high: self.tau_high,
            text_trigger: self.text_trigger,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = PipelineConfig::parse("tau_low = 0.2\nregime = \"vision_only\"\n").unwrap();
        assert_eq!(c.tau_low, 0.2);
        assert_eq!(c.tau_high, 0.7);
        assert_eq!(c.regime, Regime::VisionOnly);
        assert!(c.text_trigger);
    }

    #[test]
    fn invalid_band_and_unknown_key() {
        assert!(matches!(
            PipelineConfig::parse("tau_low = 0.9\ntau_high = 0.1\n"),
            Err(PipelineConfigError::Invalid(_))
        ));
        assert!(matches!(
            PipelineConfig::parse("threshold = 0.5\n"),
            Err(PipelineConfigError::Parse(_))
        ));
    }
}
