use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Stage1Output;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid routing config: {0}")]
pub struct ConfigError(pub String);

/// Probability band that decides when the confirmation stage runs.
///
/// Below `tau_low` an image is visually clearly safe. At or above `tau_high`
/// it is visually unsafe; the vision-only verdict also uses `tau_high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingConfig {
    pub tau_low: f64,
    pub tau_high: f64,
    /// Text presence forces the confirmation stage.
    pub text_trigger: bool,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            tau_low: 0.30,
            tau_high: 0.70,
            text_trigger: true,
        }
    }
}

impl RoutingConfig {
    pub fn new(tau_low: f64, tau_high: f64, text_trigger: bool) -> Result<Self, ConfigError> {
        let cfg = Self {
            tau_low,
            tau_high,
            text_trigger,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tau_low.is_finite() && self.tau_high.is_finite()) {
            return Err(ConfigError("thresholds must be finite".into()));
        }
        if !(0.0 <= self.tau_low && self.tau_low <= self.tau_high && self.tau_high <= 1.0) {
            return Err(ConfigError(format!(
                "need 0 <= tau_low ({}) <= tau_high ({}) <= 1",
                self.tau_low, self.tau_high
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteReason {
    ClearlySafeNoText,
    AmbiguousProbability,
    UnsafeProbability,
    TextDetected,
    /// Vision-only regime: the confirmation stage is switched off.
    Stage2Disabled,
}

impl RouteReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RouteReason::ClearlySafeNoText => "clearly_safe_no_text",
            RouteReason::AmbiguousProbability => "ambiguous_probability",
            RouteReason::UnsafeProbability => "unsafe_probability",
            RouteReason::TextDetected => "text_detected",
            RouteReason::Stage2Disabled => "stage2_disabled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub invoke_stage2: bool,
    pub reason: RouteReason,
}

impl RoutingDecision {
    pub const DISABLED: RoutingDecision = RoutingDecision {
        invoke_stage2: false,
        reason: RouteReason::Stage2Disabled,
    };
}

/// Conditional invocation policy.
///
/// Stage 2 runs when `p >= tau_low` or when text is present and the text
/// trigger is on. The reason is the highest-priority match of
/// `TextDetected > UnsafeProbability > AmbiguousProbability > ClearlySafeNoText`.
pub fn route(stage1: &Stage1Output, has_text: bool, cfg: &RoutingConfig) -> RoutingDecision {
    let p = stage1.probability;
    let reason = if has_text && cfg.text_trigger {
        RouteReason::TextDetected
    } else if p >= cfg.tau_high {
        RouteReason::UnsafeProbability
    } else if p >= cfg.tau_low {
        RouteReason::AmbiguousProbability
    } else {
        RouteReason::ClearlySafeNoText
    };
    RoutingDecision {
        invoke_stage2: reason != RouteReason::ClearlySafeNoText,
        reason,
    }
}
