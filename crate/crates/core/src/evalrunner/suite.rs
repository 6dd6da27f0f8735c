//! Suite files: which models to evaluate and how to build their runners.
//!
//! ```toml
//! schema = "modcascade.suite/v1"
//! manifest = "manifest.jsonl"
//! control_manifest = "control.jsonl"   # optional
//!
//! [routing]
//! tau_low = 0.30
//! tau_high = 0.70
//! text_trigger = true
//!
//! [[model]]
//! name = "cascade-stage1+2"
//! kind = "pipeline"
//! regime = "multimodal"
//! replay = "cascade.jsonl"
//! costs_ms = { classify = 8.0, detect = 3.7, ocr = 18.3, reason = 90.0 }
//!
//! [[model]]
//! name = "FalconsAI"
//! kind = "threshold"
//! regime = "vision_only"
//! replay = "falconsai.jsonl"
//! threshold = 0.5
//! latency_ms = 7.3
//!
//! [[delta]]
//! stage1 = "cascade-stage1"
//! full = "cascade-stage1+2"
//! ```
//!
//! Relative paths resolve against the suite file's directory. Costs and
//! latencies only apply with the fake clock; under the real clock they are
//! ignored and wall time is measured.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelEntry, PipelineRunner, ThresholdRunner};
use crate::adapters::replay::{load_replay, ReplayBackendSet, ReplayError};
use crate::adapters::synthetic::{costed_backends, StageCosts};
use crate::clock::{Clock, FakeClock, RealClock};
use crate::pipeline::{Pipeline, Regime, RoutingConfig};

pub const SUITE_SCHEMA: &str = "modcascade.suite/v1";

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("reading suite: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing suite: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid suite: {0}")]
    Invalid(String),
    #[error("loading replay `{path}`: {source}")]
    Replay {
        path: PathBuf,
        #[source]
        source: ReplayError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pipeline,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    pub regime: Regime,
    pub replay: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs_ms: Option<StageCosts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaSpec {
    pub stage1: String,
    pub full: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub schema: String,
    pub manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_manifest: Option<PathBuf>,
    #[serde(default)]
    pub routing: RoutingConfig,
    #[serde(rename = "model", default)]
    pub models: Vec<ModelSpec>,
    #[serde(rename = "delta", default)]
    pub deltas: Vec<DeltaSpec>,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Fake,
    Real,
}

impl std::str::FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fake" => Ok(ClockMode::Fake),
            "real" => Ok(ClockMode::Real),
            other => Err(format!("unknown clock `{other}` (expected fake or real)")),
        }
    }
}

impl Suite {
    pub fn new(manifest: impl Into<PathBuf>, routing: RoutingConfig) -> Self {
        Self {
            schema: SUITE_SCHEMA.to_string(),
            manifest: manifest.into(),
            control_manifest: None,
            routing,
            models: Vec::new(),
            deltas: Vec::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, SuiteError> {
        let mut suite: Suite = toml::from_str(text)?;
        suite.base_dir = base_dir.into();
        suite.validate()?;
        Ok(suite)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SuiteError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("suite serializes")
    }

    pub fn validate(&self) -> Result<(), SuiteError> {
        let invalid = |m: String| Err(SuiteError::Invalid(m));
        if self.schema != SUITE_SCHEMA {
            return invalid(format!("unsupported schema `{}`", self.schema));
        }
        self.routing
            .validate()
            .map_err(|e| SuiteError::Invalid(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        for m in &self.models {
            if m.name.trim().is_empty() {
                return invalid("model with empty name".into());
            }
            if !seen.insert(m.name.as_str()) {
                return invalid(format!("duplicate model `{}`", m.name));
            }
            match m.kind {
                ModelKind::Pipeline if m.threshold.is_some() || m.latency_ms.is_some() => {
                    return invalid(format!(
                        "`{}`: pipeline models take costs_ms, not threshold/latency_ms",
                        m.name
                    ));
                }
                ModelKind::Threshold if m.costs_ms.is_some() => {
                    return invalid(format!(
                        "`{}`: threshold models take latency_ms, not costs_ms",
                        m.name
                    ));
                }
                _ => {}
            }
            if let Some(t) = m.threshold {
                if !(0.0..=1.0).contains(&t) {
                    return invalid(format!("`{}`: threshold {t} outside [0,1]", m.name));
                }
            }
            let costs = m.costs_ms.map(|c| [c.classify, c.detect, c.ocr, c.reason]);
            if costs
                .into_iter()
                .flatten()
                .chain(m.latency_ms)
                .any(|v| !(v.is_finite() && v >= 0.0))
            {
                return invalid(format!(
                    "`{}`: costs must be finite and non-negative",
                    m.name
                ));
            }
        }
        for d in &self.deltas {
            for name in [&d.stage1, &d.full] {
                if !seen.contains(name.as_str()) {
                    return invalid(format!("delta refers to unknown model `{name}`"));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.resolve(&self.manifest)
    }

    pub fn control_manifest_path(&self) -> Option<PathBuf> {
        self.control_manifest.as_deref().map(|p| self.resolve(p))
    }

    pub fn model(&self, name: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.name == name)
    }

    /// Builds runnable entries. Each model gets its own clock, so models can
    /// be timed concurrently under the fake clock. A replay file shared by
    /// several models is loaded once.
    pub fn entries(&self, clock: ClockMode) -> Result<Vec<ModelEntry>, SuiteError> {
        let mut cache: HashMap<PathBuf, Arc<ReplayBackendSet>> = HashMap::new();
        let mut out = Vec::with_capacity(self.models.len());
        for spec in &self.models {
            let path = self.resolve(&spec.replay);
            let replay = match cache.get(&path) {
                Some(r) => r.clone(),
                None => {
                    let r = Arc::new(load_replay(&path).map_err(|source| SuiteError::Replay {
                        path: path.clone(),
                        source,
                    })?);
                    cache.insert(path.clone(), r.clone());
                    r
                }
            };
            out.push(self.entry(spec, &replay, clock));
        }
        Ok(out)
    }

    fn entry(&self, spec: &ModelSpec, replay: &ReplayBackendSet, mode: ClockMode) -> ModelEntry {
        let fake = Arc::new(FakeClock::new());
        let clock: Arc<dyn Clock> = match mode {
            ClockMode::Fake => fake.clone(),
            ClockMode::Real => Arc::new(RealClock::new()),
        };
        let runner: Arc<dyn super::ModerationRunner> = match spec.kind {
            ModelKind::Pipeline => {
                let backends = match (mode, spec.costs_ms) {
                    (ClockMode::Fake, Some(costs)) => {
                        costed_backends(&replay.backends(), fake, costs)
                    }
                    _ => replay.backends(),
                };
                Arc::new(PipelineRunner::new(Pipeline::with_clock(
                    backends,
                    self.routing,
                    clock.clone(),
                )))
            }
            ModelKind::Threshold => {
                let runner = ThresholdRunner::new(
                    Arc::new(replay.classifier()),
                    spec.threshold.unwrap_or(ThresholdRunner::DEFAULT_THRESHOLD),
                );
                Arc::new(match (mode, spec.latency_ms) {
                    (ClockMode::Fake, Some(ms)) => runner.with_cost(fake, ms),
                    _ => runner,
                })
            }
        };
        ModelEntry {
            name: spec.name.clone(),
            regime: spec.regime,
            runner,
            clock,
        }
    }
}
