//! The cascade engine.
//!
//! Stage 1 (classifier + detector) runs on every image. In the multimodal
//! regime an OCR probe follows, the routing policy decides whether the
//! text-only reasoner runs, and when it does its verdict replaces the
//! Stage 1 verdict.

mod config;
mod payload;
mod routing;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{PipelineConfig, PipelineConfigError};
pub use payload::{build_reasoner_input, ReasonerInput, TEMPLATE_VERSION};
pub use routing::{route, ConfigError, RouteReason, RoutingConfig, RoutingDecision};

use crate::adapters::{
    BackendError, BackendSet, Detection, ImageRef, OcrSpan, ReasonerVerdict, Recommendation,
    Verdict,
};
use crate::clock::{elapsed_ms, Clock, RealClock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    VisionOnly,
    Multimodal,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::VisionOnly => "vision_only",
            Regime::Multimodal => "multimodal",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "vision_only" | "vision" | "1" => Ok(Regime::VisionOnly),
            "multimodal" | "2" => Ok(Regime::Multimodal),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    TextProbe,
    Stage2,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Stage1 => "stage1",
            Stage::TextProbe => "text_probe",
            Stage::Stage2 => "stage2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("backend `{0}` is required for the multimodal regime but not configured")]
    MissingBackend(&'static str),
    #[error("contract violation: {0}")]
    ContractViolation(String),
}

impl PipelineError {
    fn at(stage: Stage) -> impl Fn(BackendError) -> PipelineError {
        move |source| PipelineError::Backend { stage, source }
    }

    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            PipelineError::Backend { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Output {
    pub probability: f64,
    pub detections: Vec<Detection>,
    pub elapsed_ms: f64,
}

/// Per-component wall time of one moderation call, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub stage1_ms: f64,
    pub ocr_ms: f64,
    pub reasoner_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationDecision {
    pub image_id: String,
    pub regime: Regime,
    pub final_verdict: Verdict,
    pub recommendation: Recommendation,
    pub routing: RoutingDecision,
    pub stage1: Stage1Output,
    pub stage2: Option<ReasonerVerdict>,
    pub timings: StageTimings,
    pub template_version: String,
}

impl ModerationDecision {
    pub fn total_elapsed_ms(&self) -> f64 {
        self.timings.total_ms
    }
}

/// Combines the two stages.
///
/// When the reasoner ran, its verdict and recommendation win. Otherwise the
/// image is `Unsafe`/`Block` iff `p >= tau_high`, else `Safe`/`Allow`.
pub fn fuse(
    stage1: &Stage1Output,
    routing: &RoutingDecision,
    stage2: Option<&ReasonerVerdict>,
    cfg: &RoutingConfig,
) -> Result<(Verdict, Recommendation), PipelineError> {
    match (routing.invoke_stage2, stage2) {
        (true, Some(v)) => Ok((v.verdict, v.recommendation)),
        (false, None) => Ok(if stage1.probability >= cfg.tau_high {
            (Verdict::Unsafe, Recommendation::Block)
        } else {
            (Verdict::Safe, Recommendation::Allow)
        }),
        (false, Some(_)) => Err(PipelineError::ContractViolation(
            "stage 2 verdict present but routing skipped stage 2".into(),
        )),
        (true, None) => Err(PipelineError::ContractViolation(
            "routing invoked stage 2 but no verdict was produced".into(),
        )),
    }
}

/// Cascade engine bound to one backend set and routing config. Stateless
/// between calls; share it behind an `Arc` for concurrent use.
#[derive(Clone)]
pub struct Pipeline {
    backends: BackendSet,
    config: RoutingConfig,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("backends", &self.backends)
            .field("config", &self.config)
            .finish()
    }
}

impl Pipeline {
    pub fn new(backends: BackendSet, config: RoutingConfig) -> Self {
        Self::with_clock(backends, config, Arc::new(RealClock::new()))
    }

    pub fn with_clock(backends: BackendSet, config: RoutingConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            backends,
            config,
            clock,
        }
    }

    pub fn config(&self) -> &RoutingConfig {
        &self.config
    }

    pub fn backends(&self) -> &BackendSet {
        &self.backends
    }

    /// Same engine with a different routing config.
    pub fn with_config(&self, config: RoutingConfig) -> Self {
        Self {
            config,
            ..self.clone()
        }
    }

    pub fn run_stage1(&self, image: &ImageRef) -> Result<Stage1Output, PipelineError> {
        let start = self.clock.now();
        let probability = self
            .backends
            .classifier
            .classify(image)
            .map_err(PipelineError::at(Stage::Stage1))?
            .probability;
        let detections = self
            .backends
            .detector
            .detect(image)
            .map_err(PipelineError::at(Stage::Stage1))?;
        let elapsed_ms = elapsed_ms(start, self.clock.now());
        Ok(Stage1Output {
            probability,
            detections,
            elapsed_ms,
        })
    }

    /// OCR probe. Returns the spans so the reasoner payload can reuse them.
    pub fn extract_text(&self, image: &ImageRef) -> Result<Vec<OcrSpan>, PipelineError> {
        let ocr = self
            .backends
            .ocr
            .as_ref()
            .ok_or(PipelineError::MissingBackend("ocr"))?;
        ocr.extract_text(image)
            .map_err(PipelineError::at(Stage::TextProbe))
    }

    pub fn detect_text_presence(&self, image: &ImageRef) -> Result<bool, PipelineError> {
        Ok(!self.extract_text(image)?.is_empty())
    }

    pub fn moderate(
        &self,
        image: &ImageRef,
        regime: Regime,
    ) -> Result<ModerationDecision, PipelineError> {
        let cfg = &self.config;
        let start = self.clock.now();
        let mut timings = StageTimings::default();

        if regime == Regime::Multimodal {
            if self.backends.ocr.is_none() {
                return Err(PipelineError::MissingBackend("ocr"));
            }
            if self.backends.reasoner.is_none() {
                return Err(PipelineError::MissingBackend("reasoner"));
            }
        }

        let stage1 = self.run_stage1(image)?;
        timings.stage1_ms = stage1.elapsed_ms;

        let (routing, stage2) = match regime {
            Regime::VisionOnly => (RoutingDecision::DISABLED, None),
            Regime::Multimodal => {
                // Without the text trigger, spans only matter once Stage 2 is
                // already warranted by the probability.
                let probe = cfg.text_trigger || stage1.probability >= cfg.tau_low;
                let spans = if probe {
                    let t = self.clock.now();
                    let spans = self.extract_text(image)?;
                    timings.ocr_ms = elapsed_ms(t, self.clock.now());
                    spans
                } else {
                    Vec::new()
                };
                let routing = route(&stage1, !spans.is_empty(), cfg);
                let stage2 = if routing.invoke_stage2 {
                    let input = build_reasoner_input(&stage1, &spans);
                    let reasoner = self
                        .backends
                        .reasoner
                        .as_ref()
                        .ok_or(PipelineError::MissingBackend("reasoner"))?;
                    let t = self.clock.now();
                    let verdict = reasoner
                        .reason(&input)
                        .map_err(PipelineError::at(Stage::Stage2))?;
                    timings.reasoner_ms = elapsed_ms(t, self.clock.now());
                    verdict.validate().map_err(|m| {
                        PipelineError::at(Stage::Stage2)(BackendError::MalformedResponse(m))
                    })?;
                    Some(verdict)
                } else {
                    None
                };
                (routing, stage2)
            }
        };

        let (final_verdict, recommendation) = fuse(&stage1, &routing, stage2.as_ref(), cfg)?;
        timings.total_ms = elapsed_ms(start, self.clock.now());
        Ok(ModerationDecision {
            image_id: image.id.clone(),
            regime,
            final_verdict,
            recommendation,
            routing,
            stage1,
            stage2,
            timings,
            template_version: TEMPLATE_VERSION.to_string(),
        })
    }
}
