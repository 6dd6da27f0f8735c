//! Model-backend contracts for the cascade.
//!
//! Four backends make up a moderation stack: an image classifier and an
//! object detector (the visual screening stage), and an OCR engine plus a
//! text-only reasoner (the confirmation stage). Each contract is a trait so
//! real engines can be plugged in; this crate ships deterministic replay
//! backends ([`replay`]) and rule-based synthetic ones ([`synthetic`]).
//!
//! All backends must be `Send + Sync`. Replay and synthetic backends are
//! immutable after construction. A real engine that holds mutable state can
//! wrap its instances in [`synthetic::Pool`], which serializes access per
//! pooled instance.

pub mod instrument;
pub mod replay;
pub mod synthetic;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::ReasonerInput;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("unknown image `{0}`")]
    UnknownImage(String),
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("malformed reasoner response: {0}")]
    MalformedResponse(String),
}

/// Reference to one image. Replay backends resolve by `id` and ignore the
/// payload; live backends read the payload bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub id: String,
    pub payload: Option<Vec<u8>>,
}

impl ImageRef {
    pub fn id(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            payload: None,
        }
    }

    pub fn with_payload(id: impl Into<String>, payload: Vec<u8>) -> Self {
        Self {
            id: id.into(),
            payload: Some(payload),
        }
    }
}

/// Binary safety label. `Unsafe` is the positive class throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Safe,
    Unsafe,
}

impl Verdict {
    pub fn is_unsafe(self) -> bool {
        matches!(self, Verdict::Unsafe)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Safe => "safe",
            Verdict::Unsafe => "unsafe",
        }
    }

    /// Case-insensitive parse of `safe` / `unsafe`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "safe" => Some(Verdict::Safe),
            "unsafe" => Some(Verdict::Unsafe),
            _ => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Moderation action attached to a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    Block,
    Review,
    AllowWithWarning,
    Allow,
}

impl Recommendation {
    pub fn as_str(self) -> &'static str {
        match self {
            Recommendation::Block => "block",
            Recommendation::Review => "review",
            Recommendation::AllowWithWarning => "allow_with_warning",
            Recommendation::Allow => "allow",
        }
    }

    /// Accepts `block`, `review`, `allow with warning` (any of space, dash or
    /// underscore as separator) and `allow`.
    pub fn parse(s: &str) -> Option<Self> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == '-' || c == ' ' { '_' } else { c })
            .collect();
        match norm.as_str() {
            "block" => Some(Recommendation::Block),
            "review" => Some(Recommendation::Review),
            "allow_with_warning" => Some(Recommendation::AllowWithWarning),
            "allow" => Some(Recommendation::Allow),
            _ => None,
        }
    }

    /// Whether this action is admissible alongside `verdict`.
    pub fn consistent_with(self, verdict: Verdict) -> bool {
        match verdict {
            Verdict::Unsafe => matches!(self, Recommendation::Block | Recommendation::Review),
            Verdict::Safe => matches!(
                self,
                Recommendation::Allow | Recommendation::AllowWithWarning | Recommendation::Review
            ),
        }
    }
}

impl fmt::Display for Recommendation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned box in normalized `[0, 1]` image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords
            .iter()
            .any(|c| !c.is_finite() || !(0.0..=1.0).contains(c))
        {
            return Err(format!("box {coords:?} outside normalized [0,1] range"));
        }
        if self.x_min > self.x_max {
            return Err(format!("box x_min {} > x_max {}", self.x_min, self.x_max));
        }
        if self.y_min > self.y_max {
            return Err(format!("box y_min {} > y_max {}", self.y_min, self.y_max));
        }
        Ok(())
    }
}

impl From<[f64; 4]> for BBox {
    fn from(c: [f64; 4]) -> Self {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

fn check_unit(name: &str, v: f64) -> Result<(), String> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} {v} outside [0,1]"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOutput {
    /// Probability that the image is unsafe.
    pub probability: f64,
}

impl ClassifierOutput {
    pub fn new(probability: f64) -> Result<Self, String> {
        check_unit("probability", probability)?;
        Ok(Self { probability })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl Detection {
    pub fn new(label: impl Into<String>, confidence: f64, bbox: BBox) -> Self {
        Self {
            label: label.into(),
            confidence,
            bbox,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        check_unit("confidence", self.confidence)?;
        self.bbox.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrSpan {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl OcrSpan {
    pub fn new(text: impl Into<String>, bbox: BBox) -> Self {
        Self {
            text: text.into(),
            bbox,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("OCR span text is empty".into());
        }
        self.bbox.validate()
    }
}

/// Reading order for OCR output: by `(y_min, x_min)`, stable for ties.
pub fn sort_spans(spans: &mut [OcrSpan]) {
    spans.sort_by(|a, b| {
        a.bbox
            .y_min
            .total_cmp(&b.bbox.y_min)
            .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
    });
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerVerdict {
    pub verdict: Verdict,
    pub analysis: String,
    pub recommendation: Recommendation,
}

impl ReasonerVerdict {
    pub fn new(
        verdict: Verdict,
        analysis: impl Into<String>,
        recommendation: Recommendation,
    ) -> Result<Self, String> {
        let v = Self {
            verdict,
            analysis: analysis.into(),
            recommendation,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.analysis.trim().is_empty() {
            return Err("reasoner analysis is empty".into());
        }
        if !self.recommendation.consistent_with(self.verdict) {
            return Err(format!(
                "recommendation `{}` is inconsistent with verdict `{}`",
                self.recommendation, self.verdict
            ));
        }
        Ok(())
    }

    /// Parses the structured reply of a text reasoner:
    ///
    /// ```text
    /// Verdict: Unsafe
    /// Analysis: explicit invitation text
    /// Recommendation: Block
    /// ```
    ///
    /// Field order is free and keys are case-insensitive. Analysis may span
    /// several lines; continuation lines are joined with a space.
    pub fn parse_response(text: &str) -> Result<Self, BackendError> {
        let malformed = |m: String| BackendError::MalformedResponse(m);
        let mut verdict = None;
        let mut analysis: Option<String> = None;
        let mut recommendation = None;
        let mut in_analysis = false;
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let field = trimmed
                .split_once(':')
                .map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim()));
            match field {
                Some((key, value)) if key == "verdict" => {
                    in_analysis = false;
                    verdict = Some(
                        Verdict::parse(value)
                            .ok_or_else(|| malformed(format!("unknown verdict `{value}`")))?,
                    );
                }
                Some((key, value)) if key == "recommendation" => {
                    in_analysis = false;
                    recommendation =
                        Some(Recommendation::parse(value).ok_or_else(|| {
                            malformed(format!("unknown recommendation `{value}`"))
                        })?);
                }
                Some((key, value)) if key == "analysis" => {
                    in_analysis = true;
                    analysis = Some(value.to_string());
                }
                _ if in_analysis => {
                    let a = analysis.get_or_insert_with(String::new);
                    if !a.is_empty() {
                        a.push(' ');
                    }
                    a.push_str(trimmed);
                }
                _ => return Err(malformed(format!("unexpected line `{trimmed}`"))),
            }
        }
        let verdict = verdict.ok_or_else(|| malformed("missing `Verdict:` field".into()))?;
        let analysis = analysis.ok_or_else(|| malformed("missing `Analysis:` field".into()))?;
        let recommendation =
            recommendation.ok_or_else(|| malformed("missing `Recommendation:` field".into()))?;
        Self::new(verdict, analysis, recommendation).map_err(malformed)
    }

    /// Inverse of [`ReasonerVerdict::parse_response`].
    pub fn to_response(&self) -> String {
        let rec = match self.recommendation {
            Recommendation::Block => "Block",
            Recommendation::Review => "Review",
            Recommendation::AllowWithWarning => "Allow with warning",
            Recommendation::Allow => "Allow",
        };
        let verdict = match self.verdict {
            Verdict::Safe => "Safe",
            Verdict::Unsafe => "Unsafe",
        };
        format!(
            "Verdict: {verdict}\nAnalysis: {}\nRecommendation: {rec}\n",
            self.analysis
        )
    }
}

pub trait Classifier: Send + Sync {
    fn classify(&self, image: &ImageRef) -> Result<ClassifierOutput, BackendError>;
}

pub trait Detector: Send + Sync {
    fn detect(&self, image: &ImageRef) -> Result<Vec<Detection>, BackendError>;
}

/// OCR engine. Implementations must return spans in reading order; use
/// [`sort_spans`].
pub trait TextExtractor: Send + Sync {
    fn extract_text(&self, image: &ImageRef) -> Result<Vec<OcrSpan>, BackendError>;
}

/// Text-only reasoner. Its input type carries no binary field, so image
/// bytes cannot reach it.
pub trait Reasoner: Send + Sync {
    fn reason(&self, input: &ReasonerInput) -> Result<ReasonerVerdict, BackendError>;
}

/// Whether a backend set resolves images by id (replay) or reads bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Replay,
    Live,
}

/// The four backends of one moderation stack. OCR and reasoner are optional
/// so a vision-only stack can be expressed; running the multimodal cascade
/// without them is an error.
#[derive(Clone)]
pub struct BackendSet {
    pub classifier: Arc<dyn Classifier>,
    pub detector: Arc<dyn Detector>,
    pub ocr: Option<Arc<dyn TextExtractor>>,
    pub reasoner: Option<Arc<dyn Reasoner>>,
    pub mode: BackendMode,
}

impl BackendSet {
    pub fn vision_only(classifier: Arc<dyn Classifier>, detector: Arc<dyn Detector>) -> Self {
        Self {
            classifier,
            detector,
            ocr: None,
            reasoner: None,
            mode: BackendMode::Replay,
        }
    }

    pub fn with_ocr(mut self, ocr: Arc<dyn TextExtractor>) -> Self {
        self.ocr = Some(ocr);
        self
    }

    pub fn with_reasoner(mut self, reasoner: Arc<dyn Reasoner>) -> Self {
        self.reasoner = Some(reasoner);
        self
    }

    pub fn with_mode(mut self, mode: BackendMode) -> Self {
        self.mode = mode;
        self
    }

    /// Names of the components that are not configured.
    pub fn missing_components(&self) -> Vec<&'static str> {
        let mut missing = Vec::new();
        if self.ocr.is_none() {
            missing.push("ocr");
        }
        if self.reasoner.is_none() {
            missing.push("reasoner");
        }
        missing
    }
}

impl fmt::Debug for BackendSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendSet")
            .field("ocr", &self.ocr.is_some())
            .field("reasoner", &self.reasoner.is_some())
            .field("mode", &self.mode)
            .finish()
    }
}
