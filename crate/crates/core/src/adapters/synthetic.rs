//! Rule-based backends, cost-injecting wrappers, and the extension point for
//! real engines.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{
    sort_spans, BackendError, BackendMode, BackendSet, Classifier, ClassifierOutput, Detection,
    Detector, ImageRef, OcrSpan, Reasoner, ReasonerVerdict, Recommendation, TextExtractor, Verdict,
};
use crate::clock::{ms, FakeClock};
use crate::pipeline::ReasonerInput;

/// Classifier answering the same probability for every image.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier(pub f64);

impl Classifier for ConstantClassifier {
    fn classify(&self, _image: &ImageRef) -> Result<ClassifierOutput, BackendError> {
        ClassifierOutput::new(self.0).map_err(BackendError::BackendFailure)
    }
}

/// Detector answering a fixed list for every image (empty by default).
#[derive(Debug, Clone, Default)]
pub struct StaticDetector(pub Vec<Detection>);

impl Detector for StaticDetector {
    fn detect(&self, _image: &ImageRef) -> Result<Vec<Detection>, BackendError> {
        Ok(self.0.clone())
    }
}

/// OCR answering a fixed list for every image (empty by default).
#[derive(Debug, Clone, Default)]
pub struct StaticOcr(pub Vec<OcrSpan>);

impl TextExtractor for StaticOcr {
    fn extract_text(&self, _image: &ImageRef) -> Result<Vec<OcrSpan>, BackendError> {
        let mut spans = self.0.clone();
        sort_spans(&mut spans);
        Ok(spans)
    }
}

/// Classifier for live mode: derives a stable probability from the payload
/// digest. Requires a payload.
#[derive(Debug, Clone, Copy, Default)]
pub struct DigestClassifier;

impl Classifier for DigestClassifier {
    fn classify(&self, image: &ImageRef) -> Result<ClassifierOutput, BackendError> {
        let bytes = image
            .payload
            .as_deref()
            .ok_or_else(|| BackendError::UnknownImage(image.id.clone()))?;
        let digest = Sha256::digest(bytes);
        let v = u16::from_be_bytes([digest[0], digest[1]]);
        Ok(ClassifierOutput {
            probability: f64::from(v) / f64::from(u16::MAX),
        })
    }
}

/// Keyword and label rules standing in for a language model.
///
/// Any flagged phrase in the extracted text yields `Unsafe`/`Block`; a
/// flagged object label at or above `label_confidence` yields
/// `Unsafe`/`Review`; otherwise `Safe`, with a warning when the visual score
/// was high.
#[derive(Debug, Clone)]
pub struct KeywordReasoner {
    pub flagged_phrases: Vec<String>,
    pub flagged_labels: Vec<String>,
    pub label_confidence: f64,
    pub warn_above: f64,
}

impl Default for KeywordReasoner {
    fn default() -> Self {
        Self {
            flagged_phrases: [
                "send pics",
                "send nudes",
                "nudes",
                "dm me",
                "our secret",
                "don't tell",
                "meet up alone",
                "18+",
                "onlyfans",
                "webcam",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            flagged_labels: ["exposed", "nudity", "explicit"]
                .into_iter()
                .map(String::from)
                .collect(),
            label_confidence: 0.5,
            warn_above: 0.7,
        }
    }
}

impl Reasoner for KeywordReasoner {
    fn reason(&self, input: &ReasonerInput) -> Result<ReasonerVerdict, BackendError> {
        let text_hits: Vec<&str> = self
            .flagged_phrases
            .iter()
            .filter(|phrase| {
                input
                    .extracted_text
                    .iter()
                    .any(|t| t.to_lowercase().contains(phrase.as_str()))
            })
            .map(String::as_str)
            .collect();
        let label_hits: Vec<&str> = input
            .object_labels
            .iter()
            .filter(|(label, conf)| {
                *conf >= self.label_confidence
                    && self
                        .flagged_labels
                        .iter()
                        .any(|f| label.to_lowercase().contains(f.as_str()))
            })
            .map(|(label, _)| label.as_str())
            .collect();
        let (verdict, analysis, rec) = if !text_hits.is_empty() {
            (
                Verdict::Unsafe,
                format!(
                    "embedded text contains flagged phrases: {}",
                    text_hits.join(", ")
                ),
                Recommendation::Block,
            )
        } else if !label_hits.is_empty() {
            (
                Verdict::Unsafe,
                format!("detected sensitive objects: {}", label_hits.join(", ")),
                Recommendation::Review,
            )
        } else if input.stage1_probability >= self.warn_above {
            (
                Verdict::Safe,
                "no flagged text or objects; visual score elevated".to_string(),
                Recommendation::AllowWithWarning,
            )
        } else {
            (
                Verdict::Safe,
                "no flagged text or objects".to_string(),
                Recommendation::Allow,
            )
        };
        ReasonerVerdict::new(verdict, analysis, rec).map_err(BackendError::MalformedResponse)
    }
}

/// Adapter for a real text model: sends the rendered payload to a
/// completion function and parses the structured reply with
/// [`ReasonerVerdict::parse_response`].
pub struct CompletionReasoner<F> {
    complete: F,
}

impl<F> CompletionReasoner<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(complete: F) -> Self {
        Self { complete }
    }
}

impl<F> Reasoner for CompletionReasoner<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    fn reason(&self, input: &ReasonerInput) -> Result<ReasonerVerdict, BackendError> {
        let reply = (self.complete)(&input.rendered_payload)?;
        ReasonerVerdict::parse_response(&reply)
    }
}

/// A fixed number of stateful engine instances. Each call borrows one
/// instance exclusively; callers never share an instance concurrently.
pub struct Pool<T> {
    slots: Vec<Mutex<T>>,
    next: AtomicUsize,
}

impl<T> Pool<T> {
    pub fn new(instances: Vec<T>) -> Self {
        assert!(!instances.is_empty(), "pool needs at least one instance");
        Self {
            slots: instances.into_iter().map(Mutex::new).collect(),
            next: AtomicUsize::new(0),
        }
    }

    pub fn size(&self) -> usize {
        self.slots.len()
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut T) -> R) -> R {
        let start = self.next.fetch_add(1, Ordering::Relaxed) % self.slots.len();
        for i in 0..self.slots.len() {
            let slot = &self.slots[(start + i) % self.slots.len()];
            if let Ok(mut guard) = slot.try_lock() {
                return f(&mut guard);
            }
        }
        let mut guard = self.slots[start].lock().unwrap_or_else(|e| e.into_inner());
        f(&mut guard)
    }
}

/// Simulated per-call cost of each backend, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageCosts {
    pub classify: f64,
    pub detect: f64,
    pub ocr: f64,
    pub reason: f64,
}

impl StageCosts {
    pub fn stage1(&self) -> f64 {
        self.classify + self.detect
    }

    pub fn full(&self) -> f64 {
        self.classify + self.detect + self.ocr + self.reason
    }
}

/// Wraps a backend so every call advances a shared fake clock by a fixed
/// cost before delegating.
pub struct Costed<B: ?Sized> {
    inner: Arc<B>,
    clock: Arc<FakeClock>,
    cost: Duration,
}

impl<B: ?Sized> Costed<B> {
    pub fn new(inner: Arc<B>, clock: Arc<FakeClock>, cost_ms: f64) -> Self {
        Self {
            inner,
            clock,
            cost: ms(cost_ms),
        }
    }
}

impl Classifier for Costed<dyn Classifier> {
    fn classify(&self, image: &ImageRef) -> Result<ClassifierOutput, BackendError> {
        self.clock.advance(self.cost);
        self.inner.classify(image)
    }
}

impl Detector for Costed<dyn Detector> {
    fn detect(&self, image: &ImageRef) -> Result<Vec<Detection>, BackendError> {
        self.clock.advance(self.cost);
        self.inner.detect(image)
    }
}

impl TextExtractor for Costed<dyn TextExtractor> {
    fn extract_text(&self, image: &ImageRef) -> Result<Vec<OcrSpan>, BackendError> {
        self.clock.advance(self.cost);
        self.inner.extract_text(image)
    }
}

impl Reasoner for Costed<dyn Reasoner> {
    fn reason(&self, input: &ReasonerInput) -> Result<ReasonerVerdict, BackendError> {
        self.clock.advance(self.cost);
        self.inner.reason(input)
    }
}

/// Wraps every backend of `set` with its cost from `costs`.
pub fn costed_backends(set: &BackendSet, clock: Arc<FakeClock>, costs: StageCosts) -> BackendSet {
    BackendSet {
        classifier: Arc::new(Costed::new(
            set.classifier.clone(),
            clock.clone(),
            costs.classify,
        )),
        detector: Arc::new(Costed::new(
            set.detector.clone(),
            clock.clone(),
            costs.detect,
        )),
        ocr: set
            .ocr
            .clone()
            .map(|o| Arc::new(Costed::new(o, clock.clone(), costs.ocr)) as Arc<dyn TextExtractor>),
        reasoner: set
            .reasoner
            .clone()
            .map(|r| Arc::new(Costed::new(r, clock.clone(), costs.reason)) as Arc<dyn Reasoner>),
        mode: set.mode,
    }
}

/// Live-mode stack built from the rule-based backends: digest classifier,
/// no detections, no OCR text, keyword reasoner.
pub fn synthetic_live_backends() -> BackendSet {
    BackendSet {
        classifier: Arc::new(DigestClassifier),
        detector: Arc::new(StaticDetector::default()),
        ocr: Some(Arc::new(StaticOcr::default())),
        reasoner: Some(Arc::new(KeywordReasoner::default())),
        mode: BackendMode::Live,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::BBox;
    use crate::clock::Clock;
    use crate::pipeline::{build_reasoner_input, Stage1Output};

    fn stage1(p: f64, detections: Vec<Detection>) -> Stage1Output {
        Stage1Output {
            probability: p,
            detections,
            elapsed_ms: 0.0,
        }
    }

    #[test]
    fn constant_zero_is_safe() {
        let c = ConstantClassifier(0.0);
        assert_eq!(
            c.classify(&ImageRef::id("anything")).unwrap().probability,
            0.0
        );
    }

    #[test]
    fn benign_payload_is_allowed() {
        let input = build_reasoner_input(&stage1(0.1, vec![]), &[]);
        let v = KeywordReasoner::default().reason(&input).unwrap();
        assert_eq!(v.verdict, Verdict::Safe);
        assert_eq!(v.recommendation, Recommendation::Allow);
        assert!(!v.analysis.is_empty());
    }

    #[test]
    fn flagged_text_blocks() {
        let spans = [OcrSpan::new("Send pics now", BBox::new(0.0, 0.0, 1.0, 0.1))];
        let input = build_reasoner_input(&stage1(0.1, vec![]), &spans);
        let v = KeywordReasoner::default().reason(&input).unwrap();
        assert_eq!(
            (v.verdict, v.recommendation),
            (Verdict::Unsafe, Recommendation::Block)
        );
    }

    #[test]
    fn flagged_label_reviews() {
        let det = Detection::new("exposed_torso", 0.91, BBox::new(0.1, 0.2, 0.5, 0.9));
        let input = build_reasoner_input(&stage1(0.6, vec![det]), &[]);
        let v = KeywordReasoner::default().reason(&input).unwrap();
        assert_eq!(
            (v.verdict, v.recommendation),
            (Verdict::Unsafe, Recommendation::Review)
        );
    }

    #[test]
    fn completion_reasoner_rejects_unparseable_reply() {
        let r = CompletionReasoner::new(|_payload: &str| {
            Ok("Verdict: maybe\nAnalysis: unsure\nRecommendation: Review".to_string())
        });
        let input = build_reasoner_input(&stage1(0.5, vec![]), &[]);
        assert!(matches!(
            r.reason(&input),
            Err(BackendError::MalformedResponse(_))
        ));
    }

    #[test]
    fn completion_reasoner_sees_only_rendered_text() {
        let r = CompletionReasoner::new(|payload: &str| {
            assert!(payload.contains("STAGE1_SCORE"));
            Ok("Verdict: Safe\nAnalysis: benign\nRecommendation: Allow".to_string())
        });
        let input = build_reasoner_input(&stage1(0.5, vec![]), &[]);
        assert_eq!(r.reason(&input).unwrap().verdict, Verdict::Safe);
    }

    #[test]
    fn pool_serializes_instances() {
        let pool = Arc::new(Pool::new(vec![0u64, 0u64]));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let pool = pool.clone();
                s.spawn(move || {
                    for _ in 0..1000 {
                        pool.with(|n| *n += 1);
                    }
                });
            }
        });
        let total: u64 = pool.slots.iter().map(|m| *m.lock().unwrap()).sum();
        assert_eq!(total, 8000);
    }

    #[test]
    fn costed_backends_advance_clock() {
        let clock = FakeClock::shared();
        let base = BackendSet::vision_only(
            Arc::new(ConstantClassifier(0.4)),
            Arc::new(StaticDetector::default()),
        );
        let costs = StageCosts {
            classify: 8.0,
            detect: 3.7,
            ocr: 0.0,
            reason: 0.0,
        };
        let set = costed_backends(&base, clock.clone(), costs);
        let t0 = clock.now();
        set.classifier.classify(&ImageRef::id("a")).unwrap();
        set.detector.detect(&ImageRef::id("a")).unwrap();
        assert_eq!(clock.now() - t0, Duration::from_nanos(11_700_000));
    }

    #[test]
    fn digest_classifier_needs_payload() {
        assert!(DigestClassifier.classify(&ImageRef::id("x")).is_err());
        let a = DigestClassifier
            .classify(&ImageRef::with_payload("x", vec![1, 2, 3]))
            .unwrap();
        let b = DigestClassifier
            .classify(&ImageRef::with_payload("y", vec![1, 2, 3]))
            .unwrap();
        assert_eq!(a, b);
    }
}
