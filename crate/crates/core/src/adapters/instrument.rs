//! Call-counting wrappers used to check routing and isolation properties.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{
    BackendError, BackendSet, Classifier, ClassifierOutput, Detection, Detector, ImageRef, OcrSpan,
    Reasoner, ReasonerVerdict, TextExtractor,
};
use crate::pipeline::ReasonerInput;

/// Counters shared by an instrumented backend set.
#[derive(Debug, Default)]
pub struct Instrumentation {
    classify: AtomicUsize,
    detect: AtomicUsize,
    ocr: AtomicUsize,
    reason: AtomicUsize,
    payloads: Mutex<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CallCounts {
    pub classify: usize,
    pub detect: usize,
    pub ocr: usize,
    pub reason: usize,
}

impl Instrumentation {
    pub fn counts(&self) -> CallCounts {
        CallCounts {
            classify: self.classify.load(Ordering::SeqCst),
            detect: self.detect.load(Ordering::SeqCst),
            ocr: self.ocr.load(Ordering::SeqCst),
            reason: self.reason.load(Ordering::SeqCst),
        }
    }

    /// Every rendered payload the reasoner received, in call order.
    pub fn reasoner_payloads(&self) -> Vec<String> {
        self.payloads
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn reset(&self) {
        self.classify.store(0, Ordering::SeqCst);
        self.detect.store(0, Ordering::SeqCst);
        self.ocr.store(0, Ordering::SeqCst);
        self.reason.store(0, Ordering::SeqCst);
        self.payloads
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clear();
    }
}

struct Counted<B: ?Sized> {
    inner: Arc<B>,
    stats: Arc<Instrumentation>,
}

impl Classifier for Counted<dyn Classifier> {
    fn classify(&self, image: &ImageRef) -> Result<ClassifierOutput, BackendError> {
        self.stats.classify.fetch_add(1, Ordering::SeqCst);
        self.inner.classify(image)
    }
}

impl Detector for Counted<dyn Detector> {
    fn detect(&self, image: &ImageRef) -> Result<Vec<Detection>, BackendError> {
        self.stats.detect.fetch_add(1, Ordering::SeqCst);
        self.inner.detect(image)
    }
}

impl TextExtractor for Counted<dyn TextExtractor> {
    fn extract_text(&self, image: &ImageRef) -> Result<Vec<OcrSpan>, BackendError> {
        self.stats.ocr.fetch_add(1, Ordering::SeqCst);
        self.inner.extract_text(image)
    }
}

impl Reasoner for Counted<dyn Reasoner> {
    fn reason(&self, input: &ReasonerInput) -> Result<ReasonerVerdict, BackendError> {
        self.stats.reason.fetch_add(1, Ordering::SeqCst);
        self.stats
            .payloads
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(input.rendered_payload.clone());
        self.inner.reason(input)
    }
}

/// Returns a copy of `set` whose calls are counted in the returned handle.
pub fn instrument(set: &BackendSet) -> (BackendSet, Arc<Instrumentation>) {
    let stats = Arc::new(Instrumentation::default());
    let wrapped = BackendSet {
        classifier: Arc::new(Counted {
            inner: set.classifier.clone(),
            stats: stats.clone(),
        }),
        detector: Arc::new(Counted {
            inner: set.detector.clone(),
            stats: stats.clone(),
        }),
        ocr: set.ocr.clone().map(|inner| {
            Arc::new(Counted {
                inner,
                stats: stats.clone(),
            }) as Arc<dyn TextExtractor>
        }),
        reasoner: set.reasoner.clone().map(|inner| {
            Arc::new(Counted {
                inner,
                stats: stats.clone(),
            }) as Arc<dyn Reasoner>
        }),
        mode: set.mode,
    };
    (wrapped, stats)
}
