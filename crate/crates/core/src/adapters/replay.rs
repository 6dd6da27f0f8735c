//! Replay backends answering from a precomputed fixture file.
//!
//! A fixture is line-delimited JSON, one record per `(kind, key)`:
//!
//! ```text
//! {"kind":"classify","key":"img-001","value":0.97}
//! {"kind":"detect","key":"img-002","value":[{"label":"exposed_torso","confidence":0.91,"box":[0.1,0.2,0.5,0.9]}]}
//! {"kind":"ocr","key":"img-003","value":[{"text":"call me","box":[0.1,0.1,0.4,0.2]}]}
//! {"kind":"reason","key":"<sha256 of rendered payload>","value":{"verdict":"unsafe","analysis":"explicit invitation text","recommendation":"block"}}
//! ```
//!
//! * `classify` rows define which image ids exist. `detect` and `ocr` rows
//!   are optional per id; a known id without one answers with an empty list.
//! * `reason` rows are keyed by [`ReasonerInput::payload_hash`], the hex
//!   SHA-256 of the rendered payload, not by image id.
//! * Blank lines and lines starting with `#` are ignored. Unknown fields are
//!   rejected.
//!
//! Loading is all-or-nothing: the first bad row aborts the load.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    sort_spans, BackendError, BackendMode, BackendSet, Classifier, ClassifierOutput, Detection,
    Detector, ImageRef, OcrSpan, Reasoner, ReasonerVerdict, TextExtractor,
};
use crate::pipeline::ReasonerInput;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("reading replay fixture: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invariant violation: {message}")]
    InvariantViolation { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Classify,
    Detect,
    Ocr,
    Reason,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    kind: RecordKind,
    key: String,
    value: serde_json::Value,
}

/// One typed fixture row.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplayRecord {
    Classify {
        id: String,
        probability: f64,
    },
    Detect {
        id: String,
        detections: Vec<Detection>,
    },
    Ocr {
        id: String,
        spans: Vec<OcrSpan>,
    },
    Reason {
        payload_hash: String,
        verdict: ReasonerVerdict,
    },
}

impl ReplayRecord {
    /// Encodes the record as one fixture line, without the trailing newline.
    pub fn to_line(&self) -> String {
        let (kind, key, value) = match self {
            ReplayRecord::Classify { id, probability } => {
                (RecordKind::Classify, id, serde_json::json!(probability))
            }
            ReplayRecord::Detect { id, detections } => (
                RecordKind::Detect,
                id,
                serde_json::to_value(detections).expect("detections serialize"),
            ),
            ReplayRecord::Ocr { id, spans } => (
                RecordKind::Ocr,
                id,
                serde_json::to_value(spans).expect("spans serialize"),
            ),
            ReplayRecord::Reason {
                payload_hash,
                verdict,
            } => (
                RecordKind::Reason,
                payload_hash,
                serde_json::to_value(verdict).expect("verdict serializes"),
            ),
        };
        let raw = RawRecord {
            kind,
            key: key.clone(),
            value,
        };
        serde_json::to_string(&raw).expect("record serializes")
    }
}

pub fn write_records<W: Write>(mut out: W, records: &[ReplayRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_line())?;
    }
    Ok(())
}

/// Immutable contents of a loaded fixture.
#[derive(Debug, Default)]
pub struct ReplayStore {
    classify: HashMap<String, f64>,
    detect: HashMap<String, Vec<Detection>>,
    ocr: HashMap<String, Vec<OcrSpan>>,
    reason: HashMap<String, ReasonerVerdict>,
}

impl ReplayStore {
    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.classify.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.classify.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classify.is_empty()
    }

    pub fn has_reason_rows(&self) -> bool {
        !self.reason.is_empty()
    }

    fn known(&self, image: &ImageRef) -> Result<(), BackendError> {
        if self.classify.contains_key(&image.id) {
            Ok(())
        } else {
            Err(BackendError::UnknownImage(image.id.clone()))
        }
    }
}

fn parse_line(line_no: usize, line: &str) -> Result<ReplayRecord, ReplayError> {
    let parse_err = |message: String| ReplayError::Parse {
        line: line_no,
        message,
    };
    let invariant = |message: String| ReplayError::InvariantViolation {
        line: line_no,
        message,
    };
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    if raw.key.trim().is_empty() {
        return Err(invariant("empty key".into()));
    }
    let record = match raw.kind {
        RecordKind::Classify => {
            let p: f64 = serde_json::from_value(raw.value).map_err(|e| parse_err(e.to_string()))?;
            ClassifierOutput::new(p).map_err(invariant)?;
            ReplayRecord::Classify {
                id: raw.key,
                probability: p,
            }
        }
        RecordKind::Detect => {
            let detections: Vec<Detection> =
                serde_json::from_value(raw.value).map_err(|e| parse_err(e.to_string()))?;
            for d in &detections {
                d.validate().map_err(invariant)?;
            }
            ReplayRecord::Detect {
                id: raw.key,
                detections,
            }
        }
        RecordKind::Ocr => {
            let mut spans: Vec<OcrSpan> =
                serde_json::from_value(raw.value).map_err(|e| parse_err(e.to_string()))?;
            for s in &spans {
                s.validate().map_err(invariant)?;
            }
            sort_spans(&mut spans);
            ReplayRecord::Ocr { id: raw.key, spans }
        }
        RecordKind::Reason => {
            let verdict: ReasonerVerdict =
                serde_json::from_value(raw.value).map_err(|e| parse_err(e.to_string()))?;
            verdict.validate().map_err(invariant)?;
            ReplayRecord::Reason {
                payload_hash: raw.key,
                verdict,
            }
        }
    };
    Ok(record)
}

/// Parses a whole fixture. Nothing is returned unless every row is valid.
pub fn parse_replay<R: BufRead>(reader: R) -> Result<ReplayStore, ReplayError> {
    let mut store = ReplayStore::default();
    // first line each image id appeared on in a detect/ocr row
    let mut pending: Vec<(usize, String)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let dup = |kind: &str, key: &str| ReplayError::Parse {
            line: line_no,
            message: format!("duplicate key `{key}` for kind `{kind}`"),
        };
        match parse_line(line_no, trimmed)? {
            ReplayRecord::Classify { id, probability } => match store.classify.entry(id) {
                Entry::Occupied(e) => return Err(dup("classify", e.key())),
                Entry::Vacant(e) => {
                    e.insert(probability);
                }
            },
            ReplayRecord::Detect { id, detections } => match store.detect.entry(id) {
                Entry::Occupied(e) => return Err(dup("detect", e.key())),
                Entry::Vacant(e) => {
                    pending.push((line_no, e.key().clone()));
                    e.insert(detections);
                }
            },
            ReplayRecord::Ocr { id, spans } => match store.ocr.entry(id) {
                Entry::Occupied(e) => return Err(dup("ocr", e.key())),
                Entry::Vacant(e) => {
                    pending.push((line_no, e.key().clone()));
                    e.insert(spans);
                }
            },
            ReplayRecord::Reason {
                payload_hash,
                verdict,
            } => match store.reason.entry(payload_hash) {
                Entry::Occupied(e) => return Err(dup("reason", e.key())),
                Entry::Vacant(e) => {
                    e.insert(verdict);
                }
            },
        }
    }
    if let Some((line, id)) = pending
        .into_iter()
        .find(|(_, id)| !store.classify.contains_key(id))
    {
        return Err(ReplayError::InvariantViolation {
            line,
            message: format!("image `{id}` has no classify row"),
        });
    }
    Ok(store)
}

/// Backends for all four contracts, sharing one immutable store.
#[derive(Debug, Clone)]
pub struct ReplayBackendSet {
    store: Arc<ReplayStore>,
}

impl ReplayBackendSet {
    pub fn new(store: ReplayStore) -> Self {
        Self {
            store: Arc::new(store),
        }
    }

    pub fn store(&self) -> &ReplayStore {
        &self.store
    }

    /// Full backend set. OCR and reasoner are always present; a fixture with
    /// no `reason` rows answers every reasoner call with a failure.
    pub fn backends(&self) -> BackendSet {
        BackendSet {
            classifier: Arc::new(ReplayClassifier(self.store.clone())),
            detector: Arc::new(ReplayDetector(self.store.clone())),
            ocr: Some(Arc::new(ReplayOcr(self.store.clone()))),
            reasoner: Some(Arc::new(ReplayReasoner(self.store.clone()))),
            mode: BackendMode::Replay,
        }
    }

    pub fn classifier(&self) -> ReplayClassifier {
        ReplayClassifier(self.store.clone())
    }
}

pub fn load_replay(path: impl AsRef<Path>) -> Result<ReplayBackendSet, ReplayError> {
    let file = std::fs::File::open(path)?;
    let store = parse_replay(std::io::BufReader::new(file))?;
    Ok(ReplayBackendSet::new(store))
}

#[derive(Debug, Clone)]
pub struct ReplayClassifier(Arc<ReplayStore>);

impl Classifier for ReplayClassifier {
    fn classify(&self, image: &ImageRef) -> Result<ClassifierOutput, BackendError> {
        self.0
            .classify
            .get(&image.id)
            .map(|&probability| ClassifierOutput { probability })
            .ok_or_else(|| BackendError::UnknownImage(image.id.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct ReplayDetector(Arc<ReplayStore>);

impl Detector for ReplayDetector {
    fn detect(&self, image: &ImageRef) -> Result<Vec<Detection>, BackendError> {
        self.0.known(image)?;
        Ok(self.0.detect.get(&image.id).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOcr(Arc<ReplayStore>);

impl TextExtractor for ReplayOcr {
    fn extract_text(&self, image: &ImageRef) -> Result<Vec<OcrSpan>, BackendError> {
        self.0.known(image)?;
        Ok(self.0.ocr.get(&image.id).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone)]
pub struct ReplayReasoner(Arc<ReplayStore>);

impl Reasoner for ReplayReasoner {
    fn reason(&self, input: &ReasonerInput) -> Result<ReasonerVerdict, BackendError> {
        let hash = input.payload_hash();
        self.0.reason.get(&hash).cloned().ok_or_else(|| {
            BackendError::BackendFailure(format!("no replay verdict for payload {hash}"))
        })
    }
}
