//! Text-only payload sent to the reasoner.
//!
//! Template `payload/v1`, one item per line, sections always present:
//!
//! ```text
//! TEMPLATE: payload/v1
//! STAGE1_SCORE: 0.970000
//! OBJECTS:
//! - person (0.900)
//! - knife (0.400)
//! TEXT:
//! - call me
//! - 18+
//! ```
//!
//! Objects are sorted by descending confidence (stable for ties); text spans
//! keep OCR reading order. Span text is copied verbatim.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Stage1Output;
use crate::adapters::OcrSpan;

pub const TEMPLATE_VERSION: &str = "payload/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerInput {
    pub object_labels: Vec<(String, f64)>,
    pub extracted_text: Vec<String>,
    pub stage1_probability: f64,
    pub rendered_payload: String,
}

impl ReasonerInput {
    /// Hex SHA-256 of the rendered payload; the replay key for reasoners.
    pub fn payload_hash(&self) -> String {
        hex::encode(Sha256::digest(self.rendered_payload.as_bytes()))
    }
}

pub fn build_reasoner_input(stage1: &Stage1Output, spans: &[OcrSpan]) -> ReasonerInput {
    let mut object_labels: Vec<(String, f64)> = stage1
        .detections
        .iter()
        .map(|d| (d.label.clone(), d.confidence))
        .collect();
    object_labels.sort_by(|a, b| b.1.total_cmp(&a.1));
    let extracted_text: Vec<String> = spans.iter().map(|s| s.text.clone()).collect();

    let mut out = String::new();
    out.push_str("TEMPLATE: ");
    out.push_str(TEMPLATE_VERSION);
    out.push('\n');
    out.push_str(&format!("STAGE1_SCORE: {:.6}\n", stage1.probability));
    out.push_str("OBJECTS:\n");
    for (label, conf) in &object_labels {
        out.push_str(&format!("- {label} ({conf:.3})\n"));
    }
    out.push_str("TEXT:\n");
    for text in &extracted_text {
        out.push_str("- ");
        out.push_str(text);
        out.push('\n');
    }

    ReasonerInput {
        object_labels,
        extracted_text,
        stage1_probability: stage1.probability,
        rendered_payload: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{BBox, Detection};

    fn b() -> BBox {
        BBox::new(0.1, 0.1, 0.2, 0.2)
    }

    #[test]
    fn text_only_payload_has_empty_object_section() {
        let s1 = Stage1Output {
            probability: 0.05,
            detections: vec![],
            elapsed_ms: 1.0,
        };
        let input = build_reasoner_input(
            &s1,
            &[OcrSpan::new("call me", b()), OcrSpan::new("18+", b())],
        );
        assert_eq!(
            input.rendered_payload,
            "TEMPLATE: payload/v1\nSTAGE1_SCORE: 0.050000\nOBJECTS:\nTEXT:\n- call me\n- 18+\n"
        );
        assert_eq!(input.extracted_text, ["call me", "18+"]);
    }

    #[test]
    fn objects_sorted_by_confidence() {
        let s1 = Stage1Output {
            probability: 0.5,
            detections: vec![
                Detection::new("knife", 0.4, b()),
                Detection::new("person", 0.9, b()),
            ],
            elapsed_ms: 0.0,
        };
        let input = build_reasoner_input(&s1, &[]);
        assert_eq!(input.object_labels[0].0, "person");
        let person = input.rendered_payload.find("person").unwrap();
        let knife = input.rendered_payload.find("knife").unwrap();
        assert!(person < knife);
    }

    #[test]
    fn elapsed_does_not_affect_payload() {
        let mut s1 = Stage1Output {
            probability: 0.5,
            detections: vec![],
            elapsed_ms: 0.0,
        };
        let a = build_reasoner_input(&s1, &[]);
        s1.elapsed_ms = 99.0;
        assert_eq!(
            a.payload_hash(),
            build_reasoner_input(&s1, &[]).payload_hash()
        );
    }
}
