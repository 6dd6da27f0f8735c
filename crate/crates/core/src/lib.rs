//! Two-stage content moderation cascade and its evaluation harness.
//!
//! Stage 1 screens every image with a classifier and an object detector.
//! In the multimodal regime, images that are ambiguous, visually unsafe, or
//! carry embedded text go on to Stage 2: OCR followed by a text-only
//! reasoner whose verdict is final. Model backends are traits; replay and
//! synthetic implementations make the whole stack deterministic.
//!
//! The harness side covers confusion-matrix metrics (including recovering
//! integer matrices from rounded published figures), text subsets, latency
//! measurement with injectable clocks, Pareto analysis, and two-regime
//! evaluation runs with report and plot-data output.

pub mod adapters;
pub mod bench;
pub mod clock;
pub mod evalrunner;
pub mod exec;
pub mod fixtures;
pub mod metrics;
pub mod pareto;
pub mod pipeline;
pub mod subsets;

pub use adapters::{ImageRef, Recommendation, Verdict};
pub use exec::Execution;
pub use metrics::{ConfusionMatrix, MetricSet};
pub use pipeline::{ModerationDecision, Pipeline, Regime, RoutingConfig};
