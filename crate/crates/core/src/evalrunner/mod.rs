//! Two-regime evaluation over a manifest and a model suite.
//!
//! Each [`ModelEntry`] pairs a name and regime with a [`ModerationRunner`].
//! [`run_eval`] checks the suite against the requested regime, filters the
//! manifest to the requested subset and evaluates every model on it. A
//! backend failure aborts only that model's report.
//!
//! Within one model, images go through in manifest order. When latency is
//! measured they run one at a time through a [`Bencher`]; otherwise they may
//! fan out over the rayon pool. Models themselves may run in parallel, which
//! is only meaningful for latency when every model has its own fake clock.

mod report;
mod suite;

use std::collections::HashSet;
use std::error::Error as StdError;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{
    emit_plot_data, emit_report, parse_structured, PlotData, ReportBundle, ReportFormat,
    ReportParseError, DEFAULT_GUIDE_PCT, PLOT_PARETO_SCHEMA, PLOT_PR_SCHEMA, REPORT_SCHEMA,
};
pub use suite::{ClockMode, DeltaSpec, ModelKind, ModelSpec, Suite, SuiteError, SUITE_SCHEMA};

use crate::adapters::{BackendError, Classifier, ImageRef, Verdict};
use crate::bench::{BenchError, Bencher, LatencySummary, DEFAULT_WARMUP};
use crate::clock::{Clock, FakeClock};
use crate::exec::{map_slice, Execution};
use crate::metrics::{compute_metrics, round_half_up, round_report, ConfusionMatrix, MetricSet};
use crate::pipeline::{Pipeline, PipelineError, Regime, TEMPLATE_VERSION};
use crate::subsets::{filter_subset, DatasetManifest, SubsetKind};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub verdict: Verdict,
    pub stage2_invoked: bool,
}

/// Anything that can label one image.
pub trait ModerationRunner: Send + Sync {
    fn predict(&self, image: &ImageRef, regime: Regime) -> Result<Prediction, RunnerError>;

    /// Decision threshold applied by this runner, if it has one.
    fn threshold(&self) -> Option<f64> {
        None
    }

    /// Reasoner payload template, for runners that build one.
    fn template_version(&self) -> Option<&str> {
        None
    }
}

/// The cascade itself.
pub struct PipelineRunner {
    pipeline: Pipeline,
}

impl PipelineRunner {
    pub fn new(pipeline: Pipeline) -> Self {
        Self { pipeline }
    }
}

impl ModerationRunner for PipelineRunner {
    fn predict(&self, image: &ImageRef, regime: Regime) -> Result<Prediction, RunnerError> {
        let d = self.pipeline.moderate(image, regime)?;
        Ok(Prediction {
            verdict: d.final_verdict,
            stage2_invoked: d.routing.invoke_stage2,
        })
    }

    fn threshold(&self) -> Option<f64> {
        Some(self.pipeline.config().tau_high)
    }

    fn template_version(&self) -> Option<&str> {
        Some(TEMPLATE_VERSION)
    }
}

/// External baseline: a probability source cut at a fixed threshold
/// (`p >= threshold` is Unsafe).
///
/// With a simulated cost, each call advances the fake clock by that amount.
pub struct ThresholdRunner {
    classifier: Arc<dyn Classifier>,
    threshold: f64,
    cost: Option<(Arc<FakeClock>, std::time::Duration)>,
}

impl ThresholdRunner {
    pub const DEFAULT_THRESHOLD: f64 = 0.5;

    pub fn new(classifier: Arc<dyn Classifier>, threshold: f64) -> Self {
        Self {
            classifier,
            threshold,
            cost: None,
        }
    }

    pub fn with_cost(mut self, clock: Arc<FakeClock>, cost_ms: f64) -> Self {
        self.cost = Some((clock, crate::clock::ms(cost_ms)));
        self
    }
}

impl ModerationRunner for ThresholdRunner {
    fn predict(&self, image: &ImageRef, _regime: Regime) -> Result<Prediction, RunnerError> {
        if let Some((clock, cost)) = &self.cost {
            clock.advance(*cost);
        }
        let p = self.classifier.classify(image)?.probability;
        Ok(Prediction {
            verdict: if p >= self.threshold {
                Verdict::Unsafe
            } else {
                Verdict::Safe
            },
            stage2_invoked: false,
        })
    }

    fn threshold(&self) -> Option<f64> {
        Some(self.threshold)
    }
}

#[derive(Clone)]
pub struct ModelEntry {
    pub name: String,
    pub regime: Regime,
    pub runner: Arc<dyn ModerationRunner>,
    /// Clock the latency harness reads for this model.
    pub clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for ModelEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelEntry")
            .field("name", &self.name)
            .field("regime", &self.regime)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub warmup: usize,
    pub measure_latency: bool,
    pub exec: Execution,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            warmup: DEFAULT_WARMUP,
            measure_latency: true,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("model `{model}` is registered for {found} but the run is {expected}")]
    RegimeMismatch {
        model: String,
        expected: Regime,
        found: Regime,
    },
    #[error("subset `{0}` of the manifest is empty")]
    EmptySubset(SubsetKind),
    #[error("model name `{0}` appears twice in the suite")]
    DuplicateModel(String),
    #[error("cannot compare reports on different subsets ({left} vs {right})")]
    SubsetMismatch { left: String, right: String },
    #[error("report for `{0}` has no defined metrics")]
    MetricsUnavailable(String),
    #[error("report for `{model}` contains {positives} unsafe-labelled images")]
    NonControlSubset { model: String, positives: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub subset: SubsetKind,
    pub regime: Regime,
    pub n: usize,
    pub confusion: ConfusionMatrix,
    /// Two-decimal metrics; absent when precision or recall is undefined,
    /// e.g. on an all-safe control set.
    pub metrics: Option<MetricSet>,
    /// Two-decimal specificity, when the subset has safe images.
    pub specificity: Option<f64>,
    pub latency: Option<LatencySummary>,
    pub threshold: Option<f64>,
    pub template_version: Option<String>,
}

/// A model whose evaluation aborted.
#[derive(Debug)]
pub struct ModelFailure {
    pub model: String,
    pub image_id: Option<String>,
    pub error: Box<dyn StdError + Send + Sync>,
}

impl std::fmt::Display for ModelFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.image_id {
            Some(id) => write!(f, "{}: image `{}`: {}", self.model, id, self.error),
            None => write!(f, "{}: {}", self.model, self.error),
        }
    }
}

#[derive(Debug, Default)]
pub struct EvalOutcome {
    /// Successful reports, ordered by model name.
    pub reports: Vec<EvalReport>,
    pub failures: Vec<ModelFailure>,
}

pub fn run_eval(
    suite: &[ModelEntry],
    manifest: &DatasetManifest,
    subset: SubsetKind,
    regime: Regime,
    opts: &EvalOptions,
) -> Result<EvalOutcome, EvalError> {
    let mut names = HashSet::new();
    for entry in suite {
        if !names.insert(entry.name.as_str()) {
            return Err(EvalError::DuplicateModel(entry.name.clone()));
        }
        if entry.regime != regime {
            return Err(EvalError::RegimeMismatch {
                model: entry.name.clone(),
                expected: regime,
                found: entry.regime,
            });
        }
    }
    let subset_manifest = filter_subset(manifest, subset);
    if subset_manifest.is_empty() {
        return Err(EvalError::EmptySubset(subset));
    }

    let results = map_slice(opts.exec, suite, |entry| {
        evaluate_model(entry, &subset_manifest, subset, regime, opts)
    });
    let mut outcome = EvalOutcome::default();
    for r in results {
        match r {
            Ok(report) => outcome.reports.push(report),
            Err(f) => outcome.failures.push(f),
        }
    }
    outcome.reports.sort_by(|a, b| a.model.cmp(&b.model));
    outcome.failures.sort_by(|a, b| a.model.cmp(&b.model));
    Ok(outcome)
}

fn evaluate_model(
    entry: &ModelEntry,
    subset: &DatasetManifest,
    kind: SubsetKind,
    regime: Regime,
    opts: &EvalOptions,
) -> Result<EvalReport, ModelFailure> {
    let images: Vec<ImageRef> = subset.records.iter().map(|r| ImageRef::id(&r.id)).collect();
    let fail = |image_id: Option<String>, error: Box<dyn StdError + Send + Sync>| ModelFailure {
        model: entry.name.clone(),
        image_id,
        error,
    };

    let (verdicts, latency) = if opts.measure_latency {
        let bencher = Bencher::new(entry.clock.clone());
        let mut verdicts = Vec::with_capacity(images.len());
        let mut warmups_left = opts.warmup;
        let run = bencher
            .time_run(&images, opts.warmup, |image| {
                let p = entry.runner.predict(image, regime)?;
                if warmups_left > 0 {
                    warmups_left -= 1;
                } else {
                    verdicts.push(p.verdict);
                }
                Ok::<_, RunnerError>(p.stage2_invoked)
            })
            .map_err(|e| match e {
                BenchError::Runner { image_id, source } => fail(Some(image_id), source),
                other => fail(None, Box::new(other)),
            })?;
        let summary = run.summary().map_err(|e| fail(None, Box::new(e)))?;
        (verdicts, Some(summary))
    } else {
        let predictions = map_slice(opts.exec, &images, |image| {
            entry
                .runner
                .predict(image, regime)
                .map_err(|e| (image.id.clone(), e))
        });
        let mut verdicts = Vec::with_capacity(images.len());
        for p in predictions {
            let p = p.map_err(|(id, e)| fail(Some(id), Box::new(e)))?;
            verdicts.push(p.verdict);
        }
        (verdicts, None)
    };

    let confusion: ConfusionMatrix = subset.records.iter().zip(&verdicts).fold(
        ConfusionMatrix::default(),
        |mut cm, (rec, &v)| {
            cm.record(v, rec.label);
            cm
        },
    );
    debug_assert_eq!(confusion.total() as usize, subset.len());

    Ok(EvalReport {
        model: entry.name.clone(),
        subset: kind,
        regime,
        n: subset.len(),
        confusion,
        metrics: compute_metrics(&confusion).ok().map(|m| round_report(&m)),
        specificity: confusion.specificity().map(|s| round_half_up(s, 2)),
        latency,
        threshold: entry.runner.threshold(),
        template_version: entry.runner.template_version().map(str::to_string),
    })
}

/// Confirmation-stage contribution: `full - stage1` on two-decimal metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub stage1_model: String,
    pub full_model: String,
    pub subset: SubsetKind,
    pub d_accuracy: f64,
    pub d_precision: f64,
    pub d_recall: f64,
    pub d_f1: f64,
    pub d_latency_ms: Option<f64>,
}

pub fn stage2_delta(r1: &EvalReport, r12: &EvalReport) -> Result<DeltaRow, EvalError> {
    if r1.subset != r12.subset || r1.n != r12.n {
        return Err(EvalError::SubsetMismatch {
            left: format!("{} ({} images)", r1.subset, r1.n),
            right: format!("{} ({} images)", r12.subset, r12.n),
        });
    }
    let m1 = r1
        .metrics
        .ok_or_else(|| EvalError::MetricsUnavailable(r1.model.clone()))?;
    let m12 = r12
        .metrics
        .ok_or_else(|| EvalError::MetricsUnavailable(r12.model.clone()))?;
    // Inputs are already on the 0.01 grid; rounding only removes float noise.
    let d = |a: f64, b: f64| round_half_up(a - b, 2);
    Ok(DeltaRow {
        stage1_model: r1.model.clone(),
        full_model: r12.model.clone(),
        subset: r1.subset,
        d_accuracy: d(m12.accuracy, m1.accuracy),
        d_precision: d(m12.precision, m1.precision),
        d_recall: d(m12.recall, m1.recall),
        d_f1: d(m12.f1, m1.f1),
        d_latency_ms: match (&r1.latency, &r12.latency) {
            (Some(a), Some(b)) => Some(b.mean_ms - a.mean_ms),
            _ => None,
        },
    })
}

/// Specificity on an all-safe control report, in percent (two decimals).
pub fn control_specificity(report: &EvalReport) -> Result<f64, EvalError> {
    let positives = report.confusion.positives();
    if positives > 0 {
        return Err(EvalError::NonControlSubset {
            model: report.model.clone(),
            positives,
        });
    }
    report
        .specificity
        .ok_or(EvalError::EmptySubset(report.subset))
}
