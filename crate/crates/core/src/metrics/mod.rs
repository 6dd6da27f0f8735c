//! Confusion matrices and the four classification metrics.
//!
//! `Unsafe` is the positive class. Metrics are percentages; rounding to the
//! reported precision happens only in [`round_report`].

mod derive;

use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use derive::{
    derive_confusion, derive_confusion_with, DerivationResult, DerivationStatus, MetricGaps,
    ReportedMetrics,
};

use crate::adapters::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("precision undefined: no positive predictions")]
    UndefinedPrecision,
    #[error("recall undefined: no positive ground truth")]
    UndefinedRecall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub const fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn record(&mut self, predicted: Verdict, truth: Verdict) {
        match (predicted, truth) {
            (Verdict::Unsafe, Verdict::Unsafe) => self.tp += 1,
            (Verdict::Unsafe, Verdict::Safe) => self.fp += 1,
            (Verdict::Safe, Verdict::Safe) => self.tn += 1,
            (Verdict::Safe, Verdict::Unsafe) => self.fn_ += 1,
        }
    }

    /// Specificity `tn / (tn + fp)` as a percentage, if any negatives exist.
    pub fn specificity(&self) -> Option<f64> {
        let neg = self.negatives();
        (neg > 0).then(|| 100.0 * self.tn as f64 / neg as f64)
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix::new(
            self.tp + o.tp,
            self.fp + o.fp,
            self.tn + o.tn,
            self.fn_ + o.fn_,
        )
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = ConfusionMatrix>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), Add::add)
    }
}

pub fn accumulate(predicted: Verdict, truth: Verdict, cm: ConfusionMatrix) -> ConfusionMatrix {
    let mut next = cm;
    next.record(predicted, truth);
    next
}

/// Accuracy, precision, recall and F1, all on the percentage scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricSet, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    if cm.tp + cm.fp == 0 {
        return Err(MetricsError::UndefinedPrecision);
    }
    if cm.tp + cm.fn_ == 0 {
        return Err(MetricsError::UndefinedRecall);
    }
    let accuracy = 100.0 * (cm.tp + cm.tn) as f64 / total as f64;
    let precision = 100.0 * cm.tp as f64 / (cm.tp + cm.fp) as f64;
    let recall = 100.0 * cm.tp as f64 / (cm.tp + cm.fn_) as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricSet {
        accuracy,
        precision,
        recall,
        f1,
    })
}

/// Round half up to `decimals` places.
///
/// Values whose scaled form lands within 1e-9 of a `.5` boundary are treated
/// as exactly on it, so binary representation error cannot turn a true half
/// into a round-down.
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let shifted = value * scale + 0.5;
    let nearest = shifted.round();
    let units = if (shifted - nearest).abs() < 1e-9 {
        nearest
    } else {
        shifted.floor()
    };
    units / scale
}

/// Two-decimal percentages, as printed in result tables.
pub fn round_report(m: &MetricSet) -> MetricSet {
    MetricSet {
        accuracy: round_half_up(m.accuracy, 2),
        precision: round_half_up(m.precision, 2),
        recall: round_half_up(m.recall, 2),
        f1: round_half_up(m.f1, 2),
    }
}
