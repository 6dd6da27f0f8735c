//! Reconstructing integer confusion matrices from rounded published metrics.
//!
//! Given class counts and any subset of (accuracy, precision, recall, F1)
//! printed at `decimals` places, enumerate every `(tp, fp)` whose metrics
//! round to all reported values. Rounding is done in exact integer
//! arithmetic, so there is no float tie ambiguity.
//!
//! Recall depends on `tp` alone, so when it is reported only the matching
//! `tp` values are scanned; the result is identical to the full
//! `(positives + 1) x (negatives + 1)` scan. When nothing matches, the full
//! grid is scanned for the candidates that minimise the largest per-metric
//! gap between the exact value and the reported rounding interval.

use serde::{Deserialize, Serialize};

use super::ConfusionMatrix;
use crate::exec::{map_range, Execution};

/// Reported metric values in percent. Absent metrics do not constrain.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportedMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivationStatus {
    Unique,
    Multiple,
    Infeasible,
}

/// Distance in percentage points from the exact metric to the interval of
/// values that round to the reported figure. Zero when it rounds correctly;
/// `None` for metrics that were not reported.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricGaps {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl MetricGaps {
    pub fn max(&self) -> f64 {
        [self.accuracy, self.precision, self.recall, self.f1]
            .into_iter()
            .flatten()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivationResult {
    pub status: DerivationStatus,
    /// Exact solutions, or the nearest candidates when infeasible. Sorted by
    /// `(tp, fp)`.
    pub matrices: Vec<ConfusionMatrix>,
    /// Per-candidate gaps, parallel to `matrices`. All zero unless
    /// infeasible.
    pub discrepancy: Vec<MetricGaps>,
}

impl DerivationResult {
    pub fn contains(&self, cm: &ConfusionMatrix) -> bool {
        self.status != DerivationStatus::Infeasible && self.matrices.contains(cm)
    }
}

/// One reported metric as an integer count of rounding units.
#[derive(Clone, Copy)]
struct Target {
    units: i128,
    value: f64,
}

struct Problem {
    positives: u64,
    negatives: u64,
    scale: u128,
    half_unit: f64,
    accuracy: Option<Target>,
    precision: Option<Target>,
    recall: Option<Target>,
    f1: Option<Target>,
}

impl Problem {
    /// `num/den` as a percentage, rounded half up to `scale` units.
    fn rounded_units(&self, num: u64, den: u64) -> i128 {
        let num = num as u128 * 100 * self.scale;
        let den = den as u128;
        ((2 * num + den) / (2 * den)) as i128
    }

    fn matches(&self, target: Option<Target>, num: u64, den: u64) -> bool {
        match target {
            None => true,
            Some(_) if den == 0 => false,
            Some(t) => self.rounded_units(num, den) == t.units,
        }
    }

    fn gap(&self, target: Option<Target>, num: u64, den: u64) -> Option<f64> {
        let t = target?;
        if den == 0 {
            return Some(f64::INFINITY);
        }
        if self.rounded_units(num, den) == t.units {
            return Some(0.0);
        }
        let exact = 100.0 * num as f64 / den as f64;
        let lo = t.value - self.half_unit;
        let hi = t.value + self.half_unit;
        Some(if exact < lo {
            lo - exact
        } else {
            (exact - hi).max(0.0)
        })
    }

    fn cells(&self, tp: u64, fp: u64) -> [(u64, u64); 4] {
        let fn_ = self.positives - tp;
        let tn = self.negatives - fp;
        [
            (tp + tn, self.positives + self.negatives),
            (tp, tp + fp),
            (tp, self.positives),
            (2 * tp, 2 * tp + fp + fn_),
        ]
    }

    fn targets(&self) -> [Option<Target>; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }

    fn is_exact(&self, tp: u64, fp: u64) -> bool {
        self.cells(tp, fp)
            .iter()
            .zip(self.targets())
            .all(|(&(n, d), t)| self.matches(t, n, d))
    }

    fn gaps(&self, tp: u64, fp: u64) -> MetricGaps {
        let c = self.cells(tp, fp);
        let t = self.targets();
        MetricGaps {
            accuracy: self.gap(t[0], c[0].0, c[0].1),
            precision: self.gap(t[1], c[1].0, c[1].1),
            recall: self.gap(t[2], c[2].0, c[2].1),
            f1: self.gap(t[3], c[3].0, c[3].1),
        }
    }

    fn matrix(&self, tp: u64, fp: u64) -> ConfusionMatrix {
        ConfusionMatrix::new(tp, fp, self.negatives - fp, self.positives - tp)
    }
}

pub fn derive_confusion(
    positives: u64,
    negatives: u64,
    reported: &ReportedMetrics,
    decimals: u32,
) -> DerivationResult {
    derive_confusion_with(
        Execution::default(),
        positives,
        negatives,
        reported,
        decimals,
    )
}

pub fn derive_confusion_with(
    exec: Execution,
    positives: u64,
    negatives: u64,
    reported: &ReportedMetrics,
    decimals: u32,
) -> DerivationResult {
    let scale = 10u128.pow(decimals);
    let target = |v: Option<f64>| {
        v.map(|value| Target {
            units: (value * scale as f64).round() as i128,
            value,
        })
    };
    let problem = Problem {
        positives,
        negatives,
        scale,
        half_unit: 0.5 / scale as f64,
        accuracy: target(reported.accuracy),
        precision: target(reported.precision),
        recall: target(reported.recall),
        f1: target(reported.f1),
    };

    let exact: Vec<ConfusionMatrix> = map_range(exec, 0..=positives, |tp| {
        if !problem.matches(problem.recall, tp, positives) {
            return Vec::new();
        }
        (0..=negatives)
            .filter(|&fp| problem.is_exact(tp, fp))
            .map(|fp| problem.matrix(tp, fp))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();

    if !exact.is_empty() {
        let status = if exact.len() == 1 {
            DerivationStatus::Unique
        } else {
            DerivationStatus::Multiple
        };
        let discrepancy = exact.iter().map(|m| problem.gaps(m.tp, m.fp)).collect();
        return DerivationResult {
            status,
            matrices: exact,
            discrepancy,
        };
    }

    // No exact solution: collect the minimal-max-gap candidates per tp row.
    let rows = map_range(exec, 0..=positives, |tp| {
        let mut best = f64::INFINITY;
        let mut found: Vec<(u64, MetricGaps)> = Vec::new();
        for fp in 0..=negatives {
            let g = problem.gaps(tp, fp);
            let m = g.max();
            if m < best - 1e-12 {
                best = m;
                found.clear();
                found.push((fp, g));
            } else if (m - best).abs() <= 1e-12 {
                found.push((fp, g));
            }
        }
        (best, tp, found)
    });
    let best = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let mut matrices = Vec::new();
    let mut discrepancy = Vec::new();
    for (row_best, tp, found) in rows {
        if (row_best - best).abs() <= 1e-12 {
            for (fp, g) in found {
                matrices.push(problem.matrix(tp, fp));
                discrepancy.push(g);
            }
        }
    }
    DerivationResult {
        status: DerivationStatus::Infeasible,
        matrices,
        discrepancy,
    }
}
