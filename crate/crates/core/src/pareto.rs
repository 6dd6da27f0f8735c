//! Latency/accuracy Pareto frontier.
//!
//! A point is dominated when another point is no slower and no less
//! accurate, and strictly better on at least one axis. Exact duplicates do
//! not dominate each other, so both are kept.

use serde::{Deserialize, Serialize};

use crate::exec::{map_slice, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub name: String,
    pub latency_ms: f64,
    pub accuracy_pct: f64,
}

impl ParetoPoint {
    pub fn new(
        name: impl Into<String>,
        latency_ms: f64,
        accuracy_pct: f64,
    ) -> Result<Self, String> {
        let p = Self {
            name: name.into(),
            latency_ms,
            accuracy_pct,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.latency_ms.is_finite() && self.latency_ms > 0.0) {
            return Err(format!(
                "{}: latency {} must be positive",
                self.name, self.latency_ms
            ));
        }
        if !(0.0..=100.0).contains(&self.accuracy_pct) {
            return Err(format!(
                "{}: accuracy {} outside [0,100]",
                self.name, self.accuracy_pct
            ));
        }
        Ok(())
    }

    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.latency_ms <= other.latency_ms
            && self.accuracy_pct >= other.accuracy_pct
            && (self.latency_ms < other.latency_ms || self.accuracy_pct > other.accuracy_pct)
    }
}

pub fn pareto_frontier(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    pareto_frontier_with(Execution::default(), points)
}

/// Non-dominated points sorted by ascending latency (name breaks ties).
pub fn pareto_frontier_with(exec: Execution, points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let keep = map_slice(exec, points, |p| !points.iter().any(|q| q.dominates(p)));
    let mut out: Vec<ParetoPoint> = points
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| p.clone())
        .collect();
    out.sort_by(|a, b| {
        a.latency_ms
            .total_cmp(&b.latency_ms)
            .then(a.accuracy_pct.total_cmp(&b.accuracy_pct))
            .then_with(|| a.name.cmp(&b.name))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(name: &str, l: f64, a: f64) -> ParetoPoint {
        ParetoPoint::new(name, l, a).unwrap()
    }

    #[test]
    fn single_point() {
        let p = vec![pt("a", 1.0, 50.0)];
        assert_eq!(pareto_frontier(&p), p);
    }

    #[test]
    fn identical_points_both_kept() {
        let p = vec![pt("a", 1.0, 50.0), pt("b", 1.0, 50.0)];
        assert_eq!(pareto_frontier(&p).len(), 2);
    }

    #[test]
    fn invalid_points_rejected() {
        assert!(ParetoPoint::new("z", 0.0, 50.0).is_err());
        assert!(ParetoPoint::new("z", 1.0, 100.5).is_err());
    }

    fn arb_points() -> impl Strategy<Value = Vec<ParetoPoint>> {
        proptest::collection::vec((1u32..40, 0u32..30), 1..50).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (l, a))| pt(&format!("p{i}"), l as f64, 50.0 + a as f64))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn frontier_sound_and_complete(points in arb_points()) {
            let front = pareto_frontier(&points);
            for f in &front {
                prop_assert!(!points.iter().any(|q| q.dominates(f)));
            }
            for p in &points {
                if !front.contains(p) {
                    prop_assert!(front.iter().any(|f| f.dominates(p)));
                }
            }
            // strictly increasing accuracy along latency once duplicates collapse
            let mut collapsed = front.clone();
            collapsed.dedup_by(|a, b| a.latency_ms == b.latency_ms && a.accuracy_pct == b.accuracy_pct);
            for w in collapsed.windows(2) {
                prop_assert!(w[0].latency_ms < w[1].latency_ms);
                prop_assert!(w[0].accuracy_pct < w[1].accuracy_pct);
            }
            prop_assert_eq!(front, pareto_frontier_with(Execution::Sequential, &points));
        }
    }
}
