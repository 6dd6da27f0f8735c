use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;

use modcascade::adapters::synthetic::{
    ConstantClassifier, KeywordReasoner, StaticDetector, StaticOcr,
};
use modcascade::adapters::{BBox, BackendSet, OcrSpan};
use modcascade::bench::{expected_latency, Bencher};
use modcascade::clock::FakeClock;
use modcascade::evalrunner::{
    emit_report, parse_structured, run_eval, ClockMode, EvalOptions, ReportBundle, ReportFormat,
    Suite,
};
use modcascade::fixtures::{generate, FixturePlan, SUITE_FILE};
use modcascade::metrics::{compute_metrics, derive_confusion, round_report, ReportedMetrics};
use modcascade::pareto::{pareto_frontier, ParetoPoint};
use modcascade::subsets::{filter_subset, load_manifest, ClassCounts, SubsetKind};
use modcascade::{
    ConfusionMatrix, Execution, ImageRef, Pipeline, Recommendation, Regime, RoutingConfig, Verdict,
};

fn cascade(p: f64, text: Option<&str>, cfg: RoutingConfig) -> Pipeline {
    let spans = text
        .map(|t| vec![OcrSpan::new(t, BBox::new(0.0, 0.0, 1.0, 0.1))])
        .unwrap_or_default();
    let set = BackendSet::vision_only(
        Arc::new(ConstantClassifier(p)),
        Arc::new(StaticDetector::default()),
    )
    .with_ocr(Arc::new(StaticOcr(spans)))
    .with_reasoner(Arc::new(KeywordReasoner::default()));
    Pipeline::new(set, cfg)
}

fn arb_config() -> impl Strategy<Value = RoutingConfig> {
    (0.0f64..1.0, 0.0f64..1.0, any::<bool>()).prop_filter_map("ordered thresholds", |(a, b, t)| {
        RoutingConfig::new(a.min(b), a.max(b), t).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rounded_metrics_derive_back(tp in 0u64..400, fp in 0u64..400, tn in 0u64..400, fn_ in 0u64..400) {
        let cm = ConfusionMatrix::new(tp, fp, tn, fn_);
        prop_assume!(tp + fp > 0 && tp + fn_ > 0);
        let m = round_report(&compute_metrics(&cm).unwrap());
        let reported = ReportedMetrics {
            accuracy: Some(m.accuracy),
            precision: Some(m.precision),
            recall: Some(m.recall),
            f1: Some(m.f1),
        };
        let d = derive_confusion(cm.positives(), cm.negatives(), &reported, 2);
        prop_assert!(d.contains(&cm));
        for other in &d.matrices {
            prop_assert_eq!(round_report(&compute_metrics(other).unwrap()), m);
        }
    }

    #[test]
    fn expected_latency_is_affine(s1 in 0.0f64..100.0, extra in 0.0f64..1000.0, r in 0.0f64..=1.0) {
        let full = s1 + extra;
        prop_assert_eq!(expected_latency(s1, full, 0.0), s1);
        prop_assert!((expected_latency(s1, full, 1.0) - full).abs() < 1e-9);
        let mid = expected_latency(s1, full, r);
        prop_assert!((mid - (s1 + r * (full - s1))).abs() < 1e-9);
        prop_assert!(mid >= s1 - 1e-9 && mid <= full + 1e-9);
    }

    #[test]
    fn fake_clock_runs_are_reproducible(costs in proptest::collection::vec(0u64..50_000, 1..30), warmup in 0usize..5) {
        let images: Vec<ImageRef> = (0..costs.len()).map(|i| ImageRef::id(format!("i{i}"))).collect();
        let once = || {
            let clock = FakeClock::shared();
            let bencher = Bencher::new(clock.clone());
            let mut k = 0;
            bencher
                .time_run(&images, warmup, |_| {
                    clock.advance(Duration::from_nanos(costs[k % costs.len()]));
                    k += 1;
                    Ok::<_, std::io::Error>(k % 2 == 0)
                })
                .unwrap()
        };
        let (a, b) = (once(), once());
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.samples.len(), images.len());
        prop_assert_eq!(a.warmup_discarded, warmup);
    }

    #[test]
    fn verdict_is_a_step_in_probability_without_stage2(p in 0.0f64..=1.0, q in 0.0f64..=1.0, cfg in arb_config()) {
        // vision-only: Unsafe exactly from tau_high upward
        let v = |p| cascade(p, None, cfg).moderate(&ImageRef::id("x"), Regime::VisionOnly).unwrap();
        let (lo, hi) = (p.min(q), p.max(q));
        prop_assert_eq!(v(p).final_verdict == Verdict::Unsafe, p >= cfg.tau_high);
        prop_assert!(v(lo).final_verdict <= v(hi).final_verdict || v(hi).final_verdict == Verdict::Unsafe);
    }

    #[test]
    fn stage2_verdict_overrides(p in 0.0f64..=1.0, cfg in arb_config(), flagged in any::<bool>()) {
        let text = if flagged { "send nudes" } else { "happy birthday" };
        let d = cascade(p, Some(text), cfg).moderate(&ImageRef::id("x"), Regime::Multimodal).unwrap();
        if let Some(s2) = &d.stage2 {
            prop_assert_eq!(d.final_verdict, s2.verdict);
            prop_assert_eq!(d.recommendation, s2.recommendation);
            if flagged {
                prop_assert_eq!(d.final_verdict, Verdict::Unsafe);
                prop_assert_eq!(d.recommendation, Recommendation::Block);
            }
        } else {
            prop_assert!(!cfg.text_trigger && p < cfg.tau_low);
            prop_assert_eq!(d.final_verdict, Verdict::Safe);
        }
    }

    #[test]
    fn frontier_accuracy_increases_with_latency(
        pts in proptest::collection::vec((1.0f64..1000.0, 0.0f64..100.0), 1..50)
    ) {
        let pts: Vec<ParetoPoint> = pts
            .into_iter()
            .enumerate()
            .map(|(i, (l, a))| ParetoPoint::new(format!("p{i}"), l, a).unwrap())
            .collect();
        let f = pareto_frontier(&pts);
        for w in f.windows(2) {
            let same = w[0].latency_ms == w[1].latency_ms && w[0].accuracy_pct == w[1].accuracy_pct;
            prop_assert!(same || (w[0].latency_ms < w[1].latency_ms && w[0].accuracy_pct < w[1].accuracy_pct));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fixtures_realise_their_targets(
        tp in 1u64..60, fp in 0u64..40, tn in 1u64..40, fn_ in 0u64..40,
        tv_frac in 0.0f64..=1.0, to_frac in 0.0f64..=1.0, seed in any::<u64>(),
    ) {
        let full = ConfusionMatrix::new(tp, fp, tn, fn_);
        let pos = full.positives() as usize;
        let neg = full.negatives() as usize;
        let tv_u = (pos as f64 * tv_frac) as usize;
        let tv_s = (neg as f64 * tv_frac) as usize;
        let to_u = (tv_u as f64 * to_frac) as usize;
        let to_s = (tv_s as f64 * to_frac) as usize;
        let counts = |u: usize, s: usize| ClassCounts { total: u + s, unsafe_: u, safe: s };
        let plan = FixturePlan::single(full, counts(tv_u, tv_s), counts(to_u, to_s), seed);

        let dir = tempfile::tempdir().unwrap();
        generate(&plan).unwrap().write_to(dir.path()).unwrap();
        let suite = Suite::load(dir.path().join(SUITE_FILE)).unwrap();
        let manifest = load_manifest(suite.manifest_path()).unwrap();
        prop_assert_eq!(filter_subset(&manifest, SubsetKind::TextVisual).counts(), counts(tv_u, tv_s));
        prop_assert_eq!(filter_subset(&manifest, SubsetKind::TextOnly).counts(), counts(to_u, to_s));

        let mut reports = Vec::new();
        for regime in [Regime::VisionOnly, Regime::Multimodal] {
            let entries: Vec<_> = suite
                .entries(ClockMode::Fake)
                .unwrap()
                .into_iter()
                .filter(|e| e.regime == regime)
                .collect();
            for exec in [Execution::Sequential, Execution::Parallel] {
                let opts = EvalOptions { exec, ..EvalOptions::default() };
                let out = run_eval(&entries, &manifest, SubsetKind::Full, regime, &opts).unwrap();
                prop_assert!(out.failures.is_empty());
                for r in &out.reports {
                    prop_assert_eq!(r.confusion, full);
                }
                reports.extend(out.reports);
            }
        }

        let bundle = ReportBundle::new(reports, vec![]);
        let parsed = parse_structured(&emit_report(&bundle, ReportFormat::Structured)).unwrap();
        prop_assert_eq!(parsed, bundle);
    }
}
