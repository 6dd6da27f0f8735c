use modcascade::evalrunner::{
    emit_plot_data, run_eval, stage2_delta, ClockMode, EvalOptions, EvalReport, Suite,
    DEFAULT_GUIDE_PCT,
};
use modcascade::fixtures::{generate, FixturePlan, CASCADE_FULL, CASCADE_STAGE1, SUITE_FILE};
use modcascade::metrics::{derive_confusion, ConfusionMatrix, DerivationStatus, ReportedMetrics};
use modcascade::subsets::{filter_subset, load_manifest, SubsetKind};
use modcascade::Regime;

struct Fixture {
    _dir: tempfile::TempDir,
    suite: Suite,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    generate(&FixturePlan::reference(2024))
        .unwrap()
        .write_to(dir.path())
        .unwrap();
    let suite = Suite::load(dir.path().join(SUITE_FILE)).unwrap();
    Fixture { _dir: dir, suite }
}

fn eval(f: &Fixture, regime: Regime, subset: SubsetKind, names: &[&str]) -> Vec<EvalReport> {
    let manifest = if subset == SubsetKind::ControlSafe {
        load_manifest(f.suite.control_manifest_path().unwrap()).unwrap()
    } else {
        load_manifest(f.suite.manifest_path()).unwrap()
    };
    let entries: Vec<_> = f
        .suite
        .entries(ClockMode::Fake)
        .unwrap()
        .into_iter()
        .filter(|e| e.regime == regime && (names.is_empty() || names.contains(&e.name.as_str())))
        .collect();
    let out = run_eval(&entries, &manifest, subset, regime, &EvalOptions::default()).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    out.reports
}

fn row(reports: &[EvalReport], name: &str) -> (ConfusionMatrix, [f64; 4]) {
    let r = reports.iter().find(|r| r.model == name).unwrap();
    let m = r.metrics.unwrap();
    (r.confusion, [m.accuracy, m.f1, m.precision, m.recall])
}

#[test]
fn full_set_both_regimes() {
    let f = fixture();
    let r1 = eval(&f, Regime::VisionOnly, SubsetKind::Full, &[]);
    let r2 = eval(&f, Regime::Multimodal, SubsetKind::Full, &[]);
    // (accuracy, F1, precision, recall) as printed
    let expected: [(&str, &[EvalReport], [f64; 4]); 7] = [
        ("FalconsAI", &r1, [59.01, 56.28, 91.15, 40.70]),
        ("NudeNet", &r1, [68.03, 76.01, 73.96, 78.18]),
        ("Adam-ViT", &r1, [68.98, 73.90, 81.23, 67.79]),
        ("Freepik", &r1, [77.04, 81.12, 86.81, 76.13]),
        (CASCADE_STAGE1, &r1, [80.27, 85.39, 82.05, 89.02]),
        ("LlavaGuard", &r2, [80.36, 84.56, 86.17, 83.02]),
        (CASCADE_FULL, &r2, [81.40, 86.16, 83.22, 89.31]),
    ];
    for (name, reports, m) in expected {
        assert_eq!(row(reports, name).1, m, "{name}");
    }
    assert_eq!(
        row(&r1, CASCADE_STAGE1).0,
        ConfusionMatrix::new(608, 133, 238, 75)
    );
    assert_eq!(
        row(&r2, CASCADE_FULL).0,
        ConfusionMatrix::new(610, 123, 248, 73)
    );
    for r in r1.iter().chain(&r2) {
        assert_eq!(r.confusion.total(), 1054);
        assert_eq!(r.confusion.positives(), 683);
    }

    let s1 = r1.iter().find(|r| r.model == CASCADE_STAGE1).unwrap();
    let s12 = r2.iter().find(|r| r.model == CASCADE_FULL).unwrap();
    assert_eq!(s12.latency.unwrap().stage2_fraction, 1.0);
    let d = stage2_delta(s1, s12).unwrap();
    assert_eq!(
        [d.d_accuracy, d.d_f1, d.d_precision, d.d_recall],
        [1.13, 0.77, 1.17, 0.29]
    );
    assert!((d.d_latency_ms.unwrap() - 108.3).abs() < 0.1);

    let all: Vec<EvalReport> = r1.into_iter().chain(r2).collect();
    let plots = emit_plot_data(&all, DEFAULT_GUIDE_PCT);
    let pareto = String::from_utf8(plots.pareto).unwrap();
    let mut members: Vec<&str> = pareto
        .lines()
        .filter(|l| l.ends_with(",true"))
        .map(|l| l.split(',').next().unwrap())
        .collect();
    members.sort();
    assert_eq!(members, ["Adam-ViT", CASCADE_STAGE1, CASCADE_FULL]);
}

#[test]
fn shieldgemma_full_row_is_infeasible() {
    let r = derive_confusion(
        683,
        371,
        &ReportedMetrics {
            accuracy: Some(64.80),
            precision: Some(64.96),
            recall: Some(93.56),
            f1: Some(76.68),
        },
        2,
    );
    assert_eq!(r.status, DerivationStatus::Infeasible);
}

#[test]
fn text_subsets() {
    let f = fixture();
    let to = eval(&f, Regime::Multimodal, SubsetKind::TextOnly, &[]);
    assert_eq!(
        row(&to, CASCADE_FULL),
        (
            ConfusionMatrix::new(25, 8, 11, 0),
            [81.82, 86.21, 75.76, 100.00]
        )
    );
    assert_eq!(row(&to, "ShieldGemma-2").1, [59.09, 70.00, 60.00, 84.00]);
    assert_eq!(row(&to, "LlavaGuard").1, [59.09, 60.87, 66.67, 56.00]);

    let tv = eval(&f, Regime::Multimodal, SubsetKind::TextVisual, &[]);
    let (cm, m) = row(&tv, CASCADE_FULL);
    assert_eq!(cm, ConfusionMatrix::new(140, 34, 68, 15));
    assert_eq!(&m[1..], &[85.11, 80.46, 90.32]);
    assert_eq!(m[0], 80.93);
    assert_eq!(row(&tv, "ShieldGemma-2").1, [54.86, 51.67, 72.94, 40.00]);
    assert_eq!(&row(&tv, "LlavaGuard").1[1..], &[79.18, 84.06, 74.84]);
}

#[test]
fn control_set_specificity() {
    let f = fixture();
    for (regime, name) in [
        (Regime::VisionOnly, CASCADE_STAGE1),
        (Regime::Multimodal, CASCADE_FULL),
    ] {
        let r = eval(&f, regime, SubsetKind::ControlSafe, &[name]);
        assert_eq!(r[0].confusion, ConfusionMatrix::new(0, 10, 990, 0));
        assert_eq!(
            modcascade::evalrunner::control_specificity(&r[0]).unwrap(),
            99.00
        );
        assert!(r[0].metrics.is_none());
    }
}

#[test]
fn subset_annotations_match_counts() {
    let f = fixture();
    let m = load_manifest(f.suite.manifest_path()).unwrap();
    let c = |k| filter_subset(&m, k).counts();
    assert_eq!(
        (c(SubsetKind::Full).total, c(SubsetKind::Full).unsafe_),
        (1054, 683)
    );
    assert_eq!(
        (
            c(SubsetKind::TextVisual).total,
            c(SubsetKind::TextVisual).unsafe_
        ),
        (257, 155)
    );
    assert_eq!(
        (
            c(SubsetKind::TextOnly).total,
            c(SubsetKind::TextOnly).unsafe_
        ),
        (44, 25)
    );
}
