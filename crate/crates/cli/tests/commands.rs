use std::path::Path;
use std::process::Command;

use modcascade::evalrunner::parse_structured;
use modcascade::subsets::ClassCounts;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let mut argv = vec!["modcascade"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = modcascade_cli::run(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn reference(dir: &Path) {
    let r = run(&["fixture-gen", "--preset", "reference", "--out", p(dir)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
}

#[test]
fn derive_unique_row() {
    let r = run(&[
        "derive",
        "--pos",
        "683",
        "--neg",
        "371",
        "--precision",
        "86.17",
        "--recall",
        "83.02",
        "--accuracy",
        "80.36",
        "--f1",
        "84.56",
    ]);
    assert_eq!(r.code, 0);
    assert_eq!(r.stdout, "status: unique\ntp=567 fp=91 tn=280 fn=116\n");
    assert!(r.stderr.is_empty());
}

#[test]
fn derive_infeasible_row_exits_one() {
    let r = run(&[
        "derive",
        "--pos",
        "683",
        "--neg",
        "371",
        "--accuracy",
        "64.80",
        "--precision",
        "64.96",
        "--recall",
        "93.56",
        "--f1",
        "76.68",
        "--decimals",
        "2",
    ]);
    assert_eq!(r.code, 1);
    let mut lines = r.stdout.lines();
    assert_eq!(lines.next(), Some("status: infeasible"));
    assert!(lines.all(|l| l.starts_with("nearest: tp=")));
    assert!(r.stderr.starts_with("error: "));

    let json = run(&[
        "derive",
        "--pos",
        "683",
        "--neg",
        "371",
        "--accuracy",
        "64.80",
        "--precision",
        "64.96",
        "--recall",
        "93.56",
        "--f1",
        "76.68",
        "--format",
        "json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&json.stdout).unwrap();
    assert_eq!(v["status"], "infeasible");
}

#[test]
fn usage_errors_exit_two() {
    let r = run(&["derive", "--pos", "1", "--neg", "1", "--bogus"]);
    assert_eq!(r.code, 2);
    assert!(r.stdout.is_empty());
    assert!(r.stderr.contains("--bogus"));
    assert_eq!(run(&["derive", "--pos", "10", "--neg", "5"]).code, 2);
    assert_eq!(run(&[]).code, 2);
    assert_eq!(run(&["--help"]).code, 0);
    assert_eq!(
        run(&[
            "moderate",
            "--image",
            "x",
            "--tau-low",
            "0.9",
            "--tau-high",
            "0.1",
            "--fixtures",
            "/nonexistent"
        ])
        .code,
        2
    );
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_modcascade");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(code(&["--version"]), Some(0));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(
        code(&["report", "--input", "/nonexistent/report.json"]),
        Some(3)
    );
}

#[test]
fn fixture_gen_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = run(&[
            "fixture-gen",
            "--tp",
            "30",
            "--fp",
            "5",
            "--tn",
            "20",
            "--fn",
            "8",
            "--text-visual",
            "20/12",
            "--text-only",
            "6/4",
            "--seed",
            "9",
            "--out",
            p(out),
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        assert_eq!(r.stdout.trim(), p(&out.join("suite.toml")));
    }
    let read = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(read(&a), read(&b));

    let r = run(&["eval", "--fixtures", p(&a), "--format", "structured"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let bundle = parse_structured(r.stdout.as_bytes()).unwrap();
    for rep in &bundle.reports {
        assert_eq!(
            rep.confusion,
            modcascade::ConfusionMatrix::new(30, 5, 20, 8)
        );
    }

    let bad = run(&[
        "fixture-gen",
        "--tp",
        "1",
        "--fp",
        "1",
        "--tn",
        "1",
        "--fn",
        "1",
        "--text-visual",
        "9/1",
        "--out",
        p(&a),
    ]);
    assert_eq!(bad.code, 2, "{}", bad.stderr);
}

#[test]
fn subset_counts_and_records() {
    let dir = tempfile::tempdir().unwrap();
    reference(dir.path());
    let manifest = dir.path().join("manifest.jsonl");
    let r = run(&[
        "subset",
        "--manifest",
        p(&manifest),
        "--kind",
        "text_only",
        "--counts",
    ]);
    assert_eq!(r.code, 0);
    let c: ClassCounts = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!((c.total, c.unsafe_, c.safe), (44, 25, 19));

    let r = run(&[
        "subset",
        "--manifest",
        p(&manifest),
        "--kind",
        "text_visual",
        "--expect",
        "257/155",
    ]);
    assert_eq!(r.code, 0);
    assert_eq!(r.stdout.lines().count(), 257);
    for line in r.stdout.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["text_present"], true);
    }
    assert_eq!(
        run(&[
            "subset",
            "--manifest",
            p(&manifest),
            "--kind",
            "full",
            "--expect",
            "1000/600"
        ])
        .code,
        1
    );
}

#[test]
fn eval_writes_reports_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    reference(dir.path());
    let out = dir.path().join("out");
    let r = run(&["eval", "--fixtures", p(dir.path()), "--out", p(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.starts_with("# schema: modcascade.report/v1\n"));
    assert!(r.stdout.contains("# deltas"));
    let txt = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(txt, r.stdout);
    let pareto = std::fs::read_to_string(out.join("pareto.csv")).unwrap();
    assert_eq!(pareto.lines().filter(|l| l.ends_with(",true")).count(), 3);

    // re-render from the structured report
    let again = run(&[
        "report",
        "--input",
        p(&out.join("report.json")),
        "--format",
        "delimited",
    ]);
    assert_eq!(again.code, 0);
    assert_eq!(
        again.stdout.as_bytes(),
        std::fs::read(out.join("report.csv")).unwrap()
    );
    let plots = dir.path().join("plots");
    assert_eq!(
        run(&[
            "report",
            "--input",
            p(&out.join("report.json")),
            "--plots",
            p(&plots)
        ])
        .code,
        0
    );
    assert_eq!(
        std::fs::read(plots.join("pareto.csv")).unwrap(),
        pareto.as_bytes()
    );

    // sequential scoring gives the same report
    let seq = run(&[
        "eval",
        "--fixtures",
        p(dir.path()),
        "--sequential",
        "--format",
        "structured",
    ]);
    let json = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert_eq!(seq.stdout, json);
}

#[test]
fn eval_control_set() {
    let dir = tempfile::tempdir().unwrap();
    reference(dir.path());
    let r = run(&[
        "eval",
        "--fixtures",
        p(dir.path()),
        "--subset",
        "control",
        "--regime",
        "multimodal",
        "--model",
        "cascade-stage1+2",
        "--format",
        "structured",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let bundle = parse_structured(r.stdout.as_bytes()).unwrap();
    assert_eq!(bundle.reports[0].specificity, Some(99.0));
    assert!(r.stderr.contains("specificity 99.00%"));

    // baselines have no control replay rows: reported as findings
    let r = run(&[
        "eval",
        "--fixtures",
        p(dir.path()),
        "--subset",
        "control",
        "--regime",
        "vision_only",
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("model failed"));

    let r = run(&["eval", "--fixtures", p(dir.path()), "--model", "nope"]);
    assert_eq!(r.code, 2);
}

#[test]
fn moderate_replay_and_live() {
    let dir = tempfile::tempdir().unwrap();
    reference(dir.path());
    let r = run(&[
        "moderate",
        "--image",
        "img-0001",
        "--fixtures",
        p(dir.path()),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["image_id"], "img-0001");
    assert_eq!(v["regime"], "multimodal");

    let r = run(&[
        "moderate",
        "--image",
        "img-0001",
        "--fixtures",
        p(dir.path()),
        "--regime",
        "vision_only",
    ]);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["routing"]["reason"], "stage2_disabled");

    let r = run(&[
        "moderate",
        "--image",
        "missing",
        "--fixtures",
        p(dir.path()),
    ]);
    assert_eq!(r.code, 3);
    assert!(r.stdout.is_empty());

    let img = dir.path().join("photo.bin");
    std::fs::write(&img, b"\x89PNG not really").unwrap();
    let r = run(&["moderate", "--image", p(&img), "--tau-low", "0.0"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["routing"]["invoke_stage2"], true);
}

#[test]
fn bench_reports_frontier() {
    let dir = tempfile::tempdir().unwrap();
    reference(dir.path());
    let r = run(&[
        "bench",
        "--fixtures",
        p(dir.path()),
        "--warmup",
        "3",
        "--clock",
        "fake",
        "--format",
        "json",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(rows.len(), 8);
    let mut frontier: Vec<&str> = rows
        .iter()
        .filter(|r| r["frontier"] == true)
        .map(|r| r["model"].as_str().unwrap())
        .collect();
    frontier.sort();
    assert_eq!(frontier, ["Adam-ViT", "cascade-stage1", "cascade-stage1+2"]);
    let s1 = rows
        .iter()
        .find(|r| r["model"] == "cascade-stage1")
        .unwrap();
    assert_eq!(s1["latency"]["warmup_discarded"], 3);
    assert!((s1["latency"]["mean_ms"].as_f64().unwrap() - 11.7).abs() < 1e-9);

    let table = run(&[
        "bench",
        "--fixtures",
        p(dir.path()),
        "--regime",
        "vision_only",
    ]);
    assert_eq!(table.code, 0);
    assert_eq!(table.stdout.lines().count(), 6);
}
