use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use modcascade::adapters::replay::load_replay;
use modcascade::adapters::synthetic::synthetic_live_backends;
use modcascade::adapters::ImageRef;
use modcascade::evalrunner::{
    control_specificity, emit_plot_data, emit_report, parse_structured, run_eval, stage2_delta,
    EvalOptions, EvalReport, ReportBundle, ReportFormat, Suite,
};
use modcascade::fixtures::{generate, FixturePlan, CASCADE_FILE, SUITE_FILE};
use modcascade::metrics::{derive_confusion, ConfusionMatrix, DerivationStatus, ReportedMetrics};
use modcascade::pareto::{pareto_frontier, ParetoPoint};
use modcascade::pipeline::PipelineConfig;
use modcascade::subsets::{filter_subset, load_manifest, validate_counts, SubsetKind};
use modcascade::{Execution, Pipeline};
use modcascade_service::ServiceConfig;

use crate::{
    BenchArgs, BenchFormat, CliError, Command, DeriveArgs, DeriveFormat, EvalArgs, FixtureGenArgs,
    ModerateArgs, Preset, ReportArgs, ServeArgs, SubsetArgs, SuiteArgs,
};

pub(crate) fn dispatch(
    cmd: Command,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    match cmd {
        Command::Moderate(a) => moderate(a, out),
        Command::Eval(a) => eval(a, out, err),
        Command::Bench(a) => bench(a, out, err),
        Command::Derive(a) => derive(a, out),
        Command::Subset(a) => subset(a, out, err),
        Command::FixtureGen(a) => fixture_gen(a, out),
        Command::Serve(a) => serve(a, err),
        Command::Report(a) => report(a, out),
    }
}

fn in_dir(p: &Path, file: &str) -> PathBuf {
    if p.is_dir() {
        p.join(file)
    } else {
        p.to_path_buf()
    }
}

fn moderate(a: ModerateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = a.tau_low {
        cfg.tau_low = v;
    }
    if let Some(v) = a.tau_high {
        cfg.tau_high = v;
    }
    if a.no_text_trigger {
        cfg.text_trigger = false;
    }
    if let Some(r) = a.regime {
        cfg.regime = r;
    }
    let routing = cfg.routing();
    routing
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let (backends, image) = match &a.fixtures {
        Some(f) => (
            load_replay(in_dir(f, CASCADE_FILE))?.backends(),
            ImageRef::id(&a.image),
        ),
        None => {
            let path = Path::new(&a.image);
            let bytes = std::fs::read(path).map_err(CliError::io(path))?;
            (
                synthetic_live_backends(),
                ImageRef::with_payload(&a.image, bytes),
            )
        }
    };
    let decision = Pipeline::new(backends, routing).moderate(&image, cfg.regime)?;
    serde_json::to_writer_pretty(&mut *out, &decision).map_err(std::io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

struct SuiteRun {
    reports: Vec<EvalReport>,
    failures: usize,
}

fn run_suite(
    s: &SuiteArgs,
    subset: SubsetKind,
    err: &mut dyn Write,
) -> Result<(Suite, SuiteRun), CliError> {
    let suite = Suite::load(in_dir(&s.fixtures, SUITE_FILE))?;
    let manifest_path = match (&s.manifest, subset) {
        (Some(p), _) => p.clone(),
        (None, SubsetKind::ControlSafe) => suite.control_manifest_path().ok_or_else(|| {
            CliError::Usage("the suite has no control manifest; pass --manifest".into())
        })?,
        (None, _) => suite.manifest_path(),
    };
    let manifest = load_manifest(&manifest_path)?;

    for name in &s.models {
        if suite.model(name).is_none() {
            return Err(CliError::Usage(format!(
                "model `{name}` is not in the suite"
            )));
        }
    }
    let entries: Vec<_> = suite
        .entries(s.clock)?
        .into_iter()
        .filter(|e| s.models.is_empty() || s.models.contains(&e.name))
        .collect();
    let opts = EvalOptions {
        warmup: s.warmup,
        measure_latency: true,
        exec: if s.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        },
    };

    let mut run = SuiteRun {
        reports: Vec::new(),
        failures: 0,
    };
    for &regime in s.regime.regimes() {
        let group: Vec<_> = entries
            .iter()
            .filter(|e| e.regime == regime)
            .cloned()
            .collect();
        if group.is_empty() {
            continue;
        }
        let outcome = run_eval(&group, &manifest, subset, regime, &opts)?;
        for f in &outcome.failures {
            writeln!(err, "model failed: {f}")?;
        }
        run.failures += outcome.failures.len();
        run.reports.extend(outcome.reports);
    }
    if run.reports.is_empty() && run.failures == 0 {
        return Err(CliError::Usage(
            "no models selected for the requested regime".into(),
        ));
    }
    Ok((suite, run))
}

fn eval(a: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let (suite, run) = run_suite(&a.suite, a.subset, err)?;

    let by_name: HashMap<&str, &EvalReport> =
        run.reports.iter().map(|r| (r.model.as_str(), r)).collect();
    let mut deltas = Vec::new();
    for d in &suite.deltas {
        if let (Some(s1), Some(full)) =
            (by_name.get(d.stage1.as_str()), by_name.get(d.full.as_str()))
        {
            // undefined metrics (control sets) have no delta to show
            if s1.metrics.is_some() && full.metrics.is_some() {
                deltas.push(stage2_delta(s1, full)?);
            }
        }
    }
    if a.subset == SubsetKind::ControlSafe {
        for r in &run.reports {
            if let Ok(spec) = control_specificity(r) {
                writeln!(err, "{}: specificity {:.2}%", r.model, spec)?;
            }
        }
    }

    let bundle = ReportBundle::new(run.reports, deltas);
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        for fmt in [
            ReportFormat::TableText,
            ReportFormat::Delimited,
            ReportFormat::Structured,
        ] {
            let path = dir.join(format!("report.{}", fmt.extension()));
            std::fs::write(&path, emit_report(&bundle, fmt)).map_err(CliError::io(&path))?;
        }
        emit_plot_data(&bundle.reports, a.guide_pct)
            .write_to(dir)
            .map_err(CliError::io(dir))?;
    }
    out.write_all(&emit_report(&bundle, a.format))?;

    if run.failures > 0 {
        return Err(CliError::Findings(format!(
            "{} model(s) failed",
            run.failures
        )));
    }
    Ok(())
}

fn bench(a: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let (_, run) = run_suite(&a.suite, SubsetKind::Full, err)?;
    let points: Vec<ParetoPoint> = run
        .reports
        .iter()
        .filter_map(|r| {
            let lat = r.latency?.mean_ms;
            let acc = r.metrics?.accuracy;
            ParetoPoint::new(&r.model, lat, acc).ok()
        })
        .collect();
    let frontier: Vec<String> = pareto_frontier(&points)
        .into_iter()
        .map(|p| p.name)
        .collect();

    match a.format {
        BenchFormat::Json => {
            let rows: Vec<_> = run
                .reports
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "model": r.model,
                        "regime": r.regime,
                        "latency": r.latency,
                        "accuracy": r.metrics.map(|m| m.accuracy),
                        "frontier": frontier.contains(&r.model),
                    })
                })
                .collect();
            serde_json::to_writer_pretty(&mut *out, &rows).map_err(std::io::Error::from)?;
            writeln!(out)?;
        }
        BenchFormat::Table => {
            writeln!(
                out,
                "{:<28} {:<12} {:>10} {:>6} {:>7} {:>8} {:>8} {:>9}",
                "model", "regime", "mean_ms", "n", "warmup", "stage2", "accuracy", "frontier"
            )?;
            for r in &run.reports {
                let Some(l) = r.latency else { continue };
                writeln!(
                    out,
                    "{:<28} {:<12} {:>10.3} {:>6} {:>7} {:>8.3} {:>8} {:>9}",
                    r.model,
                    r.regime.as_str(),
                    l.mean_ms,
                    l.count,
                    l.warmup_discarded,
                    l.stage2_fraction,
                    r.metrics
                        .map_or_else(|| "-".into(), |m| format!("{:.2}", m.accuracy)),
                    frontier.contains(&r.model),
                )?;
            }
        }
    }
    if run.failures > 0 {
        return Err(CliError::Findings(format!(
            "{} model(s) failed",
            run.failures
        )));
    }
    Ok(())
}

fn fmt_cm(m: &ConfusionMatrix) -> String {
    format!("tp={} fp={} tn={} fn={}", m.tp, m.fp, m.tn, m.fn_)
}

fn derive(a: DeriveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let reported = ReportedMetrics {
        accuracy: a.accuracy,
        precision: a.precision,
        recall: a.recall,
        f1: a.f1,
    };
    if reported == ReportedMetrics::default() {
        return Err(CliError::Usage(
            "give at least one of --accuracy --precision --recall --f1".into(),
        ));
    }
    if a.pos + a.neg == 0 {
        return Err(CliError::Usage(
            "--pos and --neg cannot both be zero".into(),
        ));
    }
    let res = derive_confusion(a.pos, a.neg, &reported, a.decimals);
    match a.format {
        DeriveFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, &res).map_err(std::io::Error::from)?;
            writeln!(out)?;
        }
        DeriveFormat::Text => {
            let status = match res.status {
                DerivationStatus::Unique => "unique",
                DerivationStatus::Multiple => "multiple",
                DerivationStatus::Infeasible => "infeasible",
            };
            writeln!(out, "status: {status}")?;
            for (m, g) in res.matrices.iter().zip(&res.discrepancy) {
                if res.status == DerivationStatus::Infeasible {
                    writeln!(out, "nearest: {} max_gap={:.4}", fmt_cm(m), g.max())?;
                } else {
                    writeln!(out, "{}", fmt_cm(m))?;
                }
            }
        }
    }
    if res.status == DerivationStatus::Infeasible {
        return Err(CliError::Findings(
            "no integer confusion matrix reproduces the reported metrics".into(),
        ));
    }
    Ok(())
}

fn subset(a: SubsetArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let m = filter_subset(&load_manifest(&a.manifest)?, a.kind);
    let counts = m.counts();
    if a.counts {
        serde_json::to_writer(&mut *out, &counts).map_err(std::io::Error::from)?;
        writeln!(out)?;
    } else {
        m.write(&mut *out)?;
        writeln!(err, "{}: {}", a.kind, counts)?;
    }
    if let Some(expected) = a.expect {
        let rep = validate_counts(&m, expected);
        if !rep.pass {
            return Err(CliError::Findings(format!(
                "{} has {}, expected {}",
                a.kind, rep.actual, rep.expected
            )));
        }
    }
    Ok(())
}

fn fixture_gen(a: FixtureGenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let plan = match (a.preset, a.tp, a.fp, a.tn, a.fn_) {
        (Some(Preset::Reference), ..) => FixturePlan::reference(a.seed),
        (None, Some(tp), Some(fp), Some(tn), Some(fn_)) => FixturePlan::single(
            ConfusionMatrix::new(tp, fp, tn, fn_),
            a.text_visual,
            a.text_only,
            a.seed,
        ),
        _ => {
            return Err(CliError::Usage(
                "give --preset or all of --tp --fp --tn --fn".into(),
            ))
        }
    };
    let set = generate(&plan)?;
    std::fs::create_dir_all(&a.out).map_err(CliError::io(&a.out))?;
    set.write_to(&a.out)?;
    writeln!(out, "{}", a.out.join(SUITE_FILE).display())?;
    Ok(())
}

fn serve(a: ServeArgs, err: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    }
    .with_env();
    if let Some(l) = a.listen {
        cfg.listen = l;
    }
    if let Some(f) = a.fixtures {
        cfg.fixtures = Some(in_dir(&f, CASCADE_FILE));
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(modcascade_service::serve(cfg, |addr| {
        let _ = writeln!(err, "listening on {addr}");
    }))?;
    Ok(())
}

fn report(a: ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let bytes = std::fs::read(&a.input).map_err(CliError::io(&a.input))?;
    let bundle = parse_structured(&bytes)?;
    if let Some(dir) = &a.plots {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        emit_plot_data(&bundle.reports, a.guide_pct)
            .write_to(dir)
            .map_err(CliError::io(dir))?;
    }
    out.write_all(&emit_report(&bundle, a.format))?;
    Ok(())
}
