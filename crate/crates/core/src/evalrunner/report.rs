//! Report and plot-data emitters.
//!
//! Every format starts with a schema line. Output is a pure function of the
//! input, so identical evaluations give identical bytes.
//!
//! `table_text` layout, one space between columns, numbers right-aligned:
//!
//! ```text
//! # schema: modcascade.report/v1
//! model                        subset       regime            n accuracy precision   recall       f1 specificity latency_ms
//! cascade-stage1               full         vision_only    1054    80.27     82.05    89.02    85.39       64.15       11.7
//! ```
//!
//! Column widths are 28, 12, 12, 6, 8, 9, 8, 8, 11 and 10. Metrics use two
//! decimals, latency one; an undefined value prints as `-`. When deltas are
//! present a `# deltas` block follows after a blank line, with signed values.
//!
//! `delimited` is CSV with the same schema line, a header row and one row
//! per report; deltas follow under a `# deltas` line with their own header.
//! `structured` is pretty-printed JSON of [`ReportBundle`], read back by
//! [`parse_structured`].

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DeltaRow, EvalReport};
use crate::pareto::{pareto_frontier, ParetoPoint};

pub const REPORT_SCHEMA: &str = "modcascade.report/v1";
pub const PLOT_PR_SCHEMA: &str = "modcascade.plot.precision_recall/v1";
pub const PLOT_PARETO_SCHEMA: &str = "modcascade.plot.pareto/v1";
/// Reference line drawn on both axes of the precision/recall plot.
pub const DEFAULT_GUIDE_PCT: f64 = 75.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    TableText,
    Delimited,
    Structured,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" | "table_text" | "text" => Ok(ReportFormat::TableText),
            "delimited" | "csv" => Ok(ReportFormat::Delimited),
            "structured" | "json" => Ok(ReportFormat::Structured),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::TableText => "txt",
            ReportFormat::Delimited => "csv",
            ReportFormat::Structured => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema: String,
    pub reports: Vec<EvalReport>,
    pub deltas: Vec<DeltaRow>,
}

impl ReportBundle {
    pub fn new(reports: Vec<EvalReport>, deltas: Vec<DeltaRow>) -> Self {
        Self {
            schema: REPORT_SCHEMA.to_string(),
            reports,
            deltas,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportParseError {
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported report schema `{0}`")]
    Schema(String),
}

pub fn emit_report(bundle: &ReportBundle, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::TableText => table_text(bundle).into_bytes(),
        ReportFormat::Delimited => delimited(bundle),
        ReportFormat::Structured => {
            let mut out = serde_json::to_vec_pretty(bundle).expect("report serializes");
            out.push(b'\n');
            out
        }
    }
}

pub fn parse_structured(bytes: &[u8]) -> Result<ReportBundle, ReportParseError> {
    let bundle: ReportBundle = serde_json::from_slice(bytes)?;
    if bundle.schema != REPORT_SCHEMA {
        return Err(ReportParseError::Schema(bundle.schema));
    }
    Ok(bundle)
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.decimals$}"))
}

fn signed(v: f64, decimals: usize) -> String {
    // avoid printing "-0.00"
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:+.decimals$}")
}

fn table_text(bundle: &ReportBundle) -> String {
    let mut s = String::new();
    writeln!(s, "# schema: {}", bundle.schema).unwrap();
    writeln!(
        s,
        "{:<28} {:<12} {:<12} {:>6} {:>8} {:>9} {:>8} {:>8} {:>11} {:>10}",
        "model",
        "subset",
        "regime",
        "n",
        "accuracy",
        "precision",
        "recall",
        "f1",
        "specificity",
        "latency_ms"
    )
    .unwrap();
    for r in &bundle.reports {
        let m = r.metrics;
        writeln!(
            s,
            "{:<28} {:<12} {:<12} {:>6} {:>8} {:>9} {:>8} {:>8} {:>11} {:>10}",
            r.model,
            r.subset.as_str(),
            r.regime.as_str(),
            r.n,
            opt(m.map(|m| m.accuracy), 2),
            opt(m.map(|m| m.precision), 2),
            opt(m.map(|m| m.recall), 2),
            opt(m.map(|m| m.f1), 2),
            opt(r.specificity, 2),
            opt(r.latency.map(|l| l.mean_ms), 1),
        )
        .unwrap();
    }
    if !bundle.deltas.is_empty() {
        s.push('\n');
        s.push_str("# deltas\n");
        writeln!(
            s,
            "{:<41} {:<12} {:>10} {:>11} {:>8} {:>8} {:>12}",
            "stage1 -> full",
            "subset",
            "d_accuracy",
            "d_precision",
            "d_recall",
            "d_f1",
            "d_latency_ms"
        )
        .unwrap();
        for d in &bundle.deltas {
            writeln!(
                s,
                "{:<41} {:<12} {:>10} {:>11} {:>8} {:>8} {:>12}",
                format!("{} -> {}", d.stage1_model, d.full_model),
                d.subset.as_str(),
                signed(d.d_accuracy, 2),
                signed(d.d_precision, 2),
                signed(d.d_recall, 2),
                signed(d.d_f1, 2),
                d.d_latency_ms.map_or_else(|| "-".into(), |v| signed(v, 1)),
            )
            .unwrap();
        }
    }
    s
}

fn csv_block<I, R>(out: &mut Vec<u8>, header: &[&str], rows: I)
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    out.extend(w.into_inner().expect("in-memory flush"));
}

fn delimited(bundle: &ReportBundle) -> Vec<u8> {
    let mut out = format!("# schema: {}\n", bundle.schema).into_bytes();
    csv_block(
        &mut out,
        &[
            "model",
            "subset",
            "regime",
            "n",
            "tp",
            "fp",
            "tn",
            "fn",
            "accuracy",
            "precision",
            "recall",
            "f1",
            "specificity",
            "latency_ms",
            "stage2_fraction",
            "warmup_discarded",
            "threshold",
            "template_version",
        ],
        bundle.reports.iter().map(|r| {
            let m = r.metrics;
            let c = r.confusion;
            vec![
                r.model.clone(),
                r.subset.as_str().into(),
                r.regime.as_str().into(),
                r.n.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.tn.to_string(),
                c.fn_.to_string(),
                opt(m.map(|m| m.accuracy), 2),
                opt(m.map(|m| m.precision), 2),
                opt(m.map(|m| m.recall), 2),
                opt(m.map(|m| m.f1), 2),
                opt(r.specificity, 2),
                opt(r.latency.map(|l| l.mean_ms), 3),
                opt(r.latency.map(|l| l.stage2_fraction), 4),
                r.latency
                    .map_or_else(|| "-".into(), |l| l.warmup_discarded.to_string()),
                opt(r.threshold, 2),
                r.template_version.clone().unwrap_or_else(|| "-".into()),
            ]
        }),
    );
    if !bundle.deltas.is_empty() {
        out.extend_from_slice(b"# deltas\n");
        csv_block(
            &mut out,
            &[
                "stage1_model",
                "full_model",
                "subset",
                "d_accuracy",
                "d_precision",
                "d_recall",
                "d_f1",
                "d_latency_ms",
            ],
            bundle.deltas.iter().map(|d| {
                vec![
                    d.stage1_model.clone(),
                    d.full_model.clone(),
                    d.subset.as_str().into(),
                    signed(d.d_accuracy, 2),
                    signed(d.d_precision, 2),
                    signed(d.d_recall, 2),
                    signed(d.d_f1, 2),
                    d.d_latency_ms.map_or_else(|| "-".into(), |v| signed(v, 3)),
                ]
            }),
        );
    }
    out
}

/// The two plot-data files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotData {
    /// `name,precision,recall,regime`; guide value in a `# guide_pct:` line.
    pub precision_recall: Vec<u8>,
    /// `name,latency_ms,accuracy_pct,frontier_member`.
    pub pareto: Vec<u8>,
}

impl PlotData {
    pub const PR_FILE: &'static str = "precision_recall.csv";
    pub const PARETO_FILE: &'static str = "pareto.csv";

    pub fn write_to(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(Self::PR_FILE), &self.precision_recall)?;
        std::fs::write(dir.join(Self::PARETO_FILE), &self.pareto)
    }
}

/// Reports without metrics are left out of the precision/recall file;
/// reports without metrics or latency are left out of the Pareto file.
pub fn emit_plot_data(reports: &[EvalReport], guide_pct: f64) -> PlotData {
    let mut pr = format!("# schema: {PLOT_PR_SCHEMA}\n# guide_pct: {guide_pct}\n").into_bytes();
    csv_block(
        &mut pr,
        &["name", "precision", "recall", "regime"],
        reports.iter().filter_map(|r| {
            let m = r.metrics?;
            Some(vec![
                r.model.clone(),
                format!("{:.2}", m.precision),
                format!("{:.2}", m.recall),
                r.regime.as_str().to_string(),
            ])
        }),
    );

    let points: Vec<ParetoPoint> = reports
        .iter()
        .filter_map(|r| {
            ParetoPoint::new(r.model.clone(), r.latency?.mean_ms, r.metrics?.accuracy).ok()
        })
        .collect();
    let frontier = pareto_frontier(&points);
    let mut pareto = format!("# schema: {PLOT_PARETO_SCHEMA}\n").into_bytes();
    csv_block(
        &mut pareto,
        &["name", "latency_ms", "accuracy_pct", "frontier_member"],
        points.iter().map(|p| {
            vec![
                p.name.clone(),
                format!("{:.3}", p.latency_ms),
                format!("{:.2}", p.accuracy_pct),
                frontier.contains(p).to_string(),
            ]
        }),
    );
    PlotData {
        precision_recall: pr,
        pareto,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::LatencySummary;
    use crate::metrics::{ConfusionMatrix, MetricSet};
    use crate::pipeline::Regime;
    use crate::subsets::SubsetKind;

    fn report(model: &str, acc: f64, p: f64, r: f64, latency: f64) -> EvalReport {
        EvalReport {
            model: model.into(),
            subset: SubsetKind::Full,
            regime: Regime::VisionOnly,
            n: 10,
            confusion: ConfusionMatrix::new(4, 1, 4, 1),
            metrics: Some(MetricSet {
                accuracy: acc,
                precision: p,
                recall: r,
                f1: 80.0,
            }),
            specificity: Some(80.0),
            latency: Some(LatencySummary {
                mean_ms: latency,
                count: 10,
                warmup_discarded: 3,
                stage2_fraction: 0.0,
            }),
            threshold: Some(0.5),
            template_version: None,
        }
    }

    #[test]
    fn table_has_header_and_row() {
        let b = ReportBundle::new(vec![report("m", 80.0, 80.0, 80.0, 5.0)], vec![]);
        let text = String::from_utf8(emit_report(&b, ReportFormat::TableText)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "# schema: modcascade.report/v1");
        assert_eq!(lines[1].len(), lines[2].len());
        assert!(lines[2].starts_with("m "));
        assert!(lines[2].ends_with("5.0"));
    }

    #[test]
    fn emission_is_deterministic() {
        let b = ReportBundle::new(
            vec![
                report("a", 70.0, 60.0, 50.0, 1.0),
                report("b", 71.0, 61.0, 51.0, 2.0),
            ],
            vec![],
        );
        for f in [
            ReportFormat::TableText,
            ReportFormat::Delimited,
            ReportFormat::Structured,
        ] {
            assert_eq!(emit_report(&b, f), emit_report(&b.clone(), f));
        }
    }

    #[test]
    fn structured_round_trip() {
        let mut r = report("x,\"quoted\"", 80.27, 82.05, 89.02, 11.700000000000003);
        r.template_version = Some("payload/v1".into());
        let mut none = report("ctrl", 0.0, 0.0, 0.0, 1.0);
        none.metrics = None;
        none.latency = None;
        let b = ReportBundle::new(vec![r, none], vec![]);
        let parsed = parse_structured(&emit_report(&b, ReportFormat::Structured)).unwrap();
        assert_eq!(parsed, b);
        let mut wrong = b.clone();
        wrong.schema = "other/v9".into();
        assert!(matches!(
            parse_structured(&emit_report(&wrong, ReportFormat::Structured)),
            Err(ReportParseError::Schema(_))
        ));
    }

    #[test]
    fn delimited_quotes_names() {
        let b = ReportBundle::new(vec![report("a,b", 1.0, 2.0, 3.0, 4.0)], vec![]);
        let text = String::from_utf8(emit_report(&b, ReportFormat::Delimited)).unwrap();
        assert!(text
            .lines()
            .nth(2)
            .unwrap()
            .starts_with("\"a,b\",full,vision_only,10,4,1,4,1,1.00,2.00,3.00"));
    }

    #[test]
    fn empty_plot_data_is_headers_only() {
        let p = emit_plot_data(&[], DEFAULT_GUIDE_PCT);
        assert_eq!(
            String::from_utf8(p.precision_recall).unwrap(),
            "# schema: modcascade.plot.precision_recall/v1\n# guide_pct: 75\nname,precision,recall,regime\n"
        );
        assert_eq!(
            String::from_utf8(p.pareto).unwrap(),
            "# schema: modcascade.plot.pareto/v1\nname,latency_ms,accuracy_pct,frontier_member\n"
        );
    }

    #[test]
    fn pareto_flags() {
        let reports = vec![
            report("slow", 70.0, 1.0, 1.0, 100.0),
            report("fast", 80.0, 1.0, 1.0, 10.0),
        ];
        let p = String::from_utf8(emit_plot_data(&reports, 75.0).pareto).unwrap();
        assert!(p.contains("slow,100.000,70.00,false"));
        assert!(p.contains("fast,10.000,80.00,true"));
    }
}
