//! Dataset manifests and text-subset filtering.
//!
//! A manifest is line-delimited JSON, one image per line:
//!
//! ```text
//! {"id":"img-0001","label":"unsafe","text_present":true,"text_primary":false,"source":"unsafebench_sexual"}
//! ```
//!
//! All five fields are required and no others are accepted. `source` is one
//! of `unsafebench_sexual`, `pass_control`, `other`. Blank lines and lines
//! starting with `#` are skipped. Subset membership comes from these
//! annotations, never from an OCR backend.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::Verdict;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("reading manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: invariant violation: {message}")]
    InvariantViolation { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    UnsafebenchSexual,
    PassControl,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub label: Verdict,
    pub text_present: bool,
    pub text_primary: bool,
    pub source: Source,
}

impl ImageRecord {
    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.text_primary && !self.text_present {
            return Err(format!("`{}`: text_primary without text_present", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub records: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> ClassCounts {
        let unsafe_ = self.records.iter().filter(|r| r.label.is_unsafe()).count();
        ClassCounts {
            total: self.records.len(),
            unsafe_,
            safe: self.records.len() - unsafe_,
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            writeln!(
                out,
                "{}",
                serde_json::to_string(r).expect("record serializes")
            )?;
        }
        Ok(())
    }
}

pub fn parse_manifest<R: BufRead>(reader: R, name: &str) -> Result<DatasetManifest, ManifestError> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record: ImageRecord =
            serde_json::from_str(trimmed).map_err(|e| ManifestError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        record
            .validate()
            .map_err(|message| ManifestError::InvariantViolation {
                line: line_no,
                message,
            })?;
        if !seen.insert(record.id.clone()) {
            return Err(ManifestError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(DatasetManifest {
        name: name.to_string(),
        records,
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path)?;
    parse_manifest(std::io::BufReader::new(file), &name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetKind {
    Full,
    TextVisual,
    TextOnly,
    ControlSafe,
}

impl SubsetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SubsetKind::Full => "full",
            SubsetKind::TextVisual => "text_visual",
            SubsetKind::TextOnly => "text_only",
            SubsetKind::ControlSafe => "control_safe",
        }
    }

    pub fn contains(self, r: &ImageRecord) -> bool {
        match self {
            SubsetKind::Full => true,
            SubsetKind::TextVisual => r.text_present,
            SubsetKind::TextOnly => r.text_primary,
            SubsetKind::ControlSafe => r.source == Source::PassControl,
        }
    }
}

impl fmt::Display for SubsetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SubsetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '+'], "_").as_str() {
            "full" => Ok(SubsetKind::Full),
            "text_visual" => Ok(SubsetKind::TextVisual),
            "text_only" => Ok(SubsetKind::TextOnly),
            "control_safe" | "control" => Ok(SubsetKind::ControlSafe),
            other => Err(format!("unknown subset `{other}`")),
        }
    }
}

/// Records of `m` in `kind`, in manifest order.
pub fn filter_subset(m: &DatasetManifest, kind: SubsetKind) -> DatasetManifest {
    let name = if kind == SubsetKind::Full {
        m.name.clone()
    } else {
        format!("{}:{}", m.name, kind)
    };
    DatasetManifest {
        name,
        records: m
            .records
            .iter()
            .filter(|r| kind.contains(r))
            .cloned()
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub total: usize,
    #[serde(rename = "unsafe")]
    pub unsafe_: usize,
    pub safe: usize,
}

impl fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} unsafe, {} safe)",
            self.total, self.unsafe_, self.safe
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    pub expected: ClassCounts,
    pub actual: ClassCounts,
    pub pass: bool,
}

pub fn validate_counts(m: &DatasetManifest, expected: ClassCounts) -> CountReport {
    let actual = m.counts();
    CountReport {
        expected,
        actual,
        pass: actual == expected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, label: Verdict, present: bool, primary: bool) -> ImageRecord {
        ImageRecord {
            id: id.into(),
            label,
            text_present: present,
            text_primary: primary,
            source: Source::UnsafebenchSexual,
        }
    }

    #[test]
    fn parse_three_lines() {
        let text = r#"{"id":"a","label":"unsafe","text_present":true,"text_primary":false,"source":"unsafebench_sexual"}
# comment
{"id":"b","label":"safe","text_present":false,"text_primary":false,"source":"pass_control"}
{"id":"c","label":"safe","text_present":true,"text_primary":true,"source":"other"}
"#;
        let m = parse_manifest(text.as_bytes(), "t").unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.records[1].source, Source::PassControl);
    }

    #[test]
    fn primary_without_present_rejected() {
        let text = r#"{"id":"a","label":"unsafe","text_present":false,"text_primary":true,"source":"other"}"#;
        assert!(matches!(
            parse_manifest(text.as_bytes(), "t"),
            Err(ManifestError::InvariantViolation { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_id_rejected() {
        let line = r#"{"id":"a","label":"unsafe","text_present":false,"text_primary":false,"source":"other"}"#;
        let text = format!("{line}\n{line}\n");
        assert!(matches!(
            parse_manifest(text.as_bytes(), "t"),
            Err(ManifestError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_field_rejected() {
        let text = r#"{"id":"a","label":"unsafe","text_present":false,"text_primary":false,"source":"other","agreement":0.9}"#;
        assert!(matches!(
            parse_manifest(text.as_bytes(), "t"),
            Err(ManifestError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn text_visual_counts() {
        let m = DatasetManifest {
            name: "m".into(),
            records: vec![
                rec("1", Verdict::Safe, true, false),
                rec("2", Verdict::Safe, false, false),
                rec("3", Verdict::Unsafe, true, true),
                rec("4", Verdict::Unsafe, false, false),
                rec("5", Verdict::Safe, false, false),
            ],
        };
        assert_eq!(filter_subset(&m, SubsetKind::TextVisual).len(), 2);
        assert_eq!(filter_subset(&m, SubsetKind::TextOnly).len(), 1);
        assert_eq!(filter_subset(&m, SubsetKind::Full), m);
    }

    #[test]
    fn count_validation() {
        let m = DatasetManifest {
            name: "m".into(),
            records: vec![
                rec("1", Verdict::Unsafe, false, false),
                rec("2", Verdict::Safe, false, false),
            ],
        };
        let ok = validate_counts(
            &m,
            ClassCounts {
                total: 2,
                unsafe_: 1,
                safe: 1,
            },
        );
        assert!(ok.pass);
        let bad = validate_counts(
            &m,
            ClassCounts {
                total: 2,
                unsafe_: 2,
                safe: 0,
            },
        );
        assert!(!bad.pass);
        assert_eq!(bad.actual.unsafe_, 1);
        let empty = DatasetManifest {
            name: "e".into(),
            records: vec![],
        };
        assert!(
            validate_counts(
                &empty,
                ClassCounts {
                    total: 0,
                    unsafe_: 0,
                    safe: 0
                }
            )
            .pass
        );
    }

    fn arb_record(i: usize) -> impl Strategy<Value = ImageRecord> {
        (any::<bool>(), any::<bool>(), any::<bool>(), 0u8..3).prop_map(
            move |(u, present, primary, src)| ImageRecord {
                id: format!("r{i}"),
                label: if u { Verdict::Unsafe } else { Verdict::Safe },
                text_present: present || primary,
                text_primary: primary,
                source: [
                    Source::UnsafebenchSexual,
                    Source::PassControl,
                    Source::Other,
                ][src as usize],
            },
        )
    }

    fn arb_manifest() -> impl Strategy<Value = DatasetManifest> {
        (0usize..60).prop_flat_map(|n| {
            (0..n)
                .map(arb_record)
                .collect::<Vec<_>>()
                .prop_map(|records| DatasetManifest {
                    name: "p".into(),
                    records,
                })
        })
    }

    proptest! {
        #[test]
        fn filters_idempotent_and_nested(m in arb_manifest()) {
            for kind in [SubsetKind::Full, SubsetKind::TextVisual, SubsetKind::TextOnly, SubsetKind::ControlSafe] {
                let once = filter_subset(&m, kind);
                prop_assert_eq!(&filter_subset(&once, kind).records, &once.records);
            }
            let tv = filter_subset(&m, SubsetKind::TextVisual);
            let to = filter_subset(&m, SubsetKind::TextOnly);
            // sub-sequence check
            let mut it = tv.records.iter();
            for r in &to.records {
                prop_assert!(it.any(|x| x == r));
            }
            let outside = m.records.iter().filter(|r| !r.text_present).count();
            prop_assert_eq!(tv.len() + outside, m.len());
        }
    }
}
