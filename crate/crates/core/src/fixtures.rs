//! Seeded generator for manifests and replay suites that realise target
//! confusion matrices.
//!
//! The manifest is split into three disjoint strata: text-only images, the
//! rest of the text+visual subset, and images without text. Each model's
//! targets (full set, optionally text+visual and text-only) fix how many
//! images of each label it must call unsafe in each stratum; the seeded RNG
//! only decides which ones. Levels without a target are filled in
//! proportionally, or, for the cascade's Stage 1, as close as possible to
//! the final verdicts so the two stages disagree only where they must.
//!
//! The cascade fixture routes every manifest image to Stage 2 in the
//! multimodal regime. Stage-1 probabilities land in disjoint bands:
//! `[tau_high, 1]` for Stage-1 positives, `[0, tau_low)` for negatives with
//! text (the text trigger routes them), `[tau_low, tau_high)` for the other
//! negatives. Every probability in a file is distinct at six decimals, so
//! each reasoner payload, and therefore each replay key, is unique.
//!
//! Control images live only in the cascade fixture: the requested number of
//! false positives sit in the unsafe band with an Unsafe reasoner row, the
//! rest are clearly safe and skip Stage 2.
//!
//! Same plan and seed, same bytes.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adapters::replay::{write_records, ReplayRecord};
use crate::adapters::synthetic::StageCosts;
use crate::adapters::{
    sort_spans, BBox, Detection, OcrSpan, ReasonerVerdict, Recommendation, Verdict,
};
use crate::evalrunner::{DeltaSpec, ModelKind, ModelSpec, Suite};
use crate::metrics::ConfusionMatrix;
use crate::pipeline::{build_reasoner_input, route, Regime, RoutingConfig, Stage1Output};
use crate::subsets::{ClassCounts, DatasetManifest, ImageRecord, Source};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("inconsistent plan: {0}")]
    Inconsistent(String),
    #[error("probability band [{lo}, {hi}) too small for {needed} distinct values")]
    BandExhausted { lo: f64, hi: f64, needed: usize },
    #[error("payload collision between `{0}` and `{1}`")]
    PayloadCollision(String, String),
    #[error("writing fixtures: {0}")]
    Io(#[from] std::io::Error),
}

/// Target matrices for one model. Subset targets are optional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub full: ConfusionMatrix,
    pub text_visual: Option<ConfusionMatrix>,
    pub text_only: Option<ConfusionMatrix>,
}

impl Targets {
    pub fn full_only(full: ConfusionMatrix) -> Self {
        Self {
            full,
            text_visual: None,
            text_only: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTarget {
    pub stage1_name: String,
    pub full_name: String,
    /// Vision-only verdicts.
    pub stage1: Targets,
    /// Multimodal verdicts.
    pub full: Targets,
    pub costs: StageCosts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTarget {
    pub name: String,
    pub regime: Regime,
    pub threshold: f64,
    pub latency_ms: f64,
    pub targets: Targets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlPlan {
    pub size: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixturePlan {
    pub seed: u64,
    pub routing: RoutingConfig,
    pub text_visual: ClassCounts,
    pub text_only: ClassCounts,
    pub cascade: CascadeTarget,
    pub baselines: Vec<BaselineTarget>,
    pub control: Option<ControlPlan>,
}

pub const CASCADE_STAGE1: &str = "cascade-stage1";
pub const CASCADE_FULL: &str = "cascade-stage1+2";

/// Stage costs whose sums give an 11.7 ms Stage 1 and a 120 ms end-to-end
/// path.
pub const REFERENCE_COSTS: StageCosts = StageCosts {
    classify: 8.0,
    detect: 3.7,
    ocr: 18.3,
    reason: 90.0,
};

fn cm(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionMatrix {
    ConfusionMatrix::new(tp, fp, tn, fn_)
}

fn counts(total: usize, unsafe_: usize) -> ClassCounts {
    ClassCounts {
        total,
        unsafe_,
        safe: total - unsafe_,
    }
}

impl FixturePlan {
    /// A cascade whose two stages both realise `full`, without baselines.
    pub fn single(
        full: ConfusionMatrix,
        text_visual: ClassCounts,
        text_only: ClassCounts,
        seed: u64,
    ) -> Self {
        Self {
            seed,
            routing: RoutingConfig::default(),
            text_visual,
            text_only,
            cascade: CascadeTarget {
                stage1_name: CASCADE_STAGE1.into(),
                full_name: CASCADE_FULL.into(),
                stage1: Targets::full_only(full),
                full: Targets::full_only(full),
                costs: REFERENCE_COSTS,
            },
            baselines: Vec::new(),
            control: None,
        }
    }

    /// Matrices recovered from the published result tables: eight models on
    /// the 1,054-image set, the text+visual (257) and text-only (44) subsets
    /// for the multimodal models, and a 1,000-image control set with 1%
    /// false positives.
    ///
    /// ShieldGemma-2's full-set figures admit no integer matrix and
    /// contradict its own subset rows, so its full-set target is a matrix
    /// consistent with the subsets that keeps the published accuracy.
    pub fn reference(seed: u64) -> Self {
        let baseline = |name: &str, regime, latency_ms, full, tv, to| BaselineTarget {
            name: name.into(),
            regime,
            threshold: 0.5,
            latency_ms,
            targets: Targets {
                full,
                text_visual: tv,
                text_only: to,
            },
        };
        Self {
            seed,
            routing: RoutingConfig::default(),
            text_visual: counts(257, 155),
            text_only: counts(44, 25),
            cascade: CascadeTarget {
                stage1_name: CASCADE_STAGE1.into(),
                full_name: CASCADE_FULL.into(),
                stage1: Targets::full_only(cm(608, 133, 238, 75)),
                full: Targets {
                    full: cm(610, 123, 248, 73),
                    text_visual: Some(cm(140, 34, 68, 15)),
                    text_only: Some(cm(25, 8, 11, 0)),
                },
                costs: REFERENCE_COSTS,
            },
            baselines: vec![
                baseline(
                    "FalconsAI",
                    Regime::VisionOnly,
                    7.3,
                    cm(278, 27, 344, 405),
                    None,
                    None,
                ),
                baseline(
                    "NudeNet",
                    Regime::VisionOnly,
                    35.0,
                    cm(534, 188, 183, 149),
                    None,
                    None,
                ),
                baseline(
                    "Adam-ViT",
                    Regime::VisionOnly,
                    7.2,
                    cm(463, 107, 264, 220),
                    None,
                    None,
                ),
                baseline(
                    "Freepik",
                    Regime::VisionOnly,
                    15.5,
                    cm(520, 79, 292, 163),
                    None,
                    None,
                ),
                baseline(
                    "ShieldGemma-2",
                    Regime::Multimodal,
                    1136.0,
                    cm(590, 278, 93, 93),
                    Some(cm(62, 23, 79, 93)),
                    Some(cm(21, 14, 5, 4)),
                ),
                baseline(
                    "LlavaGuard",
                    Regime::Multimodal,
                    4138.0,
                    cm(567, 91, 280, 116),
                    Some(cm(116, 22, 80, 39)),
                    Some(cm(14, 7, 12, 11)),
                ),
            ],
            control: Some(ControlPlan {
                size: 1000,
                false_positives: 10,
            }),
        }
    }
}

/// Generated files, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSet {
    pub manifest: DatasetManifest,
    pub control: Option<DatasetManifest>,
    /// `(file name, records)` per replay file, cascade first.
    pub replays: Vec<(String, Vec<ReplayRecord>)>,
    pub suite: Suite,
}

pub const SUITE_FILE: &str = "suite.toml";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONTROL_FILE: &str = "control.jsonl";
pub const CASCADE_FILE: &str = "cascade.jsonl";

impl FixtureSet {
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<(), FixtureError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let write =
            |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> std::io::Result<()> {
                let mut buf = Vec::new();
                f(&mut buf)?;
                std::fs::write(dir.join(name), buf)
            };
        write(MANIFEST_FILE, &|b| self.manifest.write(b))?;
        if let Some(c) = &self.control {
            write(CONTROL_FILE, &|b| c.write(b))?;
        }
        for (name, records) in &self.replays {
            write(name, &|b| write_records(b, records))?;
        }
        write(SUITE_FILE, &|b| {
            b.write_all(self.suite.to_toml().as_bytes())
        })?;
        Ok(())
    }
}

const TO: usize = 0;
const TV_REST: usize = 1;
const NO_TEXT: usize = 2;
const UNSAFE: usize = 0;
const SAFE: usize = 1;

/// `[stratum][label]` counts.
type Grid = [[usize; 2]; 3];

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    s.trim_matches('-').to_string()
}

fn label_parts(m: &ConfusionMatrix) -> [usize; 2] {
    [m.positives() as usize, m.negatives() as usize]
}

fn predicted_unsafe(m: &ConfusionMatrix) -> [usize; 2] {
    [m.tp as usize, m.fp as usize]
}

fn strata(plan: &FixturePlan) -> Result<Grid, FixtureError> {
    let full = label_parts(&plan.cascade.full.full);
    let tv = [plan.text_visual.unsafe_, plan.text_visual.safe];
    let to = [plan.text_only.unsafe_, plan.text_only.safe];
    if plan.text_visual.total != tv[0] + tv[1] || plan.text_only.total != to[0] + to[1] {
        return Err(FixtureError::Inconsistent(
            "subset totals do not add up".into(),
        ));
    }
    let mut g = [[0; 2]; 3];
    for l in [UNSAFE, SAFE] {
        if to[l] > tv[l] || tv[l] > full[l] {
            return Err(FixtureError::Inconsistent(
                "subset class counts must nest: text-only within text+visual within full".into(),
            ));
        }
        g[TO][l] = to[l];
        g[TV_REST][l] = tv[l] - to[l];
        g[NO_TEXT][l] = full[l] - tv[l];
    }
    Ok(g)
}

fn check_targets(name: &str, t: &Targets, g: &Grid) -> Result<(), FixtureError> {
    let level =
        |rows: &[usize]| -> [usize; 2] { [0, 1].map(|l| rows.iter().map(|&s| g[s][l]).sum()) };
    let levels = [
        ("full", Some(t.full), level(&[TO, TV_REST, NO_TEXT])),
        ("text+visual", t.text_visual, level(&[TO, TV_REST])),
        ("text-only", t.text_only, level(&[TO])),
    ];
    for (what, m, expect) in levels {
        if let Some(m) = m {
            if label_parts(&m) != expect {
                return Err(FixtureError::Inconsistent(format!(
                    "`{name}` {what} matrix has {}/{} unsafe/safe, subset has {}/{}",
                    m.positives(),
                    m.negatives(),
                    expect[0],
                    expect[1]
                )));
            }
        }
    }
    Ok(())
}

fn proportional(k: usize, part: usize, whole: usize) -> usize {
    if whole == 0 {
        0
    } else {
        ((k * part) as f64 / whole as f64).round() as usize
    }
}

/// Predicted-unsafe counts per stratum and label.
fn allocate(
    name: &str,
    t: &Targets,
    g: &Grid,
    reference: Option<&Grid>,
) -> Result<Grid, FixtureError> {
    let mut out = [[0; 2]; 3];
    for l in [UNSAFE, SAFE] {
        let n_to = g[TO][l];
        let n_tv = n_to + g[TV_REST][l];
        let n_full = n_tv + g[NO_TEXT][l];
        let k_full = predicted_unsafe(&t.full)[l];
        let k_tv = match t.text_visual {
            Some(m) => predicted_unsafe(&m)[l],
            None => {
                let want = reference.map_or_else(
                    || proportional(k_full, n_tv, n_full),
                    |r| r[TO][l] + r[TV_REST][l],
                );
                want.clamp(k_full.saturating_sub(n_full - n_tv), n_tv.min(k_full))
            }
        };
        let k_to = match t.text_only {
            Some(m) => predicted_unsafe(&m)[l],
            None => {
                let want = reference.map_or_else(|| proportional(k_tv, n_to, n_tv), |r| r[TO][l]);
                want.clamp(k_tv.saturating_sub(n_tv - n_to), n_to.min(k_tv))
            }
        };
        if k_to > k_tv || k_tv > k_full {
            return Err(FixtureError::Inconsistent(format!(
                "`{name}`: subset matrices do not nest inside the larger sets"
            )));
        }
        out[TO][l] = k_to;
        out[TV_REST][l] = k_tv - k_to;
        out[NO_TEXT][l] = k_full - k_tv;
        for s in [TO, TV_REST, NO_TEXT] {
            if out[s][l] > g[s][l] {
                return Err(FixtureError::Inconsistent(format!(
                    "`{name}`: needs {} predicted-unsafe {} images in a stratum of {}",
                    out[s][l],
                    if l == UNSAFE { "unsafe" } else { "safe" },
                    g[s][l]
                )));
            }
        }
    }
    Ok(out)
}

/// Marks `k` members of `group` as predicted unsafe. Members flagged in
/// `preferred` are taken first.
fn select(
    rng: &mut ChaCha8Rng,
    group: &[usize],
    k: usize,
    preferred: Option<&[bool]>,
    marks: &mut [bool],
) {
    let mut order = group.to_vec();
    order.shuffle(rng);
    if let Some(pref) = preferred {
        order.sort_by_key(|&i| !pref[i]);
    }
    for &i in order.iter().take(k) {
        marks[i] = true;
    }
}

fn assign(
    rng: &mut ChaCha8Rng,
    groups: &[[Vec<usize>; 2]; 3],
    alloc: &Grid,
    n: usize,
    preferred: Option<&[bool]>,
) -> Vec<bool> {
    let mut marks = vec![false; n];
    for s in [TO, TV_REST, NO_TEXT] {
        for l in [UNSAFE, SAFE] {
            select(rng, &groups[s][l], alloc[s][l], preferred, &mut marks);
        }
    }
    marks
}

const SCALE: f64 = 1e6;

/// Smallest grid unit whose probability is `>= tau`.
fn units_at_least(tau: f64) -> u32 {
    let mut u = (tau * SCALE).floor().max(0.0) as u32;
    while (u as f64 / SCALE) < tau {
        u += 1;
    }
    u
}

/// Distinct six-decimal probabilities.
struct Sampler {
    used: HashSet<u32>,
}

impl Sampler {
    fn new() -> Self {
        Self {
            used: HashSet::new(),
        }
    }

    /// Draws from units `[lo, hi)`.
    fn draw(
        &mut self,
        rng: &mut ChaCha8Rng,
        lo: u32,
        hi: u32,
        needed: usize,
    ) -> Result<f64, FixtureError> {
        let exhausted = || FixtureError::BandExhausted {
            lo: lo as f64 / SCALE,
            hi: hi as f64 / SCALE,
            needed,
        };
        if hi <= lo || ((hi - lo) as usize) < needed {
            return Err(exhausted());
        }
        for _ in 0..10_000 {
            let u = rng.gen_range(lo..hi);
            if self.used.insert(u) {
                return Ok(u as f64 / SCALE);
            }
        }
        Err(exhausted())
    }
}

const UNSAFE_TEXT: &[&str] = &[
    "send nudes",
    "dm me for private pics",
    "our secret, don't tell mom",
    "18+ webcam tonight",
    "meet up alone after school",
    "link in bio onlyfans",
];
const BENIGN_TEXT: &[&str] = &[
    "happy birthday",
    "exam schedule week 3",
    "no parking",
    "keep calm and read on",
    "lost cat reward",
    "team photo 2019",
];
const CAPTION_TEXT: &[&str] = &[
    "summer sale",
    "beach day",
    "new album out now",
    "studio 54",
    "limited edition",
    "vol. 2",
];
const UNSAFE_OBJECTS: &[&str] = &[
    "exposed_breast",
    "exposed_buttocks",
    "exposed_genitalia",
    "lingerie",
];
const BENIGN_OBJECTS: &[&str] = &["person", "face", "swimwear", "bed"];

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn detections(rng: &mut ChaCha8Rng, visually_unsafe: bool) -> Vec<Detection> {
    let conf = |rng: &mut ChaCha8Rng, lo: u32, hi: u32| rng.gen_range(lo..hi) as f64 / 1000.0;
    let bbox = |rng: &mut ChaCha8Rng| {
        let x = rng.gen_range(0..50) as f64 / 100.0;
        let y = rng.gen_range(0..50) as f64 / 100.0;
        BBox::new(x, y, x + 0.4, y + 0.4)
    };
    if visually_unsafe {
        let label = pick(rng, UNSAFE_OBJECTS);
        let c = conf(rng, 500, 990);
        vec![Detection::new(label, c, bbox(rng))]
    } else if rng.gen_bool(0.3) {
        let label = pick(rng, BENIGN_OBJECTS);
        let c = conf(rng, 300, 950);
        vec![Detection::new(label, c, bbox(rng))]
    } else {
        Vec::new()
    }
}

fn spans(rng: &mut ChaCha8Rng, stratum: usize, label: Verdict) -> Vec<OcrSpan> {
    let first = match (stratum, label) {
        (TO, Verdict::Unsafe) => pick(rng, UNSAFE_TEXT),
        (TO, Verdict::Safe) => pick(rng, BENIGN_TEXT),
        _ => pick(rng, CAPTION_TEXT),
    };
    let mut out = vec![OcrSpan::new(first, BBox::new(0.1, 0.05, 0.9, 0.15))];
    if rng.gen_bool(0.4) {
        out.push(OcrSpan::new(
            pick(rng, CAPTION_TEXT),
            BBox::new(0.2, 0.8, 0.8, 0.9),
        ));
    }
    sort_spans(&mut out);
    out
}

fn reasoner_verdict(final_unsafe: bool, stage1_unsafe: bool, unsafe_text: bool) -> ReasonerVerdict {
    let (verdict, analysis, rec) = match (final_unsafe, stage1_unsafe) {
        (true, _) if unsafe_text => (
            Verdict::Unsafe,
            "embedded text solicits sexual content",
            Recommendation::Block,
        ),
        (true, _) => (
            Verdict::Unsafe,
            "detected objects and visual score indicate sexual content",
            Recommendation::Block,
        ),
        (false, true) => (
            Verdict::Safe,
            "high visual score but no explicit objects or text confirm it",
            Recommendation::AllowWithWarning,
        ),
        (false, false) => (
            Verdict::Safe,
            "no unsafe objects or text",
            Recommendation::Allow,
        ),
    };
    ReasonerVerdict::new(verdict, analysis, rec).expect("fixed verdicts are consistent")
}

struct Bands {
    low: (u32, u32),
    mid: (u32, u32),
    high: (u32, u32),
}

impl Bands {
    fn new(cfg: &RoutingConfig) -> Self {
        let lo = units_at_least(cfg.tau_low);
        let hi = units_at_least(cfg.tau_high);
        Self {
            low: (0, lo),
            mid: (lo, hi),
            high: (hi, SCALE as u32 + 1),
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate(plan: &FixturePlan) -> Result<FixtureSet, FixtureError> {
    plan.routing
        .validate()
        .map_err(|e| FixtureError::Inconsistent(e.to_string()))?;
    let g = strata(plan)?;
    check_targets(&plan.cascade.stage1_name, &plan.cascade.stage1, &g)?;
    check_targets(&plan.cascade.full_name, &plan.cascade.full, &g)?;
    let mut names = HashSet::from([
        plan.cascade.stage1_name.as_str(),
        plan.cascade.full_name.as_str(),
    ]);
    if names.len() != 2 {
        return Err(FixtureError::Inconsistent(
            "cascade stage names must differ".into(),
        ));
    }
    let mut files = HashSet::from([CASCADE_FILE.to_string()]);
    for b in &plan.baselines {
        check_targets(&b.name, &b.targets, &g)?;
        if !names.insert(b.name.as_str()) {
            return Err(FixtureError::Inconsistent(format!(
                "duplicate model `{}`",
                b.name
            )));
        }
        if !files.insert(format!("{}.jsonl", slug(&b.name))) || slug(&b.name).is_empty() {
            return Err(FixtureError::Inconsistent(format!(
                "`{}` has no usable file name",
                b.name
            )));
        }
        if !(0.0..=1.0).contains(&b.threshold) {
            return Err(FixtureError::Inconsistent(format!(
                "`{}`: threshold outside [0,1]",
                b.name
            )));
        }
    }

    // Manifest: strata interleaved by a seeded shuffle.
    let mut rng = rng_for(plan.seed, 0);
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for s in [TO, TV_REST, NO_TEXT] {
        for l in [UNSAFE, SAFE] {
            cells.extend(std::iter::repeat_n((s, l), g[s][l]));
        }
    }
    cells.shuffle(&mut rng);
    let n = cells.len();
    let width = n.to_string().len().max(4);
    let label_of = |l: usize| {
        if l == UNSAFE {
            Verdict::Unsafe
        } else {
            Verdict::Safe
        }
    };
    let records: Vec<ImageRecord> = cells
        .iter()
        .enumerate()
        .map(|(i, &(s, l))| ImageRecord {
            id: format!("img-{:0width$}", i + 1),
            label: label_of(l),
            text_present: s != NO_TEXT,
            text_primary: s == TO,
            source: Source::UnsafebenchSexual,
        })
        .collect();
    let mut groups: [[Vec<usize>; 2]; 3] = Default::default();
    for (i, &(s, l)) in cells.iter().enumerate() {
        groups[s][l].push(i);
    }
    let manifest = DatasetManifest {
        name: "manifest".into(),
        records,
    };

    // Cascade.
    let c = &plan.cascade;
    let mut rng = rng_for(plan.seed, 1);
    let final_alloc = allocate(&c.full_name, &c.full, &g, None)?;
    let final_unsafe = assign(&mut rng, &groups, &final_alloc, n, None);
    let s1_alloc = allocate(&c.stage1_name, &c.stage1, &g, Some(&final_alloc))?;
    let s1_unsafe = assign(&mut rng, &groups, &s1_alloc, n, Some(&final_unsafe));

    let bands = Bands::new(&plan.routing);
    let mut sampler = Sampler::new();
    let mut rows = Vec::new();
    let mut reason_rows = Vec::new();
    let mut payloads: HashMap<String, String> = HashMap::new();
    let mut push_reason = |id: &str,
                           stage1: &Stage1Output,
                           text: &[OcrSpan],
                           v: ReasonerVerdict,
                           reason_rows: &mut Vec<ReplayRecord>| {
        let hash = build_reasoner_input(stage1, text).payload_hash();
        if let Some(prev) = payloads.insert(hash.clone(), id.to_string()) {
            return Err(FixtureError::PayloadCollision(prev, id.to_string()));
        }
        reason_rows.push(ReplayRecord::Reason {
            payload_hash: hash,
            verdict: v,
        });
        Ok(())
    };
    for (i, rec) in manifest.records.iter().enumerate() {
        let (s, _) = cells[i];
        let has_text = rec.text_present;
        let band = if s1_unsafe[i] {
            bands.high
        } else if has_text && plan.routing.text_trigger && bands.low.1 > 0 {
            bands.low
        } else {
            bands.mid
        };
        let p = sampler.draw(&mut rng, band.0, band.1, n)?;
        let dets = detections(&mut rng, s1_unsafe[i]);
        let text = if has_text {
            spans(&mut rng, s, rec.label)
        } else {
            Vec::new()
        };
        let stage1 = Stage1Output {
            probability: p,
            detections: dets.clone(),
            elapsed_ms: 0.0,
        };
        if !route(&stage1, has_text, &plan.routing).invoke_stage2 {
            return Err(FixtureError::Inconsistent(format!(
                "routing config leaves no band that sends `{}` to Stage 2",
                rec.id
            )));
        }
        rows.push(ReplayRecord::Classify {
            id: rec.id.clone(),
            probability: p,
        });
        if !dets.is_empty() {
            rows.push(ReplayRecord::Detect {
                id: rec.id.clone(),
                detections: dets,
            });
        }
        if !text.is_empty() {
            rows.push(ReplayRecord::Ocr {
                id: rec.id.clone(),
                spans: text.clone(),
            });
        }
        let unsafe_text = s == TO && rec.label == Verdict::Unsafe;
        let v = reasoner_verdict(final_unsafe[i], s1_unsafe[i], unsafe_text);
        push_reason(&rec.id, &stage1, &text, v, &mut reason_rows)?;
    }

    let control = match plan.control {
        None => None,
        Some(ctrl) => {
            if ctrl.false_positives > ctrl.size || ctrl.size == 0 {
                return Err(FixtureError::Inconsistent(
                    "control false positives exceed control size".into(),
                ));
            }
            if bands.low.1 == 0 {
                return Err(FixtureError::Inconsistent(
                    "tau_low = 0 leaves no clearly-safe band for control images".into(),
                ));
            }
            let mut rng = rng_for(plan.seed, 2);
            let all: Vec<usize> = (0..ctrl.size).collect();
            let mut fp = vec![false; ctrl.size];
            select(&mut rng, &all, ctrl.false_positives, None, &mut fp);
            let width = ctrl.size.to_string().len().max(4);
            let mut records = Vec::with_capacity(ctrl.size);
            for (i, &is_fp) in fp.iter().enumerate() {
                let id = format!("ctrl-{:0width$}", i + 1);
                let band = if is_fp { bands.high } else { bands.low };
                let p = sampler.draw(&mut rng, band.0, band.1, ctrl.size)?;
                let dets = detections(&mut rng, is_fp);
                rows.push(ReplayRecord::Classify {
                    id: id.clone(),
                    probability: p,
                });
                if !dets.is_empty() {
                    rows.push(ReplayRecord::Detect {
                        id: id.clone(),
                        detections: dets.clone(),
                    });
                }
                if is_fp {
                    let stage1 = Stage1Output {
                        probability: p,
                        detections: dets,
                        elapsed_ms: 0.0,
                    };
                    push_reason(
                        &id,
                        &stage1,
                        &[],
                        reasoner_verdict(true, true, false),
                        &mut reason_rows,
                    )?;
                }
                records.push(ImageRecord {
                    id,
                    label: Verdict::Safe,
                    text_present: false,
                    text_primary: false,
                    source: Source::PassControl,
                });
            }
            Some(DatasetManifest {
                name: "control".into(),
                records,
            })
        }
    };
    rows.extend(reason_rows);
    let mut replays = vec![(CASCADE_FILE.to_string(), rows)];

    // Baselines: a probability per image, cut at the model's threshold.
    for (k, b) in plan.baselines.iter().enumerate() {
        let mut rng = rng_for(plan.seed, 3 + k as u64);
        let alloc = allocate(&b.name, &b.targets, &g, None)?;
        let marks = assign(&mut rng, &groups, &alloc, n, None);
        let cut = units_at_least(b.threshold);
        let mut sampler = Sampler::new();
        let mut rows = Vec::with_capacity(n);
        for (i, rec) in manifest.records.iter().enumerate() {
            let (lo, hi) = if marks[i] {
                (cut, SCALE as u32 + 1)
            } else {
                (0, cut)
            };
            rows.push(ReplayRecord::Classify {
                id: rec.id.clone(),
                probability: sampler.draw(&mut rng, lo, hi, n)?,
            });
        }
        replays.push((format!("{}.jsonl", slug(&b.name)), rows));
    }

    let mut suite = Suite::new(MANIFEST_FILE, plan.routing);
    if control.is_some() {
        suite.control_manifest = Some(CONTROL_FILE.into());
    }
    for (name, regime) in [
        (&c.stage1_name, Regime::VisionOnly),
        (&c.full_name, Regime::Multimodal),
    ] {
        suite.models.push(ModelSpec {
            name: name.clone(),
            kind: ModelKind::Pipeline,
            regime,
            replay: CASCADE_FILE.into(),
            costs_ms: Some(c.costs),
            threshold: None,
            latency_ms: None,
        });
    }
    for b in &plan.baselines {
        suite.models.push(ModelSpec {
            name: b.name.clone(),
            kind: ModelKind::Threshold,
            regime: b.regime,
            replay: format!("{}.jsonl", slug(&b.name)).into(),
            costs_ms: None,
            threshold: Some(b.threshold),
            latency_ms: Some(b.latency_ms),
        });
    }
    suite.deltas.push(DeltaSpec {
        stage1: c.stage1_name.clone(),
        full: c.full_name.clone(),
    });

    Ok(FixtureSet {
        manifest,
        control,
        replays,
        suite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::replay::parse_replay;

    fn small_plan() -> FixturePlan {
        FixturePlan::single(cm(30, 5, 15, 10), counts(12, 7), counts(4, 2), 7)
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("ShieldGemma-2"), "shieldgemma-2");
        assert_eq!(slug("Adam ViT!"), "adam-vit");
    }

    #[test]
    fn units_match_thresholds() {
        assert_eq!(units_at_least(0.7), 700_000);
        assert!(units_at_least(0.1234567) as f64 / SCALE >= 0.1234567);
    }

    #[test]
    fn strata_sizes() {
        let set = generate(&small_plan()).unwrap();
        let m = &set.manifest;
        assert_eq!(m.counts(), counts(60, 40));
        assert_eq!(m.records.iter().filter(|r| r.text_present).count(), 12);
        assert_eq!(m.records.iter().filter(|r| r.text_primary).count(), 4);
    }

    #[test]
    fn same_seed_same_output() {
        let a = generate(&small_plan()).unwrap();
        let b = generate(&small_plan()).unwrap();
        assert_eq!(a, b);
        let mut other = small_plan();
        other.seed = 8;
        assert_ne!(generate(&other).unwrap().replays, a.replays);
    }

    #[test]
    fn replay_files_parse() {
        let set = generate(&small_plan()).unwrap();
        for (_, rows) in &set.replays {
            let mut buf = Vec::new();
            write_records(&mut buf, rows).unwrap();
            parse_replay(buf.as_slice()).unwrap();
        }
    }

    #[test]
    fn inconsistent_plans_rejected() {
        let mut p = small_plan();
        p.text_visual = counts(50, 41);
        assert!(matches!(generate(&p), Err(FixtureError::Inconsistent(_))));
        let mut p = small_plan();
        p.cascade.full.text_only = Some(cm(3, 0, 2, 0));
        assert!(matches!(generate(&p), Err(FixtureError::Inconsistent(_))));
        let mut p = small_plan();
        p.cascade.stage1 = Targets::full_only(cm(30, 5, 15, 11));
        assert!(matches!(generate(&p), Err(FixtureError::Inconsistent(_))));
    }

    #[test]
    fn stage1_prefers_final_verdicts() {
        let g: Grid = [[2, 2], [3, 3], [10, 10]];
        let fin = Targets::full_only(cm(10, 5, 10, 5));
        let s1 = Targets::full_only(cm(12, 7, 8, 3));
        let fa = allocate("f", &fin, &g, None).unwrap();
        let sa = allocate("s", &s1, &g, Some(&fa)).unwrap();
        for s in [TO, TV_REST] {
            assert_eq!(sa[s], fa[s]);
        }
        assert_eq!(sa[NO_TEXT][UNSAFE], fa[NO_TEXT][UNSAFE] + 2);
    }
}
