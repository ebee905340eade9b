//! Annotation parsing, vocabulary construction and document-frequency filtering.
//!
//! Annotation files are line-delimited JSON, one image per line:
//!
//! ```text
//! {"camera_id":"1137-1","timestamp":"2018-01-04T16:57:52Z","labels":[{"source":1,"text":"snow"},{"source":2,"text":"Snow"}]}
//! ```
//!
//! Every label is prefixed with its source (`"LS1: snow"`, `"LS2: Snow"`) so the
//! same text reported by two services lands in two vocabulary dimensions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{format_utc, parse_utc};

/// Labels produced by the watermark overlay rather than by scene content.
pub const DEFAULT_EXCLUSIONS: &[&str] = &[
    "LS1: massachusetts department of transportation",
    "LS1: massdot",
    "LS2: Massachusetts Department of Transportation",
    "LS2: MassDOT",
];

/// Default high-pass cutoff on global document frequency.
pub const DEFAULT_CUTOFF: f64 = 1e-4;

/// One label as reported by one labeling source.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label {
    pub source: u32,
    pub text: String,
}

impl Label {
    pub fn new(source: u32, text: impl Into<String>) -> Self {
        Label {
            source,
            text: text.into(),
        }
    }

    /// Vocabulary key, e.g. `"LS2: Snow"`.
    pub fn prefixed(&self) -> String {
        format!("LS{}: {}", self.source, self.text)
    }
}

/// One annotated image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub camera_id: String,
    pub timestamp: DateTime<Utc>,
    pub labels: BTreeSet<Label>,
}

impl AnnotationRecord {
    pub fn prefixed_labels(&self) -> impl Iterator<Item = String> + '_ {
        self.labels.iter().map(Label::prefixed)
    }

    /// Serializes the record as one JSON line (no trailing newline).
    pub fn to_json_line(&self) -> String {
        let raw = RawRecord {
            camera_id: self.camera_id.clone(),
            timestamp: format_utc(&self.timestamp),
            labels: self.labels.iter().cloned().collect(),
        };
        serde_json::to_string(&raw).expect("record serialization cannot fail")
    }
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    camera_id: String,
    timestamp: String,
    labels: Vec<Label>,
}

/// Label sources accepted by the parser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRegistry {
    known: BTreeSet<u32>,
}

impl SourceRegistry {
    pub fn new(known: impl IntoIterator<Item = u32>) -> Self {
        SourceRegistry {
            known: known.into_iter().collect(),
        }
    }

    pub fn contains(&self, source: u32) -> bool {
        self.known.contains(&source)
    }
}

impl Default for SourceRegistry {
    fn default() -> Self {
        SourceRegistry::new([1, 2])
    }
}

/// Parses one annotation line; `line` is 1-based and used only for errors.
pub fn parse_line(text: &str, line: usize, sources: &SourceRegistry) -> Result<AnnotationRecord> {
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let timestamp = parse_utc(&raw.timestamp).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let mut labels = BTreeSet::new();
    for label in raw.labels {
        if !sources.contains(label.source) {
            return Err(Error::UnknownSource {
                line,
                source_id: label.source,
            });
        }
        let text = label.text.trim();
        if text.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty label text".into(),
            });
        }
        labels.insert(Label::new(label.source, text));
    }
    Ok(AnnotationRecord {
        camera_id: raw.camera_id,
        timestamp,
        labels,
    })
}

/// Parses every non-blank line of an annotation file, in file order.
pub fn parse_annotations(path: &Path, sources: &SourceRegistry) -> Result<Vec<AnnotationRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1, sources)?);
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(f, "{}", r.to_json_line())?;
    }
    f.flush()?;
    Ok(())
}

/// Drops later records that repeat a (camera, timestamp) pair, keeping the first.
pub fn drop_duplicate_frames(records: Vec<AnnotationRecord>) -> Vec<AnnotationRecord> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if seen.insert((r.camera_id.clone(), r.timestamp)) {
            out.push(r);
        } else {
            log::warn!(
                "duplicate frame for camera {} at {}; keeping the first",
                r.camera_id,
                format_utc(&r.timestamp)
            );
        }
    }
    out
}

/// Sorted set of prefixed labels; position in the list is the vector dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from any set of prefixed labels. Order of the input is irrelevant.
    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        for e in &set {
            if !has_single_prefix(e) {
                return Err(Error::invalid(format!(
                    "vocabulary entry {e:?} lacks a single source prefix"
                )));
            }
        }
        let entries: Vec<String> = set.into_iter().collect();
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        Ok(Vocabulary { entries, index })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, dim: usize) -> &str {
        &self.entries[dim]
    }

    /// Hex SHA-256 over the entries, binding models to the vocabulary they were fit on.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &self.entries)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let entries: Vec<String> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Vocabulary::from_labels(entries)
    }
}

fn has_single_prefix(entry: &str) -> bool {
    let Some(rest) = entry.strip_prefix("LS") else {
        return false;
    };
    let Some((num, text)) = rest.split_once(": ") else {
        return false;
    };
    !num.is_empty() && num.bytes().all(|b| b.is_ascii_digit()) && !text.is_empty()
}

/// Union of all prefixed labels minus `exclusions`.
pub fn build_vocabulary(
    records: &[AnnotationRecord],
    exclusions: &BTreeSet<String>,
) -> Result<Vocabulary> {
    if records.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from zero records"));
    }
    let labels: BTreeSet<String> = records
        .iter()
        .flat_map(|r| r.prefixed_labels())
        .filter(|l| !exclusions.contains(l))
        .collect();
    if labels.is_empty() {
        return Err(Error::invalid("every label was excluded; vocabulary is empty"));
    }
    Vocabulary::from_labels(labels)
}

/// Image and document counts over a vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    #[serde(rename = "N")]
    pub total: u64,
    pub per_camera_counts: BTreeMap<String, u64>,
    pub doc_count: Vec<u64>,
    #[serde(skip)]
    pub per_camera_doc_count: BTreeMap<String, Vec<u64>>,
}

impl CorpusStats {
    pub fn compute(records: &[AnnotationRecord], vocab: &Vocabulary) -> Self {
        let m = vocab.len();
        let mut doc_count = vec![0u64; m];
        let mut per_camera_counts = BTreeMap::new();
        let mut per_camera_doc_count: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for r in records {
            *per_camera_counts.entry(r.camera_id.clone()).or_insert(0) += 1;
            let cam = per_camera_doc_count
                .entry(r.camera_id.clone())
                .or_insert_with(|| vec![0; m]);
            for l in r.prefixed_labels() {
                if let Some(j) = vocab.get(&l) {
                    doc_count[j] += 1;
                    cam[j] += 1;
                }
            }
        }
        CorpusStats {
            total: records.len() as u64,
            per_camera_counts,
            doc_count,
            per_camera_doc_count,
        }
    }

    /// Empirical document frequency `n_j / N` per dimension.
    pub fn doc_freq(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.doc_count.len()];
        }
        let n = self.total as f64;
        self.doc_count.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

/// Keeps labels whose global document frequency is at least `cutoff`.
pub fn frequency_filter(vocab: &Vocabulary, stats: &CorpusStats, cutoff: f64) -> Result<Vocabulary> {
    if stats.doc_count.len() != vocab.len() {
        return Err(Error::invalid(format!(
            "stats cover {} dimensions but the vocabulary has {}",
            stats.doc_count.len(),
            vocab.len()
        )));
    }
    let freq = stats.doc_freq();
    let kept: Vec<&String> = vocab
        .entries()
        .iter()
        .zip(&freq)
        .filter(|(_, &f)| f >= cutoff)
        .map(|(e, _)| e)
        .collect();
    if kept.is_empty() {
        log::warn!("frequency filter at cutoff {cutoff} removed every label");
    }
    Vocabulary::from_labels(kept.into_iter().cloned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn rec(cam: &str, secs: i64, labels: &[(u32, &str)]) -> AnnotationRecord {
        AnnotationRecord {
            camera_id: cam.into(),
            timestamp: Utc.timestamp_opt(1_515_000_000 + secs, 0).unwrap(),
            labels: labels.iter().map(|&(s, t)| Label::new(s, t)).collect(),
        }
    }

    #[test]
    fn parses_and_prefixes_labels() {
        let line = r#"{"camera_id":"1137-1","timestamp":"2018-01-04T16:57:52Z","labels":[{"source":1,"text":"snow"},{"source":2,"text":"Snow"}]}"#;
        let r = parse_line(line, 1, &SourceRegistry::default()).unwrap();
        let labels: Vec<String> = r.prefixed_labels().collect();
        assert_eq!(labels, vec!["LS1: snow", "LS2: Snow"]);
        assert_eq!(format_utc(&r.timestamp), "2018-01-04T16:57:52Z");
    }

    #[test]
    fn duplicate_pairs_collapse_after_trimming() {
        let line = r#"{"camera_id":"c","timestamp":"2018-01-04T16:57:52Z","labels":[{"source":1,"text":"snow"},{"source":1,"text":" snow "}]}"#;
        let r = parse_line(line, 1, &SourceRegistry::default()).unwrap();
        assert_eq!(r.labels.len(), 1);
        assert_eq!(r.prefixed_labels().next().unwrap(), "LS1: snow");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        std::fs::write(
            &p,
            "{\"camera_id\":\"c\",\"timestamp\":\"2018-01-04T00:00:00Z\",\"labels\":[]}\n{not json\n",
        )
        .unwrap();
        match parse_annotations(&p, &SourceRegistry::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(
            &p,
            "{\"camera_id\":\"c\",\"timestamp\":\"2018-01-04T00:00:00Z\",\"labels\":[{\"source\":7,\"text\":\"x\"}]}\n",
        )
        .unwrap();
        match parse_annotations(&p, &SourceRegistry::default()) {
            Err(Error::UnknownSource { line, source_id }) => {
                assert_eq!((line, source_id), (1, 7))
            }
            other => panic!("expected unknown source, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(parse_annotations(&p, &SourceRegistry::default()).unwrap().is_empty());
    }

    #[test]
    fn vocabulary_union_and_exclusions() {
        let records = vec![rec("c", 0, &[(1, "road")]), rec("c", 1, &[(2, "Snow")])];
        let v = build_vocabulary(&records, &BTreeSet::new()).unwrap();
        assert_eq!(v.entries(), ["LS1: road", "LS2: Snow"]);
        let ex: BTreeSet<String> = ["LS2: Snow".to_string()].into();
        let v = build_vocabulary(&records, &ex).unwrap();
        assert_eq!(v.entries(), ["LS1: road"]);

        let all: BTreeSet<String> = ["LS1: road".to_string(), "LS2: Snow".to_string()].into();
        assert!(build_vocabulary(&records, &all).is_err());
    }

    #[test]
    fn vocabulary_ignores_record_order() {
        let mut records = vec![
            rec("a", 0, &[(1, "road"), (2, "Car")]),
            rec("b", 1, &[(2, "Snow")]),
            rec("a", 2, &[(1, "asphalt")]),
        ];
        let v1 = build_vocabulary(&records, &BTreeSet::new()).unwrap();
        records.reverse();
        let v2 = build_vocabulary(&records, &BTreeSet::new()).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1.digest(), v2.digest());
    }

    #[test]
    fn filter_boundary_is_inclusive() {
        // 30000 images: "rare3" on 3, "rare2" on 2, "road" on all.
        let mut records = Vec::new();
        for i in 0..30_000 {
            let mut labels = vec![(1, "road")];
            if i < 3 {
                labels.push((1, "rare3"));
            }
            if i < 2 {
                labels.push((1, "rare2"));
            }
            records.push(rec("c", i, &labels));
        }
        let v = build_vocabulary(&records, &BTreeSet::new()).unwrap();
        let stats = CorpusStats::compute(&records, &v);
        let f = frequency_filter(&v, &stats, DEFAULT_CUTOFF).unwrap();
        assert!(f.get("LS1: rare3").is_some());
        assert!(f.get("LS1: rare2").is_none());
        assert_eq!(frequency_filter(&v, &stats, 0.0).unwrap(), v);

        // idempotent
        let stats2 = CorpusStats::compute(&records, &f);
        assert_eq!(frequency_filter(&f, &stats2, DEFAULT_CUTOFF).unwrap(), f);
    }

    #[test]
    fn stats_are_consistent() {
        let records = vec![
            rec("a", 0, &[(1, "road"), (2, "Car")]),
            rec("b", 1, &[(1, "road")]),
            rec("a", 2, &[(1, "road")]),
        ];
        let v = build_vocabulary(&records, &BTreeSet::new()).unwrap();
        let s = CorpusStats::compute(&records, &v);
        assert_eq!(s.total, 3);
        assert_eq!(s.per_camera_counts.values().sum::<u64>(), 3);
        // entries: ["LS1: road", "LS2: Car"]
        assert_eq!(s.doc_count, vec![3, 1]);
        assert_eq!(s.per_camera_doc_count["a"], vec![2, 1]);
        assert!(s.doc_freq().iter().all(|f| (0.0..=1.0).contains(f)));
    }

    #[test]
    fn duplicate_frames_keep_first() {
        let records = vec![
            rec("a", 0, &[(1, "x")]),
            rec("a", 0, &[(1, "y")]),
            rec("b", 0, &[(1, "z")]),
        ];
        let out = drop_duplicate_frames(records);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].prefixed_labels().next().unwrap(), "LS1: x");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn label() -> impl Strategy<Value = (u32, String)> {
            (1u32..=2, "[a-zA-Z][a-zA-Z ]{0,8}[a-z]")
        }

        proptest! {
            #[test]
            fn json_line_round_trips(
                secs in 0i64..2_000_000_000,
                cam in "[0-9]{4}-[0-9]",
                labels in proptest::collection::vec(label(), 0..6),
            ) {
                let r = AnnotationRecord {
                    camera_id: cam,
                    timestamp: Utc.timestamp_opt(secs, 0).unwrap(),
                    labels: labels.into_iter().map(|(s, t)| Label::new(s, t)).collect(),
                };
                let line = r.to_json_line();
                let back = parse_line(&line, 1, &SourceRegistry::default()).unwrap();
                prop_assert_eq!(&back, &r);
                prop_assert_eq!(back.to_json_line(), line);
            }
        }
    }
}
