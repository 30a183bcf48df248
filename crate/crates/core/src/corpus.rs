//! Cleaning, deduplication, normalization and splitting of extracted names.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::step::DocumentParts;
use crate::{rng, Error, Result};

/// Feature types whose auto-generated names (`<Keyword> <n>`) count as defaults.
pub const FEATURE_KEYWORDS: [&str; 18] = [
    "Extrude", "Revolve", "Fillet", "Chamfer", "Sketch", "Shell", "Sweep", "Loft", "Mirror", "Pattern", "Draft",
    "Hole", "Plane", "Boolean", "Split", "Helix", "Thicken", "Rib",
];

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SPLITS_FILE: &str = "splits.tsv";
pub const MIN_SPLIT_DOCUMENTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NameKind {
    Part,
    Feature,
    Document,
}

/// One CAD document with its multisets of part and feature names.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    #[serde(default)]
    pub doc_name: String,
    #[serde(default)]
    pub parts: BTreeMap<String, u32>,
    #[serde(default)]
    pub features: BTreeMap<String, u32>,
}

impl DocumentRecord {
    /// Number of part occurrences, counting multiplicity.
    pub fn part_count(&self) -> usize {
        self.parts.values().map(|&n| n as usize).sum()
    }

    /// Part names repeated by multiplicity, in sorted order.
    pub fn expanded_parts(&self) -> Vec<&str> {
        self.parts
            .iter()
            .flat_map(|(p, &n)| std::iter::repeat_n(p.as_str(), n as usize))
            .collect()
    }
}

/// Document-level metadata (name and modeling features), one JSON object per line.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMetadata {
    pub doc_id: String,
    #[serde(default)]
    pub doc_name: String,
    #[serde(default)]
    pub features: Vec<String>,
}

/// Regular expressions recognising auto-generated names.
#[derive(Clone, Debug)]
pub struct DefaultPatterns {
    part: Vec<Regex>,
    feature: Vec<Regex>,
    document: Vec<Regex>,
}

impl Default for DefaultPatterns {
    fn default() -> Self {
        let feature = format!(r"^(?:{}) \d+$", FEATURE_KEYWORDS.join("|"));
        Self {
            part: vec![Regex::new(r"^Part \d+$").expect("static regex")],
            feature: vec![Regex::new(&feature).expect("static regex")],
            document: Vec::new(),
        }
    }
}

impl DefaultPatterns {
    pub fn new(part: &[&str], feature: &[&str], document: &[&str]) -> Result<Self> {
        let compile = |pats: &[&str]| -> Result<Vec<Regex>> {
            pats.iter()
                .map(|p| Regex::new(p).map_err(|e| Error::Config(format!("pattern {p:?}: {e}"))))
                .collect()
        };
        Ok(Self {
            part: compile(part)?,
            feature: compile(feature)?,
            document: compile(document)?,
        })
    }

    pub fn is_default(&self, name: &str, kind: NameKind) -> bool {
        let pats = match kind {
            NameKind::Part => &self.part,
            NameKind::Feature => &self.feature,
            NameKind::Document => &self.document,
        };
        !name.is_empty() && pats.iter().any(|re| re.is_match(name))
    }
}

fn shipped_patterns() -> &'static DefaultPatterns {
    static PATTERNS: OnceLock<DefaultPatterns> = OnceLock::new();
    PATTERNS.get_or_init(DefaultPatterns::default)
}

/// True iff `name` matches one of the shipped default-name patterns.
/// Empty names are not defaults; they are dropped separately.
pub fn is_default_name(name: &str, kind: NameKind) -> bool {
    shipped_patterns().is_default(name, kind)
}

/// Remove clone affixes (`Copy of ` prefix, ` - Copy` suffix) until none remain.
pub fn strip_copy_affixes(doc_name: &str) -> String {
    let mut s = doc_name.trim();
    loop {
        let before = s;
        if let Some(rest) = s.strip_prefix("Copy of") {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                s = rest.trim_start();
            }
        }
        if let Some(rest) = s.strip_suffix("- Copy") {
            if rest.is_empty() || rest.ends_with(char::is_whitespace) {
                s = rest.trim_end();
            }
        }
        if s == before {
            return s.trim().to_string();
        }
    }
}

/// Lowercase, underscores to spaces, whitespace runs collapsed, trimmed.
pub fn normalize_string(s: &str) -> String {
    let lowered = s.to_lowercase().replace('_', " ");
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug)]
pub struct CleanConfig {
    pub patterns: DefaultPatterns,
    /// Include the document name in the deduplication key.
    pub dedup_include_doc_name: bool,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            patterns: DefaultPatterns::default(),
            dedup_include_doc_name: true,
        }
    }
}

/// Join extractor output with metadata into raw records, sorted by doc id.
/// Part names come only from STEP; document names and features only from metadata.
pub fn merge_sources(parts: Vec<DocumentParts>, metadata: Vec<DocumentMetadata>) -> Vec<DocumentRecord> {
    let mut by_id: BTreeMap<String, DocumentRecord> = BTreeMap::new();
    for p in parts {
        let rec = by_id.entry(p.doc_id.clone()).or_insert_with(|| DocumentRecord {
            doc_id: p.doc_id.clone(),
            ..Default::default()
        });
        for (name, n) in p.parts {
            let slot = rec.parts.entry(name).or_insert(0);
            *slot = (*slot).max(n);
        }
    }
    for m in metadata {
        let rec = by_id.entry(m.doc_id.clone()).or_insert_with(|| DocumentRecord {
            doc_id: m.doc_id.clone(),
            ..Default::default()
        });
        rec.doc_name = m.doc_name;
        for f in m.features {
            *rec.features.entry(f).or_insert(0) += 1;
        }
    }
    by_id.into_values().collect()
}

fn keep_name(name: &str, kind: NameKind, patterns: &DefaultPatterns) -> bool {
    !name.trim().is_empty() && !patterns.is_default(name, kind)
}

/// Drop empty and default names and strip copy affixes from the document name.
pub fn clean_record(rec: &DocumentRecord, patterns: &DefaultPatterns) -> DocumentRecord {
    let filter = |m: &BTreeMap<String, u32>, kind| {
        m.iter()
            .filter(|(k, &n)| n > 0 && keep_name(k, kind, patterns))
            .map(|(k, &n)| (k.clone(), n))
            .collect()
    };
    let name = strip_copy_affixes(&rec.doc_name);
    DocumentRecord {
        doc_id: rec.doc_id.clone(),
        doc_name: if patterns.is_default(&name, NameKind::Document) {
            String::new()
        } else {
            name
        },
        parts: filter(&rec.parts, NameKind::Part),
        features: filter(&rec.features, NameKind::Feature),
    }
}

fn dedup_key(rec: &DocumentRecord, include_doc_name: bool) -> Vec<&str> {
    let mut key: Vec<&str> = rec.expanded_parts();
    for (f, &n) in &rec.features {
        key.extend(std::iter::repeat_n(f.as_str(), n as usize));
    }
    if include_doc_name {
        key.push(rec.doc_name.as_str());
    }
    key.sort_unstable();
    key
}

/// Keep one record (the lowest doc id) per sorted string multiset.
pub fn deduplicate(mut records: Vec<DocumentRecord>, include_doc_name: bool) -> Vec<DocumentRecord> {
    records.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let mut seen: HashMap<Vec<String>, ()> = HashMap::with_capacity(records.len());
    records
        .into_iter()
        .filter(|rec| {
            let key: Vec<String> = dedup_key(rec, include_doc_name)
                .into_iter()
                .map(str::to_owned)
                .collect();
            seen.insert(key, ()).is_none()
        })
        .collect()
}

/// Full cleaning pass: clean every record, drop documents with no remaining
/// part or feature names, deduplicate.
pub fn clean_corpus(records: Vec<DocumentRecord>, cfg: &CleanConfig) -> Vec<DocumentRecord> {
    let cleaned: Vec<DocumentRecord> = records
        .iter()
        .map(|r| clean_record(r, &cfg.patterns))
        .filter(|r| !r.parts.is_empty() || !r.features.is_empty())
        .collect();
    deduplicate(cleaned, cfg.dedup_include_doc_name)
}

fn normalize_counts(m: &BTreeMap<String, u32>) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    for (k, &n) in m {
        let k = normalize_string(k);
        if !k.is_empty() {
            *out.entry(k).or_insert(0) += n;
        }
    }
    out
}

/// Record with every string normalized; parts that collide after
/// normalization have their counts added.
pub fn normalize_record(rec: &DocumentRecord) -> DocumentRecord {
    DocumentRecord {
        doc_id: rec.doc_id.clone(),
        doc_name: normalize_string(&rec.doc_name),
        parts: normalize_counts(&rec.parts),
        features: normalize_counts(&rec.features),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// 70/15/15 sizes, each share rounded to the nearest document.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (70 * n + 50) / 100;
    let val = (15 * n + 50) / 100;
    (train, val, n - train - val)
}

/// Shuffle sorted ids with ChaCha8 seeded by `seed` and cut at 70/15/15.
pub fn assign_splits(ids: &[String], seed: u64) -> Result<BTreeMap<String, Split>> {
    if ids.len() < MIN_SPLIT_DOCUMENTS {
        return Err(Error::TooFewDocuments {
            found: ids.len(),
            required: MIN_SPLIT_DOCUMENTS,
        });
    }
    let mut order: Vec<&String> = ids.iter().collect();
    order.sort();
    order.dedup();
    order.shuffle(&mut rng::seeded(seed));
    let (train, val, _) = split_sizes(order.len());
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Validation
            } else {
                Split::Test
            };
            (id.clone(), s)
        })
        .collect())
}

/// Deduplicated records plus their split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub records: Vec<DocumentRecord>,
    pub split: BTreeMap<String, Split>,
    pub seed: Option<u64>,
}

pub fn split_corpus(mut records: Vec<DocumentRecord>, seed: u64) -> Result<Corpus> {
    records.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let ids: Vec<String> = records.iter().map(|r| r.doc_id.clone()).collect();
    let split = assign_splits(&ids, seed)?;
    Ok(Corpus {
        records,
        split,
        seed: Some(seed),
    })
}

impl Corpus {
    pub fn split_of(&self, doc_id: &str) -> Option<Split> {
        self.split.get(doc_id).copied()
    }

    pub fn docs_in(&self, split: Split) -> impl Iterator<Item = &DocumentRecord> + '_ {
        self.records
            .iter()
            .filter(move |r| self.split_of(&r.doc_id) == Some(split))
    }

    /// Copy with every string normalized (the form all tasks and baselines use).
    pub fn normalized(&self) -> Corpus {
        Corpus {
            records: self.records.iter().map(normalize_record).collect(),
            split: self.split.clone(),
            seed: self.seed,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CORPUS_FILE);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        for rec in &self.records {
            let line = serde_json::to_string(rec).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(SPLITS_FILE);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        for (id, s) in &self.split {
            writeln!(w, "{id}\t{s}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Corpus> {
        let records = read_jsonl(&dir.join(CORPUS_FILE))?;
        let path = dir.join(SPLITS_FILE);
        let reader = BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?);
        let mut split = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.is_empty() {
                continue;
            }
            let (id, s) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path.display().to_string(), i + 1, "expected doc_id TAB split"))?;
            let s = s
                .parse()
                .map_err(|e: Error| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
            split.insert(id.to_string(), s);
        }
        Ok(Corpus {
            records,
            split,
            seed: None,
        })
    }
}

/// Read one JSON value per non-empty line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for item in items {
        let line = serde_json::to_string(item).expect("serializable");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fine-tuning line for one document, or `None` if it has no parts.
/// Parts appear once each, sorted.
pub fn finetune_line(rec: &DocumentRecord) -> Option<String> {
    if rec.parts.is_empty() {
        return None;
    }
    let parts: Vec<&str> = rec.parts.keys().map(String::as_str).collect();
    Some(format!(
        "An assembly with name {} contains the following parts: {}.",
        rec.doc_name,
        parts.join(", ")
    ))
}

/// Fine-tuning lines for the documents of `split` (all documents when `None`).
pub fn finetune_lines(corpus: &Corpus, split: Option<Split>) -> Vec<String> {
    corpus
        .records
        .iter()
        .filter(|r| split.is_none_or(|s| corpus.split_of(&r.doc_id) == Some(s)))
        .filter_map(finetune_line)
        .collect()
}

/// Write the fine-tuning corpus; returns the number of lines written.
pub fn emit_finetune_corpus<W: Write>(corpus: &Corpus, split: Option<Split>, mut out: W) -> std::io::Result<usize> {
    let lines = finetune_lines(corpus, split);
    for line in &lines {
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(lines.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, name: &str, parts: &[(&str, u32)]) -> DocumentRecord {
        DocumentRecord {
            doc_id: id.into(),
            doc_name: name.into(),
            parts: parts.iter().map(|(k, n)| (k.to_string(), *n)).collect(),
            features: BTreeMap::new(),
        }
    }

    #[test]
    fn default_names() {
        assert!(is_default_name("Part 3", NameKind::Part));
        assert!(!is_default_name("", NameKind::Part));
        assert!(is_default_name("Extrude 12", NameKind::Feature));
        assert!(!is_default_name("Extrude arm", NameKind::Feature));
        assert!(!is_default_name("Part 3 copy", NameKind::Part));
        assert!(!is_default_name("part 3", NameKind::Part));
        assert!(!is_default_name("Extrude 12", NameKind::Part));
        for kw in FEATURE_KEYWORDS {
            assert!(is_default_name(&format!("{kw} 1"), NameKind::Feature), "{kw}");
        }
    }

    #[test]
    fn configurable_patterns() {
        let p = DefaultPatterns::new(&[r"^Body\d+$"], &[], &[r"^New document$"]).unwrap();
        assert!(p.is_default("Body12", NameKind::Part));
        assert!(!p.is_default("Part 1", NameKind::Part));
        assert!(p.is_default("New document", NameKind::Document));
        assert!(DefaultPatterns::new(&["("], &[], &[]).is_err());
    }

    #[test]
    fn copy_affixes() {
        assert_eq!(strip_copy_affixes("Copy of Gimbal"), "Gimbal");
        assert_eq!(strip_copy_affixes("Gimbal"), "Gimbal");
        assert_eq!(strip_copy_affixes("Copy of Copy of X - Copy"), "X");
        assert_eq!(strip_copy_affixes("  Robot - Copy - Copy "), "Robot");
        assert_eq!(strip_copy_affixes("Copy of "), "");
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_string("Big_Gear Rod"), "big gear rod");
        assert_eq!(normalize_string("x"), "x");
        assert_eq!(normalize_string("A__B  C"), "a b c");
        assert_eq!(
            normalize_string("_Slotted head cap screw ISO 4762 - M6x16_3"),
            "slotted head cap screw iso 4762 - m6x16 3"
        );
    }

    #[test]
    fn dedup_examples() {
        let a = rec("1", "", &[("a", 1), ("b", 1)]);
        let mut b = rec("2", "", &[("b", 1), ("a", 1)]);
        let out = deduplicate(vec![b.clone(), a.clone()], true);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].doc_id, "1");

        b.parts.insert("b".into(), 2);
        assert_eq!(deduplicate(vec![a.clone(), b], true).len(), 2);

        let named = rec("3", "gimbal", &[("a", 1), ("b", 1)]);
        assert_eq!(deduplicate(vec![a.clone(), named.clone()], true).len(), 2);
        assert_eq!(deduplicate(vec![a, named], false).len(), 1);
    }

    #[test]
    fn cleaning_drops_defaults_and_empty_docs() {
        let mut r = rec("1", "Copy of Gimbal - Copy", &[("Part 1", 2), ("frame", 1), ("  ", 1)]);
        r.features.insert("Extrude 3".into(), 1);
        r.features.insert("Fillet arm".into(), 1);
        let only_defaults = rec("2", "x", &[("Part 7", 1)]);
        let out = clean_corpus(vec![r, only_defaults], &CleanConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].doc_name, "Gimbal");
        assert_eq!(out[0].parts, BTreeMap::from([("frame".into(), 1)]));
        assert_eq!(out[0].features, BTreeMap::from([("Fillet arm".into(), 1)]));
    }

    #[test]
    fn merge_keeps_sources_apart() {
        let parts = vec![DocumentParts {
            doc_id: "d1".into(),
            parts: BTreeMap::from([("wheel".into(), 4)]),
        }];
        let meta = vec![
            DocumentMetadata {
                doc_id: "d1".into(),
                doc_name: "Car".into(),
                features: vec!["Extrude 1".into(), "axle cut".into(), "axle cut".into()],
            },
            DocumentMetadata {
                doc_id: "d0".into(),
                doc_name: "Empty".into(),
                features: vec![],
            },
        ];
        let merged = merge_sources(parts, meta);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].doc_id, "d0");
        assert_eq!(merged[1].parts["wheel"], 4);
        assert_eq!(merged[1].features["axle cut"], 2);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let recs: Vec<_> = (0..100).map(|i| rec(&format!("{i:03}"), "", &[("a", 1)])).collect();
        let c = split_corpus(recs.clone(), 9).unwrap();
        let count = |s| c.split.values().filter(|&&v| v == s).count();
        assert_eq!(
            (count(Split::Train), count(Split::Validation), count(Split::Test)),
            (70, 15, 15)
        );
        let again = split_corpus(recs.into_iter().rev().collect(), 9).unwrap();
        assert_eq!(c.split, again.split);
        assert_eq!(split_sizes(7 + 10), (12, 3, 2));
    }

    #[test]
    fn split_needs_ten_documents() {
        let recs: Vec<_> = (0..9).map(|i| rec(&i.to_string(), "", &[("a", 1)])).collect();
        assert!(matches!(
            split_corpus(recs, 1),
            Err(Error::TooFewDocuments { found: 9, .. })
        ));
    }

    #[test]
    fn finetune_template() {
        let mut c = split_corpus(
            (0..10)
                .map(|i| rec(&i.to_string(), "gimbal", &[("top gear", 1), ("frame", 2)]))
                .collect(),
            0,
        )
        .unwrap();
        c.records[0].parts.clear();
        let mut buf = Vec::new();
        let n = emit_finetune_corpus(&c, None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(n, 9);
        assert_eq!(text.lines().count(), n);
        assert_eq!(
            text.lines().next().unwrap(),
            "An assembly with name gimbal contains the following parts: frame, top gear."
        );
        assert!(text.ends_with(".\n"));

        let empty = Corpus {
            records: vec![],
            split: BTreeMap::new(),
            seed: None,
        };
        let mut buf = Vec::new();
        assert_eq!(emit_finetune_corpus(&empty, None, &mut buf).unwrap(), 0);
        assert!(buf.is_empty());
    }

    #[test]
    fn finetune_respects_split_filter() {
        let c = split_corpus((0..20).map(|i| rec(&i.to_string(), "n", &[("p", 1)])).collect(), 3).unwrap();
        let total: usize = Split::ALL.iter().map(|&s| finetune_lines(&c, Some(s)).len()).sum();
        assert_eq!(total, 20);
        assert_eq!(finetune_lines(&c, Some(Split::Train)).len(), 14);
    }

    #[test]
    fn corpus_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let c = split_corpus(
            (0..12)
                .map(|i| rec(&format!("d{i}"), "N_ame", &[("Gear A", 2)]))
                .collect(),
            5,
        )
        .unwrap();
        c.save(dir.path()).unwrap();
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back.records, c.records);
        assert_eq!(back.split, c.split);
    }

    fn arb_record() -> impl Strategy<Value = DocumentRecord> {
        (
            "[0-9]{1,3}",
            prop_oneof![Just(String::new()), "(Copy of )?[A-Z][a-z]{0,5}( - Copy)?"],
            prop::collection::btree_map(prop_oneof!["[a-c]", Just("Part 1".to_string())], 1u32..3, 0..4),
            prop::collection::btree_map(prop_oneof!["[a-c]", Just("Extrude 2".to_string())], 1u32..3, 0..3),
        )
            .prop_map(|(doc_id, doc_name, parts, features)| DocumentRecord {
                doc_id,
                doc_name,
                parts,
                features,
            })
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent(records in prop::collection::vec(arb_record(), 0..20)) {
            let cfg = CleanConfig::default();
            let once = clean_corpus(records, &cfg);
            let twice = clean_corpus(once.clone(), &cfg);
            prop_assert_eq!(&once, &twice);
            for r in &once {
                prop_assert!(r.parts.keys().all(|p| !is_default_name(p, NameKind::Part)));
                prop_assert!(r.features.keys().all(|f| !is_default_name(f, NameKind::Feature)));
                prop_assert!(!r.doc_name.starts_with("Copy of ") && !r.doc_name.ends_with(" - Copy"));
            }
        }

        #[test]
        fn dedup_leaves_distinct_keys(records in prop::collection::vec(arb_record(), 0..25), with_name in any::<bool>()) {
            let out = deduplicate(records, with_name);
            for (i, a) in out.iter().enumerate() {
                for b in &out[i + 1..] {
                    prop_assert_ne!(dedup_key(a, with_name), dedup_key(b, with_name));
                }
            }
        }

        #[test]
        fn normalized_has_no_underscores_or_uppercase(s in "\\PC{0,24}") {
            let n = normalize_string(&s);
            prop_assert!(!n.contains('_'));
            // Letters with a lowercase mapping never survive.
            prop_assert_eq!(n.to_lowercase(), n.clone());
            prop_assert_eq!(normalize_string(&n), n.clone());
        }

        #[test]
        fn split_partitions_ids(n in 10usize..200, seed in any::<u64>()) {
            let ids: Vec<String> = (0..n).map(|i| format!("doc{i}")).collect();
            let s = assign_splits(&ids, seed).unwrap();
            prop_assert_eq!(s.len(), n);
            prop_assert!(ids.iter().all(|id| s.contains_key(id)));
        }
    }
}
