//! The three self-supervised tasks: Two Parts, Missing Part and Document Name.
//!
//! All builders expect a normalized corpus (see [`Corpus::normalized`]) and
//! are pure functions of their inputs and seed.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{assign_splits, Corpus, DefaultPatterns, DocumentRecord, NameKind, Split};
use crate::embedding::tokenize_wordpunct;
use crate::{rng, Error, Result};

pub const BATCH_SIZE: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub part_a: String,
    pub part_b: String,
    pub positive: bool,
    pub doc_id_a: String,
    pub doc_id_b: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    /// Positive pairs drawn per document at most.
    pub pairs_per_doc: usize,
    /// Require the two names of every pair to share no word-punct token.
    pub disjoint_tokens: bool,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            pairs_per_doc: 2,
            disjoint_tokens: true,
        }
    }
}

fn tokens_disjoint(a: &str, b: &str) -> bool {
    let ta: BTreeSet<&str> = tokenize_wordpunct(a).into_iter().collect();
    tokenize_wordpunct(b).into_iter().all(|t| !ta.contains(t))
}

/// For each part name, the sorted indices of the documents containing it.
#[derive(Clone, Debug, Default)]
pub struct CooccurrenceIndex {
    docs_of: HashMap<String, Vec<u32>>,
}

impl CooccurrenceIndex {
    pub fn new<'a>(records: impl IntoIterator<Item = &'a DocumentRecord>) -> Self {
        let mut docs_of: HashMap<String, Vec<u32>> = HashMap::new();
        for (i, rec) in records.into_iter().enumerate() {
            for p in rec.parts.keys() {
                docs_of.entry(p.clone()).or_default().push(i as u32);
            }
        }
        Self { docs_of }
    }

    /// True if some document contains both names (or the name, when `a == b`).
    pub fn cooccur(&self, a: &str, b: &str) -> bool {
        let (Some(da), Some(db)) = (self.docs_of.get(a), self.docs_of.get(b)) else {
            return false;
        };
        let (mut i, mut j) = (0, 0);
        while i < da.len() && j < db.len() {
            match da[i].cmp(&db[j]) {
                std::cmp::Ordering::Equal => return true,
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        false
    }
}

/// Balanced positive/negative pairs from `docs`.
///
/// Positives are same-document pairs (token-disjoint when configured).
/// Negatives shuffle the second element across positives; any that
/// co-occur in a document of `index` (or fail the token rule) are dropped,
/// and surplus positives are discarded at random.
pub fn sample_pairs(
    docs: &[&DocumentRecord],
    index: &CooccurrenceIndex,
    seed: u64,
    cfg: &PairConfig,
) -> Result<Vec<PairSample>> {
    let mut r = rng::seeded(rng::derive(seed, "two-parts"));
    let mut ordered: Vec<&DocumentRecord> = docs.to_vec();
    ordered.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

    let mut positives = Vec::new();
    for doc in ordered {
        let parts: Vec<&String> = doc.parts.keys().collect();
        let mut eligible = Vec::new();
        for i in 0..parts.len() {
            for j in i + 1..parts.len() {
                if !cfg.disjoint_tokens || tokens_disjoint(parts[i], parts[j]) {
                    eligible.push((i, j));
                }
            }
        }
        for (i, j) in eligible.into_iter().choose_multiple(&mut r, cfg.pairs_per_doc) {
            let (a, b) = if r.gen::<bool>() { (i, j) } else { (j, i) };
            positives.push(PairSample {
                part_a: parts[a].clone(),
                part_b: parts[b].clone(),
                positive: true,
                doc_id_a: doc.doc_id.clone(),
                doc_id_b: doc.doc_id.clone(),
            });
        }
    }
    if positives.is_empty() {
        return Err(Error::NoEligiblePairs);
    }

    let mut perm: Vec<usize> = (0..positives.len()).collect();
    perm.shuffle(&mut r);
    let negatives: Vec<PairSample> = positives
        .iter()
        .zip(&perm)
        .map(|(p, &k)| PairSample {
            part_a: p.part_a.clone(),
            part_b: positives[k].part_b.clone(),
            positive: false,
            doc_id_a: p.doc_id_a.clone(),
            doc_id_b: positives[k].doc_id_b.clone(),
        })
        .filter(|n| {
            n.doc_id_a != n.doc_id_b
                && !index.cooccur(&n.part_a, &n.part_b)
                && (!cfg.disjoint_tokens || tokens_disjoint(&n.part_a, &n.part_b))
        })
        .collect();
    if negatives.is_empty() {
        return Err(Error::NoEligiblePairs);
    }
    positives.shuffle(&mut r);
    positives.truncate(negatives.len());

    let mut out = positives;
    out.extend(negatives);
    out.shuffle(&mut r);
    Ok(out)
}

/// Two Parts samples from the documents of one split; negatives are checked
/// against every document of the corpus.
pub fn sample_two_parts(corpus: &Corpus, split: Split, seed: u64, cfg: &PairConfig) -> Result<Vec<PairSample>> {
    let index = CooccurrenceIndex::new(&corpus.records);
    let docs: Vec<&DocumentRecord> = corpus.docs_in(split).collect();
    sample_pairs(&docs, &index, seed, cfg)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TwoPartsData {
    pub train: Vec<PairSample>,
    pub validation: Vec<PairSample>,
    pub test: Vec<PairSample>,
}

impl TwoPartsData {
    pub fn get(&self, split: Split) -> &[PairSample] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// The evaluation protocol for Two Parts: the corpus's held-out test
/// documents are split 70/15/15 again (seeded) and pairs are sampled inside
/// each part, so classifier training never sees embedding-training text.
pub fn two_parts_subsplits(corpus: &Corpus, seed: u64, cfg: &PairConfig) -> Result<TwoPartsData> {
    let index = CooccurrenceIndex::new(&corpus.records);
    let test: Vec<&DocumentRecord> = corpus.docs_in(Split::Test).collect();
    let ids: Vec<String> = test.iter().map(|d| d.doc_id.clone()).collect();
    let sub = assign_splits(&ids, rng::derive(seed, "two-parts/subsplit"))?;
    let part = |s: Split| -> Result<Vec<PairSample>> {
        let docs: Vec<&DocumentRecord> = test.iter().copied().filter(|d| sub[&d.doc_id] == s).collect();
        sample_pairs(&docs, &index, rng::derive(seed, s.as_str()), cfg)
    };
    Ok(TwoPartsData {
        train: part(Split::Train)?,
        validation: part(Split::Validation)?,
        test: part(Split::Test)?,
    })
}

pub fn write_pairs_tsv(path: &Path, pairs: &[PairSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for p in pairs {
        writeln!(w, "{}\t{}\t{}", u8::from(p.positive), p.part_a, p.part_b).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read `label TAB part_a TAB part_b` rows (document ids are not stored).
pub fn read_pairs_tsv(path: &Path) -> Result<Vec<PairSample>> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let what = path.display().to_string();
        let [label, a, b] = cols[..] else {
            return Err(Error::parse(what, i + 1, "expected label TAB part_a TAB part_b"));
        };
        let positive = match label {
            "1" => true,
            "0" => false,
            _ => return Err(Error::parse(what, i + 1, "label must be 0 or 1")),
        };
        out.push(PairSample {
            part_a: a.to_string(),
            part_b: b.to_string(),
            positive,
            doc_id_a: String::new(),
            doc_id_b: String::new(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingTask {
    MissingPart,
    DocumentName,
}

impl RankingTask {
    pub fn as_str(self) -> &'static str {
        match self {
            RankingTask::MissingPart => "missing_part",
            RankingTask::DocumentName => "doc_name",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingInstance {
    pub doc_id: String,
    pub inputs: Vec<String>,
    pub target_index: usize,
}

/// Instances sharing one ordered candidate list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingBatch {
    pub instances: Vec<RankingInstance>,
    pub candidates: Vec<String>,
}

impl RankingBatch {
    pub fn target(&self, instance: &RankingInstance) -> &str {
        &self.candidates[instance.target_index]
    }
}

/// An input set and the string whose embedding should be predicted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetInstance {
    pub inputs: Vec<String>,
    pub target: String,
}

struct Item {
    doc_id: String,
    inputs: Vec<String>,
    target: String,
    strings: Vec<String>,
}

fn missing_part_items(docs: &[&DocumentRecord], r: &mut rng::Rng) -> Vec<Item> {
    docs.iter()
        .filter(|d| d.parts.len() >= 2)
        .map(|d| {
            let strings: Vec<String> = d.parts.keys().cloned().collect();
            let t = r.gen_range(0..strings.len());
            let mut inputs = strings.clone();
            let target = inputs.remove(t);
            Item {
                doc_id: d.doc_id.clone(),
                inputs,
                target,
                strings,
            }
        })
        .collect()
}

fn docname_eligible(d: &DocumentRecord, patterns: &DefaultPatterns) -> bool {
    !d.doc_name.is_empty() && !patterns.is_default(&d.doc_name, NameKind::Document) && !d.parts.is_empty()
}

fn docname_items(docs: &[&DocumentRecord], patterns: &DefaultPatterns) -> Vec<Item> {
    docs.iter()
        .filter(|d| docname_eligible(d, patterns))
        .map(|d| Item {
            doc_id: d.doc_id.clone(),
            inputs: d.parts.keys().cloned().collect(),
            target: d.doc_name.clone(),
            strings: vec![d.doc_name.clone()],
        })
        .collect()
}

/// Group items greedily into batches of `batch_size` distinct candidate
/// strings. A document that would overflow the batch opens the next one.
/// Batches short of `batch_size` are padded with other strings of the same
/// documents pool, and candidates are shuffled.
fn assemble(mut items: Vec<Item>, batch_size: usize, r: &mut rng::Rng) -> Result<Vec<RankingBatch>> {
    if items.is_empty() {
        return Err(Error::NoCandidates);
    }
    items.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    items.shuffle(r);
    let pool: Vec<String> = items
        .iter()
        .flat_map(|i| i.strings.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if pool.len() < batch_size {
        log::warn!(
            "only {} distinct candidates available; building one batch smaller than {batch_size}",
            pool.len()
        );
    }

    let mut groups: Vec<Vec<Item>> = Vec::new();
    let mut current: Vec<Item> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for item in items {
        if item.strings.len() > batch_size {
            log::warn!(
                "{}: {} strings exceed the batch size; skipped",
                item.doc_id,
                item.strings.len()
            );
            continue;
        }
        let new = item.strings.iter().filter(|s| !seen.contains(*s)).count();
        if seen.len() + new > batch_size && !current.is_empty() {
            groups.push(std::mem::take(&mut current));
            seen.clear();
        }
        seen.extend(item.strings.iter().cloned());
        current.push(item);
    }
    if !current.is_empty() {
        groups.push(current);
    }

    let mut batches = Vec::with_capacity(groups.len());
    for group in groups {
        let mut present: HashSet<&str> = HashSet::new();
        let mut candidates: Vec<String> = Vec::new();
        for item in &group {
            for s in &item.strings {
                if present.insert(s) {
                    candidates.push(s.clone());
                }
            }
        }
        let want = batch_size.min(pool.len());
        if candidates.len() < want {
            let fill: Vec<&String> = pool
                .iter()
                .filter(|s| !present.contains(s.as_str()))
                .choose_multiple(r, want - candidates.len());
            candidates.extend(fill.into_iter().cloned());
        }
        candidates.shuffle(r);
        let position: HashMap<&str, usize> = candidates.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let instances = group
            .iter()
            .map(|item| RankingInstance {
                doc_id: item.doc_id.clone(),
                inputs: item.inputs.clone(),
                target_index: position[item.target.as_str()],
            })
            .collect();
        batches.push(RankingBatch { instances, candidates });
    }
    Ok(batches)
}

/// Missing Part batches: one part removed uniformly per document (from its
/// distinct part names), the rest are the input set.
pub fn build_missing_part_batches(docs: &[&DocumentRecord], seed: u64, batch_size: usize) -> Result<Vec<RankingBatch>> {
    let mut r = rng::seeded(rng::derive(seed, "missing-part"));
    let mut sorted = docs.to_vec();
    sorted.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let items = missing_part_items(&sorted, &mut r);
    assemble(items, batch_size, &mut r)
}

/// Document Name batches: all distinct parts as input, the document name as
/// target. Documents sharing a name in one batch share its candidate slot.
pub fn build_docname_batches(
    docs: &[&DocumentRecord],
    seed: u64,
    batch_size: usize,
    patterns: &DefaultPatterns,
) -> Result<Vec<RankingBatch>> {
    let mut r = rng::seeded(rng::derive(seed, "doc-name"));
    let items = docname_items(docs, patterns);
    assemble(items, batch_size, &mut r)
}

pub fn build_batches(
    task: RankingTask,
    corpus: &Corpus,
    split: Split,
    seed: u64,
    batch_size: usize,
    patterns: &DefaultPatterns,
) -> Result<Vec<RankingBatch>> {
    let docs: Vec<&DocumentRecord> = corpus.docs_in(split).collect();
    match task {
        RankingTask::MissingPart => build_missing_part_batches(&docs, seed, batch_size),
        RankingTask::DocumentName => build_docname_batches(&docs, seed, batch_size, patterns),
    }
}

/// Training instances for a set encoder. Missing Part targets are redrawn
/// from `seed`, so calling this once per epoch reshuffles the task.
pub fn set_instances(
    task: RankingTask,
    docs: &[&DocumentRecord],
    seed: u64,
    patterns: &DefaultPatterns,
) -> Vec<SetInstance> {
    let items = match task {
        RankingTask::MissingPart => {
            let mut r = rng::seeded(rng::derive(seed, "missing-part/train"));
            missing_part_items(docs, &mut r)
        }
        RankingTask::DocumentName => docname_items(docs, patterns),
    };
    items
        .into_iter()
        .map(|i| SetInstance {
            inputs: i.inputs,
            target: i.target,
        })
        .collect()
}

/// Flatten frozen batches into instances.
pub fn batch_instances(batches: &[RankingBatch]) -> Vec<SetInstance> {
    batches
        .iter()
        .flat_map(|b| {
            b.instances.iter().map(move |i| SetInstance {
                inputs: i.inputs.clone(),
                target: b.target(i).to_string(),
            })
        })
        .collect()
}

/// File name for seeded task artifacts, e.g. `pairs_test_seed7.tsv`.
pub fn artifact_name(kind: &str, split: Split, seed: u64, ext: &str) -> String {
    format!("{kind}_{split}_seed{seed}.{ext}")
}
