//! Generated fixtures: STEP files and corpora with known structure.
//!
//! These back the property tests, the planted learnability checks and the
//! bundled mini corpus. Every generator is a pure function of its seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{assign_splits, Corpus, DocumentMetadata, DocumentRecord, Split};
use crate::embedding::{EmbeddingTable, Provenance};
use crate::step::encode_step_string;
use crate::{rng, Error, Result};

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// A pronounceable lowercase word of `syllables` consonant-vowel pairs.
pub fn random_word(r: &mut rng::Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(r).unwrap());
        w.push_str(VOWELS.choose(r).unwrap());
    }
    w
}

fn distinct_words(r: &mut rng::Rng, n: usize, syllables: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = random_word(r, syllables);
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// A minimal STEP file whose `MANIFOLD_SOLID_BREP` instances carry `solids`
/// and whose other entities (products, shells, shape representations) carry
/// `others`. Entity order is shuffled by `seed`.
pub fn step_file_text(solids: &[String], others: &[String], seed: u64) -> String {
    let mut r = rng::seeded(seed);
    let mut entities: Vec<String> = Vec::new();
    for s in solids {
        entities.push(format!("MANIFOLD_SOLID_BREP('{}',#{{shell}})", encode_step_string(s)));
    }
    for (i, o) in others.iter().enumerate() {
        let name = encode_step_string(o);
        entities.push(match i % 3 {
            0 => format!("PRODUCT('{name}','{name}','',(#{{ctx}}))"),
            1 => format!("CLOSED_SHELL('{name}',(#{{face}}))"),
            _ => format!("SHAPE_REPRESENTATION('{name}',(#{{shell}}),#{{ctx}})"),
        });
    }
    entities.push("APPLICATION_CONTEXT('core data for automotive mechanical design processes')".into());
    entities.push("CARTESIAN_POINT('',(0.,0.,0.))".into());
    entities.shuffle(&mut r);

    let mut out = String::from(
        "ISO-10303-21;\nHEADER;\nFILE_DESCRIPTION(('synthetic'),'2;1');\n\
         FILE_NAME('part.step','2020-01-01T00:00:00',(''),(''),'','','');\n\
         FILE_SCHEMA(('AUTOMOTIVE_DESIGN { 1 0 10303 214 1 1 1 1 }'));\nENDSEC;\nDATA;\n",
    );
    let n = entities.len();
    for (i, e) in entities.iter().enumerate() {
        let e = e
            .replace("{shell}", &r.gen_range(1..=n.max(1)).to_string())
            .replace("{ctx}", &r.gen_range(1..=n.max(1)).to_string())
            .replace("{face}", &r.gen_range(1..=n.max(1)).to_string());
        writeln!(out, "#{}={};", i + 1, e).unwrap();
    }
    out.push_str("ENDSEC;\nEND-ISO-10303-21;\n");
    out
}

/// Corpus of `docs` documents whose part names are unique random tokens:
/// no structure an embedding could exploit.
pub fn uniform_corpus(docs: usize, parts_per_doc: (usize, usize), seed: u64) -> Result<Corpus> {
    let mut r = rng::seeded(rng::derive(seed, "uniform"));
    let records = (0..docs)
        .map(|d| {
            let k = r.gen_range(parts_per_doc.0..=parts_per_doc.1);
            DocumentRecord {
                doc_id: format!("u{d:06}"),
                doc_name: format!("n{d}"),
                parts: (0..k).map(|j| (format!("p{d}x{j}"), r.gen_range(1..=3))).collect(),
                features: BTreeMap::new(),
            }
        })
        .collect();
    crate::corpus::split_corpus(records, seed)
}

/// Corpus drawing part names from a shared Zipf-like vocabulary, with some
/// two-token names, so that many names recur across documents and some
/// same-document names share tokens.
pub fn shared_vocab_corpus(docs: usize, vocab: usize, seed: u64) -> Result<Corpus> {
    let mut r = rng::seeded(rng::derive(seed, "shared"));
    let words = distinct_words(&mut r, vocab, 3);
    let weights: Vec<f64> = (1..=vocab).map(|i| 1.0 / i as f64).collect();
    let pick = rand::distributions::WeightedIndex::new(&weights).expect("positive weights");
    let mut records = Vec::with_capacity(docs);
    for d in 0..docs {
        let k = r.gen_range(2..=8);
        let mut parts = BTreeMap::new();
        while parts.len() < k {
            let w = &words[pick.sample(&mut r)];
            let name = match r.gen_range(0..4) {
                0 => format!("{w} {}", r.gen_range(1..4)),
                1 => format!("{w} {}", words[pick.sample(&mut r)]),
                _ => w.clone(),
            };
            *parts.entry(name).or_insert(0) += 1;
        }
        records.push(DocumentRecord {
            doc_id: format!("s{d:06}"),
            doc_name: random_word(&mut r, 3),
            parts,
            features: BTreeMap::new(),
        });
    }
    let records = crate::corpus::deduplicate(records, true);
    crate::corpus::split_corpus(records, seed)
}

/// Planted corpus for the Two Parts task.
#[derive(Clone, Debug)]
pub struct TopicCorpusConfig {
    pub docs: usize,
    pub topics: usize,
    pub parts_per_doc: (usize, usize),
    /// Suffixes per topic used by training-split documents.
    pub train_suffixes: usize,
    pub seed: u64,
}

impl Default for TopicCorpusConfig {
    fn default() -> Self {
        Self {
            docs: 6000,
            topics: 12,
            parts_per_doc: (3, 6),
            train_suffixes: 25,
            seed: 0,
        }
    }
}

/// Each document belongs to one latent topic and every part name is
/// `<topic stem><suffix>`. Training-split documents draw suffixes from a
/// small per-topic pool; validation and test documents get fresh suffixes,
/// so their words never occur in training text and only the shared stem
/// (visible to character n-grams) carries the topic.
pub fn topic_corpus(cfg: &TopicCorpusConfig) -> Result<Corpus> {
    let mut r = rng::seeded(rng::derive(cfg.seed, "topic"));
    let stems = distinct_words(&mut r, cfg.topics, 3);
    let pools: Vec<Vec<String>> = (0..cfg.topics)
        .map(|_| distinct_words(&mut r, cfg.train_suffixes, 1))
        .collect();
    let ids: Vec<String> = (0..cfg.docs).map(|d| format!("t{d:06}")).collect();
    let split = assign_splits(&ids, cfg.seed)?;
    let mut records = Vec::with_capacity(cfg.docs);
    for id in &ids {
        let t = r.gen_range(0..cfg.topics);
        let k = r.gen_range(cfg.parts_per_doc.0..=cfg.parts_per_doc.1);
        let train = split[id] == Split::Train;
        let mut parts = BTreeMap::new();
        while parts.len() < k.min(if train { cfg.train_suffixes } else { usize::MAX }) {
            let suffix = if train {
                pools[t].choose(&mut r).unwrap().clone()
            } else {
                random_word(&mut r, 2)
            };
            parts.insert(format!("{}{suffix}", stems[t]), r.gen_range(1..=2));
        }
        records.push(DocumentRecord {
            doc_id: id.clone(),
            doc_name: format!("{}{}", stems[t], random_word(&mut r, 2)),
            parts,
            features: BTreeMap::new(),
        });
    }
    Ok(Corpus {
        records,
        split,
        seed: Some(cfg.seed),
    })
}

/// Planted corpus and embedding table for the missing-part task.
#[derive(Clone, Debug)]
pub struct RoleCorpusConfig {
    pub docs: usize,
    pub roles: usize,
    pub parts_per_doc: (usize, usize),
    pub topic_dim: usize,
    pub role_dim: usize,
    pub noise: f32,
    pub seed: u64,
}

impl Default for RoleCorpusConfig {
    fn default() -> Self {
        Self {
            docs: 3000,
            roles: 6,
            parts_per_doc: (3, 5),
            topic_dim: 16,
            role_dim: 16,
            noise: 0.05,
            seed: 0,
        }
    }
}

/// Every document is its own topic with a random topic vector `c`; its
/// parts are named `<topic word> <role word>` for a subset of shared roles
/// with role vectors `r_k`. Part vectors are `[c ; r_k]` plus small noise;
/// document names map to `[c ; 0]` plus noise. A missing part is therefore
/// predictable from the remaining parts: same topic half, absent role.
pub fn role_corpus(cfg: &RoleCorpusConfig) -> Result<(Corpus, EmbeddingTable)> {
    if cfg.parts_per_doc.1 > cfg.roles || cfg.parts_per_doc.0 < 2 {
        return Err(Error::Config("need 2 <= parts per document <= roles".into()));
    }
    let mut r = rng::seeded(rng::derive(cfg.seed, "roles"));
    let dim = cfg.topic_dim + cfg.role_dim;
    let gauss = |r: &mut rng::Rng, n: usize, scale: f32| -> Vec<f32> {
        (0..n)
            .map(|_| scale * Distribution::<f32>::sample(&StandardNormal, r))
            .collect::<Vec<f32>>()
    };
    let role_words = distinct_words(&mut r, cfg.roles, 2);
    let role_vecs: Vec<Vec<f32>> = (0..cfg.roles).map(|_| gauss(&mut r, cfg.role_dim, 1.0)).collect();
    let topic_words = distinct_words(&mut r, cfg.docs, 4);
    let mut table = EmbeddingTable::new(dim, Provenance::External);
    let mut records = Vec::with_capacity(cfg.docs);
    for (d, word) in topic_words.iter().enumerate() {
        let c = gauss(&mut r, cfg.topic_dim, 1.0);
        let k = r.gen_range(cfg.parts_per_doc.0..=cfg.parts_per_doc.1);
        let mut roles: Vec<usize> = (0..cfg.roles).collect();
        roles.shuffle(&mut r);
        let mut parts = BTreeMap::new();
        for &role in &roles[..k] {
            let name = format!("{word} {}", role_words[role]);
            let mut v: Vec<f32> = c.iter().chain(&role_vecs[role]).copied().collect();
            for (x, n) in v.iter_mut().zip(gauss(&mut r, dim, cfg.noise)) {
                *x += n;
            }
            table.insert(name.clone(), &v)?;
            parts.insert(name, 1);
        }
        let mut name_vec: Vec<f32> = c
            .iter()
            .copied()
            .chain(std::iter::repeat_n(0.0, cfg.role_dim))
            .collect();
        for (x, n) in name_vec.iter_mut().zip(gauss(&mut r, dim, cfg.noise)) {
            *x += n;
        }
        table.insert(word.clone(), &name_vec)?;
        records.push(DocumentRecord {
            doc_id: format!("r{d:06}"),
            doc_name: word.clone(),
            parts,
            features: BTreeMap::new(),
        });
    }
    Ok((crate::corpus::split_corpus(records, cfg.seed)?, table))
}

/// Raw (uncleaned) sources for a mini corpus: topic documents with the
/// noise real exports have (default part names, copy affixes, mixed case,
/// underscores, default features and duplicate documents).
pub fn messy_records(docs: usize, seed: u64) -> Vec<DocumentRecord> {
    let cfg = TopicCorpusConfig {
        docs,
        topics: 8,
        parts_per_doc: (2, 6),
        train_suffixes: 12,
        seed,
    };
    let clean = topic_corpus(&cfg).expect("valid config");
    let mut r = rng::seeded(rng::derive(seed, "messy"));
    let fasteners = [
        "Socket head cap screw ISO 4762 - M6x16",
        "DIN 912 M3x14",
        "Hex Socket Set Screw DIN 913 - M5x5",
        "ISO_4762_M4x10",
    ];
    let feature_words = [
        "Base flange",
        "Mount holes",
        "Extrude 1",
        "Fillet 2",
        "Sketch 3",
        "Rib 1",
    ];
    let mut out: Vec<DocumentRecord> = Vec::new();
    for rec in clean.records {
        let mut parts: BTreeMap<String, u32> = BTreeMap::new();
        for (p, n) in rec.parts {
            let p = match r.gen_range(0..6) {
                0 => p.to_uppercase(),
                1 => {
                    let mut c = p.chars();
                    c.next()
                        .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
                        .unwrap_or_default()
                }
                2 => format!("{p}_{}", r.gen_range(1..4)),
                _ => p,
            };
            *parts.entry(p).or_insert(0) += n;
        }
        if r.gen_bool(0.4) {
            parts.insert(format!("Part {}", r.gen_range(1..20)), 1);
        }
        if r.gen_bool(0.05) {
            parts.insert(fasteners.choose(&mut r).unwrap().to_string(), r.gen_range(1..=8));
        }
        let doc_name = match r.gen_range(0..8) {
            0 => format!("Copy of {}", rec.doc_name),
            1 => format!("{} - Copy", rec.doc_name),
            _ => rec.doc_name,
        };
        let features = feature_words
            .choose_multiple(&mut r, 2)
            .map(|f| (f.to_string(), 1))
            .collect();
        out.push(DocumentRecord {
            doc_id: rec.doc_id,
            doc_name,
            parts,
            features,
        });
    }
    let dupes: Vec<DocumentRecord> = out
        .iter()
        .take(docs / 20)
        .map(|d| DocumentRecord {
            doc_id: format!("{}d", d.doc_id),
            ..d.clone()
        })
        .collect();
    out.extend(dupes);
    out
}

/// Write each record as a directory of STEP files (`<root>/<doc_id>/*.step`)
/// and its name and features to `metadata`. Part multiplicities are split
/// across one or two files so that the per-file maximum reproduces them.
pub fn write_step_tree(root: &Path, metadata: &Path, records: &[DocumentRecord], seed: u64) -> Result<()> {
    let mut r = rng::seeded(rng::derive(seed, "step-tree"));
    let mut meta = Vec::with_capacity(records.len());
    for rec in records {
        let dir = root.join(&rec.doc_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let files = if rec.parts.len() > 1 && r.gen_bool(0.5) { 2 } else { 1 };
        for f in 0..files {
            let mut solids = Vec::new();
            for (name, &n) in &rec.parts {
                // the first file holds the full count, the second a subset
                let count = if f == 0 {
                    n
                } else if r.gen_bool(0.5) {
                    r.gen_range(1..=n)
                } else {
                    0
                };
                solids.extend(std::iter::repeat_n(name.clone(), count as usize));
            }
            let others = vec![rec.doc_name.clone(), "Default".to_string()];
            let text = step_file_text(&solids, &others, r.gen());
            let path = dir.join(format!("{}_{f:03}.step", rec.doc_id));
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        meta.push(DocumentMetadata {
            doc_id: rec.doc_id.clone(),
            doc_name: rec.doc_name.clone(),
            features: rec
                .features
                .iter()
                .flat_map(|(k, &n)| std::iter::repeat_n(k.clone(), n as usize))
                .collect(),
        });
    }
    crate::corpus::write_jsonl(metadata, &meta)
}
