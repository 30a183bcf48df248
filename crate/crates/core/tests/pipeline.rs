use std::collections::BTreeSet;

use ctm_core::corpus::{
    clean_corpus, finetune_lines, merge_sources, read_jsonl, split_corpus, CleanConfig, Corpus, DefaultPatterns,
    DocumentMetadata, NameKind, Split,
};
use ctm_core::embedding::{materialize, train_subword_skipgram, EmbeddingTable, Provenance, SkipGramConfig};
use ctm_core::eval::{self, TrainConfig};
use ctm_core::fastener::{corpus_fastener_report, StandardsDb};
use ctm_core::nn::SetEncoderConfig;
use ctm_core::step::extract_documents;
use ctm_core::synthetic::{self, RoleCorpusConfig};
use ctm_core::tasks::{self, PairConfig, RankingTask};
use ctm_core::Exec;

fn build(dir: &std::path::Path) -> Corpus {
    let raw = synthetic::messy_records(300, 4);
    let steps = dir.join("steps");
    let meta = dir.join("meta.jsonl");
    synthetic::write_step_tree(&steps, &meta, &raw, 4).unwrap();
    let (parts, summary) = extract_documents(&steps, Exec::Parallel).unwrap();
    assert_eq!(summary.documents, raw.len());
    assert!(summary.files_rejected.is_empty());
    let metadata: Vec<DocumentMetadata> = read_jsonl(&meta).unwrap();
    let merged = merge_sources(parts, metadata);
    split_corpus(clean_corpus(merged, &CleanConfig::default()), 4).unwrap()
}

#[test]
fn step_tree_to_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = build(dir.path());
    let patterns = DefaultPatterns::default();
    // messy_records appends 15 duplicate documents to its 300.
    assert!(
        corpus.records.len() <= 300,
        "duplicates survive: {}",
        corpus.records.len()
    );
    for rec in &corpus.records {
        assert!(!rec.doc_name.starts_with("Copy of") && !rec.doc_name.ends_with("- Copy"));
        assert!(rec.parts.keys().all(|p| !patterns.is_default(p, NameKind::Part)));
        assert!(rec.features.keys().all(|f| !patterns.is_default(f, NameKind::Feature)));
    }

    let out = dir.path().join("corpus");
    corpus.save(&out).unwrap();
    let back = Corpus::load(&out).unwrap();
    assert_eq!(back.records, corpus.records);
    assert_eq!(back.split, corpus.split);

    // Cleaning a cleaned corpus changes nothing.
    let again = clean_corpus(corpus.records.clone(), &CleanConfig::default());
    assert_eq!(again, corpus.records);
}

#[test]
fn extraction_is_independent_of_execution() {
    let dir = tempfile::tempdir().unwrap();
    let raw = synthetic::messy_records(60, 8);
    let steps = dir.path().join("steps");
    synthetic::write_step_tree(&steps, &dir.path().join("m.jsonl"), &raw, 8).unwrap();
    let (a, sa) = extract_documents(&steps, Exec::Sequential).unwrap();
    let (b, sb) = extract_documents(&steps, Exec::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    for (doc, rec) in a.iter().zip({
        let mut r = raw.clone();
        r.sort_by(|x, y| x.doc_id.cmp(&y.doc_id));
        r
    }) {
        assert_eq!(doc.doc_id, rec.doc_id);
        assert_eq!(doc.parts, rec.parts);
    }
}

#[test]
fn fasteners_are_found_in_cleaned_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = build(dir.path());
    let report = corpus_fastener_report(&corpus.normalized(), &StandardsDb::shipped(), Exec::Parallel);
    assert!(report.documents_with_fastener > 0);
    assert!(report.total_fasteners >= report.documents_with_fastener);
    assert_eq!(report.per_standard.values().sum::<usize>(), report.total_fasteners);
}

#[test]
fn finetune_corpus_uses_training_documents_only() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = build(dir.path());
    let train = finetune_lines(&corpus, Some(Split::Train));
    let train_names: BTreeSet<&str> = corpus.docs_in(Split::Train).map(|r| r.doc_name.as_str()).collect();
    assert_eq!(
        train.len(),
        corpus.docs_in(Split::Train).filter(|r| !r.parts.is_empty()).count()
    );
    for line in &train {
        let name = line
            .strip_prefix("An assembly with name ")
            .and_then(|s| s.split(" contains the following parts: ").next())
            .unwrap();
        assert!(train_names.contains(name), "{line}");
    }
}

#[test]
fn task_artifacts_are_reproducible() {
    let corpus = synthetic::shared_vocab_corpus(400, 120, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let pairs = tasks::sample_two_parts(&corpus, Split::Test, 9, &PairConfig::default()).unwrap();
    let path = dir.path().join(tasks::artifact_name("pairs", Split::Test, 9, "tsv"));
    tasks::write_pairs_tsv(&path, &pairs).unwrap();
    let first = std::fs::read(&path).unwrap();
    let again = tasks::sample_two_parts(&corpus, Split::Test, 9, &PairConfig::default()).unwrap();
    tasks::write_pairs_tsv(&path, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
    assert_eq!(tasks::read_pairs_tsv(&path).unwrap().len(), pairs.len());
}

#[test]
fn evaluation_never_mutates_tables() {
    let (corpus, table) = synthetic::role_corpus(&RoleCorpusConfig {
        docs: 600,
        ..RoleCorpusConfig::default()
    })
    .unwrap();
    let before = table.checksum();
    let cfg = SetEncoderConfig {
        hidden: 16,
        inducing_points: 4,
        heads: 2,
        max_epochs: 2,
        ..SetEncoderConfig::default()
    };
    let patterns = DefaultPatterns::default();
    for task in [RankingTask::MissingPart, RankingTask::DocumentName] {
        let out = eval::run_ranking(
            task,
            &corpus,
            &table,
            Some(&cfg),
            "enc",
            2,
            3,
            64,
            &patterns,
            Exec::Parallel,
        )
        .unwrap();
        assert!(out.report.is_consistent());
        assert_eq!(out.report.n_trials, 2);
    }
    let out = eval::run_two_parts(
        &corpus,
        Some(&table),
        "mlp",
        2,
        3,
        // role-corpus parts of one document share their topic word
        &PairConfig {
            disjoint_tokens: false,
            ..PairConfig::default()
        },
        &TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!(out.report.is_consistent());
    assert_eq!(table.checksum(), before);
}

#[test]
fn random_rows_are_chance_level() {
    let corpus = synthetic::uniform_corpus(3000, (2, 4), 1).unwrap();
    let out = eval::run_two_parts(
        &corpus,
        None,
        "Random",
        5,
        0,
        &PairConfig::default(),
        &TrainConfig::default(),
    )
    .unwrap();
    assert!((out.report.mean - 0.5).abs() < 0.05, "{}", out.report.mean);
}

#[test]
fn skipgram_table_survives_the_interchange_format() {
    let corpus = synthetic::shared_vocab_corpus(300, 80, 5).unwrap();
    let lines = finetune_lines(&corpus, Some(Split::Train));
    let cfg = SkipGramConfig {
        dim: 16,
        epochs: 1,
        min_count: 1,
        bucket_count: 5_000,
        ..SkipGramConfig::default()
    };
    let (model, _) = train_subword_skipgram(&lines, &cfg, Exec::Parallel).unwrap();
    let strings: BTreeSet<String> = corpus.records.iter().flat_map(|r| r.parts.keys().cloned()).collect();
    let table = materialize(&model, strings.iter(), Provenance::SubwordSkipgram, Exec::Parallel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.tsv");
    table.save(&path).unwrap();
    let back = EmbeddingTable::load(&path).unwrap();
    assert_eq!(back, table);
    assert_eq!(back.checksum(), table.checksum());
    assert_eq!(back.len(), strings.len());
}
