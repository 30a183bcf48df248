use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use ctm_core::corpus::{
    clean_corpus, emit_finetune_corpus, finetune_lines, merge_sources, read_jsonl, split_corpus, write_jsonl,
    CleanConfig, Corpus, DefaultPatterns, DocumentMetadata, Split,
};
use ctm_core::embedding::{
    materialize, train_subword_skipgram, BowMode, BowVectorizer, EmbeddingTable, Provenance, SkipGramConfig,
    SkipGramMode,
};
use ctm_core::eval::{self, Prediction, TrainConfig, TrialOutput, TrialReport};
use ctm_core::fastener::{corpus_fastener_report, StandardsDb};
use ctm_core::nn::SetEncoderConfig;
use ctm_core::step::{extract_documents, DocumentParts};
use ctm_core::tasks::{self, PairConfig, RankingTask, BATCH_SIZE};
use ctm_core::Exec;
use serde::Serialize;

use crate::settings::Settings;
use crate::{Cli, Command};

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    seed: u64,
    jobs: usize,
    config: BTreeMap<String, String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    stats: serde_json::Value,
    wall_clock_secs: f64,
}

struct Ctx {
    command: &'static str,
    settings: Settings,
    seed: u64,
    jobs: usize,
    exec: Exec,
    started: Instant,
}

impl Ctx {
    fn manifest(&self, path: &Path, inputs: &[&Path], outputs: &[&Path], stats: serde_json::Value) -> Result<()> {
        for unused in self.settings.unused() {
            log::warn!("config key {unused} is not used by {}", self.command);
        }
        let m = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            jobs: self.jobs,
            config: self.settings.snapshot(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            stats,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        };
        write_json(path, &m)
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load(dir).with_context(|| format!("loading corpus from {}", dir.display()))
}

fn corpus_strings(corpus: &Corpus) -> BTreeSet<String> {
    corpus
        .records
        .iter()
        .flat_map(|r| r.parts.keys().cloned().chain(std::iter::once(r.doc_name.clone())))
        .filter(|s| !s.is_empty())
        .collect()
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.seed(cli.seed)?;
    let default_jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let jobs = settings.get("jobs", cli.jobs, default_jobs)?;
    ensure!(jobs >= 1, "--jobs must be at least 1");
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::debug!("rayon pool already configured: {e}");
        }
    }
    let command = match &cli.command {
        Command::Extract(_) => "extract",
        Command::BuildCorpus(_) => "build-corpus",
        Command::DetectFasteners(_) => "detect-fasteners",
        Command::EmitFinetune(_) => "emit-finetune",
        Command::SampleTasks(_) => "sample-tasks",
        Command::TrainBaseline(_) => "train-baseline",
        Command::TrainEval(_) => "train-eval",
        Command::Report(_) => "report",
    };
    let ctx = Ctx {
        command,
        settings,
        seed,
        jobs,
        exec: Exec::from_jobs(jobs),
        started: Instant::now(),
    };
    match cli.command {
        Command::Extract(a) => extract(&ctx, a),
        Command::BuildCorpus(a) => build_corpus(&ctx, a),
        Command::DetectFasteners(a) => detect_fasteners(&ctx, a),
        Command::EmitFinetune(a) => emit_finetune(&ctx, a),
        Command::SampleTasks(a) => sample_tasks(&ctx, a),
        Command::TrainBaseline(a) => train_baseline(&ctx, a),
        Command::TrainEval(a) => train_eval(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Root of the STEP tree; each top-level entry is one document.
    #[arg(long = "in", value_name = "DIR")]
    input: Option<PathBuf>,
    /// Output JSON-lines file of {doc_id, parts}.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn extract(ctx: &Ctx, a: ExtractArgs) -> Result<()> {
    let input = ctx.settings.require_path("in", a.input)?;
    let out = ctx.settings.require_path("out", a.out)?;
    ensure!(input.is_dir(), "{} is not a directory", input.display());
    let (docs, summary) = extract_documents(&input, ctx.exec)?;
    ensure_parent(&out)?;
    write_jsonl(&out, &docs)?;
    let back: Vec<DocumentParts> = read_jsonl(&out)?;
    ensure!(back == docs, "{} did not read back identically", out.display());
    log::info!(
        "{} documents from {} files ({} rejected, {} malformed records)",
        summary.documents,
        summary.files_scanned,
        summary.files_rejected.len(),
        summary.malformed_records
    );
    ctx.manifest(
        &sibling(&out, ".manifest.json"),
        &[&input],
        &[&out],
        serde_json::to_value(&summary)?,
    )
}

#[derive(Args, Debug)]
pub struct BuildCorpusArgs {
    /// Output of `extract`.
    #[arg(long, value_name = "FILE")]
    parts: Option<PathBuf>,
    /// JSON lines of {doc_id, doc_name, features}.
    #[arg(long, value_name = "FILE")]
    metadata: Option<PathBuf>,
    /// TSV of `part|feature|document TAB regex` replacing the shipped default-name patterns.
    #[arg(long, value_name = "FILE")]
    patterns: Option<PathBuf>,
    /// Leave the document name out of the deduplication key.
    #[arg(long)]
    dedup_ignore_name: bool,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn load_patterns(path: &Path) -> Result<DefaultPatterns> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut part, mut feature, mut document) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((kind, re)) = line.split_once('\t') else {
            bail!("{}: line {}: expected kind TAB regex", path.display(), i + 1);
        };
        match kind {
            "part" => part.push(re),
            "feature" => feature.push(re),
            "document" => document.push(re),
            other => bail!("{}: line {}: unknown kind {other:?}", path.display(), i + 1),
        }
    }
    Ok(DefaultPatterns::new(&part, &feature, &document)?)
}

fn build_corpus(ctx: &Ctx, a: BuildCorpusArgs) -> Result<()> {
    let parts_path = ctx.settings.require_path("parts", a.parts)?;
    let meta_path = ctx.settings.path("metadata", a.metadata);
    let out = ctx.settings.require_path("out", a.out)?;
    let patterns = match ctx.settings.path("patterns", a.patterns) {
        Some(p) => load_patterns(&p)?,
        None => DefaultPatterns::default(),
    };
    let ignore_name = ctx
        .settings
        .get("dedup-ignore-name", a.dedup_ignore_name.then_some(true), false)?;

    let parts: Vec<DocumentParts> = read_jsonl(&parts_path)?;
    let metadata: Vec<DocumentMetadata> = match &meta_path {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let merged = merge_sources(parts, metadata);
    let raw = merged.len();
    let cfg = CleanConfig {
        patterns,
        dedup_include_doc_name: !ignore_name,
    };
    let cleaned = clean_corpus(merged, &cfg);
    let kept = cleaned.len();
    let corpus = split_corpus(cleaned, ctx.seed)?.normalized();
    corpus.save(&out)?;
    let back = load_corpus(&out)?;
    ensure!(
        back.records == corpus.records && back.split == corpus.split,
        "corpus in {} did not read back identically",
        out.display()
    );
    let by_split: BTreeMap<String, usize> = Split::ALL
        .iter()
        .map(|s| (s.to_string(), corpus.docs_in(*s).count()))
        .collect();
    let multi = corpus.records.iter().filter(|r| r.parts.len() >= 2).count();
    log::info!("{raw} documents in, {kept} after cleaning; {multi} with two or more distinct parts; {by_split:?}");
    let mut inputs = vec![parts_path.as_path()];
    if let Some(p) = &meta_path {
        inputs.push(p);
    }
    ctx.manifest(
        &out.join("manifest.json"),
        &inputs,
        &[&out],
        serde_json::json!({
            "documents_in": raw,
            "documents_kept": kept,
            "documents_with_two_or_more_parts": multi,
            "splits": by_split,
        }),
    )
}

#[derive(Args, Debug)]
pub struct FastenerArgs {
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Standards TSV (`family TAB code TAB d1 TAB d2`); the shipped table by default.
    #[arg(long, value_name = "FILE")]
    standards: Option<PathBuf>,
    /// Output JSON report.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn detect_fasteners(ctx: &Ctx, a: FastenerArgs) -> Result<()> {
    let dir = ctx.settings.require_path("corpus", a.corpus)?;
    let out = ctx.settings.require_path("out", a.out)?;
    let db = match ctx.settings.path("standards", a.standards) {
        Some(p) => StandardsDb::load(&p)?,
        None => StandardsDb::shipped(),
    };
    let corpus = load_corpus(&dir)?;
    let report = corpus_fastener_report(&corpus, &db, ctx.exec);
    ensure_parent(&out)?;
    write_json(&out, &report)?;
    log::info!(
        "{} fasteners in {} of {} documents",
        report.total_fasteners,
        report.documents_with_fastener,
        corpus.records.len()
    );
    ctx.manifest(
        &sibling(&out, ".manifest.json"),
        &[&dir],
        &[&out],
        serde_json::json!({ "standards": db.standards().count() }),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SplitChoice {
    One(Split),
    All,
}

impl FromStr for SplitChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(SplitChoice::All);
        }
        s.parse::<Split>().map(SplitChoice::One).map_err(|e| e.to_string())
    }
}

impl fmt::Display for SplitChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitChoice::One(s) => write!(f, "{s}"),
            SplitChoice::All => f.write_str("all"),
        }
    }
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// train, validation, test or all.
    #[arg(long)]
    split: Option<SplitChoice>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn emit_finetune(ctx: &Ctx, a: FinetuneArgs) -> Result<()> {
    let dir = ctx.settings.require_path("corpus", a.corpus)?;
    let out = ctx.settings.require_path("out", a.out)?;
    let split = ctx.settings.get("split", a.split, SplitChoice::One(Split::Train))?;
    let corpus = load_corpus(&dir)?;
    let filter = match split {
        SplitChoice::One(s) => Some(s),
        SplitChoice::All => None,
    };
    ensure_parent(&out)?;
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let n = emit_finetune_corpus(&corpus, filter, BufWriter::new(file))?;
    log::info!("{n} lines ({split})");
    ctx.manifest(
        &sibling(&out, ".manifest.json"),
        &[&dir],
        &[&out],
        serde_json::json!({ "lines": n }),
    )
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of trial seeds to sample for.
    #[arg(long)]
    trials: Option<usize>,
    /// Candidates per ranking batch.
    #[arg(long)]
    candidates: Option<usize>,
    /// Positive pairs per document at most.
    #[arg(long)]
    pairs_per_doc: Option<usize>,
}

fn pair_config(ctx: &Ctx, flag: Option<usize>) -> Result<PairConfig> {
    Ok(PairConfig {
        pairs_per_doc: ctx
            .settings
            .get("pairs-per-doc", flag, PairConfig::default().pairs_per_doc)?,
        ..PairConfig::default()
    })
}

fn sample_tasks(ctx: &Ctx, a: SampleArgs) -> Result<()> {
    let dir = ctx.settings.require_path("corpus", a.corpus)?;
    let out = ctx.settings.require_path("out", a.out)?;
    let trials = ctx.settings.get("trials", a.trials, 1)?;
    let candidates = ctx.settings.get("candidates", a.candidates, BATCH_SIZE)?;
    let pair_cfg = pair_config(ctx, a.pairs_per_doc)?;
    let corpus = load_corpus(&dir)?;
    let patterns = DefaultPatterns::default();
    create_dir(&out)?;
    let mut written = Vec::new();
    let mut stats = serde_json::Map::new();
    for t in 0..trials {
        let seed = eval::trial_seed(ctx.seed, t);
        let pairs = tasks::two_parts_subsplits(&corpus, seed, &pair_cfg)?;
        for split in Split::ALL {
            let path = out.join(tasks::artifact_name("pairs", split, seed, "tsv"));
            tasks::write_pairs_tsv(&path, pairs.get(split))?;
            stats.insert(
                path.file_name().unwrap().to_string_lossy().into(),
                pairs.get(split).len().into(),
            );
            written.push(path);
        }
        for task in [RankingTask::MissingPart, RankingTask::DocumentName] {
            for split in [Split::Validation, Split::Test] {
                let batches = tasks::build_batches(task, &corpus, split, seed, candidates, &patterns)?;
                let path = out.join(tasks::artifact_name(task.as_str(), split, seed, "json"));
                let n: usize = batches.iter().map(|b| b.instances.len()).sum();
                write_json(&path, &batches)?;
                stats.insert(path.file_name().unwrap().to_string_lossy().into(), n.into());
                written.push(path);
            }
        }
    }
    log::info!("wrote {} task files to {}", written.len(), out.display());
    let outputs: Vec<&Path> = written.iter().map(PathBuf::as_path).collect();
    ctx.manifest(
        &out.join("manifest.json"),
        &[&dir],
        &outputs,
        serde_json::Value::Object(stats),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BaselineKind {
    Subword,
    BowFreq,
    Tfidf,
    Random,
}

impl FromStr for BaselineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "subword" => Ok(Self::Subword),
            "bow-freq" => Ok(Self::BowFreq),
            "tfidf" => Ok(Self::Tfidf),
            "random" => Ok(Self::Random),
            _ => Err(format!("unknown baseline {s:?} (subword, bow-freq, tfidf, random)")),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Subword => "subword",
            Self::BowFreq => "bow-freq",
            Self::Tfidf => "tfidf",
            Self::Random => "random",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ModeArg(SkipGramMode);

impl FromStr for ModeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "skipgram" => Ok(Self(SkipGramMode::Skipgram)),
            "cbow" => Ok(Self(SkipGramMode::Cbow)),
            _ => Err(format!("unknown mode {s:?} (skipgram, cbow)")),
        }
    }
}

impl fmt::Display for ModeArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            SkipGramMode::Skipgram => "skipgram",
            SkipGramMode::Cbow => "cbow",
        })
    }
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// subword, bow-freq, tfidf or random.
    #[arg(long)]
    kind: Option<BaselineKind>,
    /// Output embedding table.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    /// skipgram or cbow.
    #[arg(long)]
    mode: Option<ModeArg>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    ngram_min: Option<usize>,
    #[arg(long)]
    ngram_max: Option<usize>,
    #[arg(long)]
    buckets: Option<u32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    min_count: Option<u32>,
    #[arg(long)]
    subsample: Option<f64>,
}

fn train_baseline(ctx: &Ctx, a: BaselineArgs) -> Result<()> {
    let dir = ctx.settings.require_path("corpus", a.corpus)?;
    let out = ctx.settings.require_path("out", a.out)?;
    let kind = ctx.settings.require("kind", a.kind)?;
    let corpus = load_corpus(&dir)?;
    let lines = finetune_lines(&corpus, Some(Split::Train));
    let strings = corpus_strings(&corpus);
    let mut stats = serde_json::Map::new();
    let table = match kind {
        BaselineKind::Subword => {
            let d = SkipGramConfig::default();
            let cfg = SkipGramConfig {
                dim: ctx.settings.get("dim", a.dim, d.dim)?,
                window: ctx.settings.get("window", a.window, d.window)?,
                mode: ctx.settings.get("mode", a.mode, ModeArg(d.mode))?.0,
                negatives: ctx.settings.get("negatives", a.negatives, d.negatives)?,
                ngram_min: ctx.settings.get("ngram-min", a.ngram_min, d.ngram_min)?,
                ngram_max: ctx.settings.get("ngram-max", a.ngram_max, d.ngram_max)?,
                bucket_count: ctx.settings.get("buckets", a.buckets, d.bucket_count)?,
                epochs: ctx.settings.get("epochs", a.epochs, d.epochs)?,
                learning_rate: ctx.settings.get("lr", a.lr, d.learning_rate)?,
                min_count: ctx.settings.get("min-count", a.min_count, d.min_count)?,
                subsample: ctx.settings.get("subsample", a.subsample, d.subsample)?,
                seed: ctx.seed,
            };
            let (model, train) = train_subword_skipgram(&lines, &cfg, ctx.exec)?;
            stats.insert("vocab_size".into(), train.vocab_size.into());
            stats.insert("tokens".into(), train.tokens.into());
            stats.insert("epoch_losses".into(), serde_json::to_value(&train.epoch_losses)?);
            materialize(&model, strings.iter(), Provenance::SubwordSkipgram, ctx.exec)?
        }
        BaselineKind::BowFreq | BaselineKind::Tfidf => {
            let (mode, prov) = if kind == BaselineKind::Tfidf {
                (BowMode::Tfidf, Provenance::Tfidf)
            } else {
                (BowMode::Frequency, Provenance::BowFreq)
            };
            let bow = BowVectorizer::fit(&lines, mode)?;
            stats.insert("vocab_size".into(), bow.vocab_size().into());
            materialize(&bow, strings.iter(), prov, ctx.exec)?
        }
        BaselineKind::Random => {
            let dim = ctx.settings.get("dim", a.dim, 768)?;
            EmbeddingTable::random(strings.iter(), dim, ctx.seed)
        }
    };
    ensure_parent(&out)?;
    table.save(&out)?;
    let back = EmbeddingTable::load(&out)?;
    ensure!(
        back.checksum() == table.checksum(),
        "{} did not read back identically",
        out.display()
    );
    log::info!("{} table: {} strings, dim {}", kind, table.len(), table.dim());
    stats.insert("strings".into(), table.len().into());
    stats.insert("dim".into(), table.dim().into());
    stats.insert("checksum".into(), format!("{:016x}", table.checksum()).into());
    ctx.manifest(
        &sibling(&out, ".manifest.json"),
        &[&dir],
        &[&out],
        serde_json::Value::Object(stats),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TaskChoice {
    TwoParts,
    MissingPart,
    DocName,
    All,
}

impl TaskChoice {
    fn tasks(self) -> Vec<TaskChoice> {
        match self {
            TaskChoice::All => vec![TaskChoice::TwoParts, TaskChoice::MissingPart, TaskChoice::DocName],
            t => vec![t],
        }
    }

    fn id(self) -> &'static str {
        match self {
            TaskChoice::TwoParts => "two_parts",
            TaskChoice::MissingPart => RankingTask::MissingPart.as_str(),
            TaskChoice::DocName => RankingTask::DocumentName.as_str(),
            TaskChoice::All => "all",
        }
    }
}

impl FromStr for TaskChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('_', "-").as_str() {
            "two-parts" => Ok(Self::TwoParts),
            "missing-part" => Ok(Self::MissingPart),
            "doc-name" | "document-name" => Ok(Self::DocName),
            "all" => Ok(Self::All),
            _ => Err(format!("unknown task {s:?} (two-parts, missing-part, doc-name, all)")),
        }
    }
}

impl fmt::Display for TaskChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id().replace('_', "-"))
    }
}

#[derive(Args, Debug)]
pub struct TrainEvalArgs {
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Embedding table (interchange format).
    #[arg(long, value_name = "FILE")]
    table: Option<PathBuf>,
    /// Model name in reports; defaults to the table's file stem.
    #[arg(long)]
    name: Option<String>,
    /// two-parts, missing-part, doc-name or all.
    #[arg(long)]
    task: Option<TaskChoice>,
    #[arg(long)]
    trials: Option<usize>,
    /// Results directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    pairs_per_doc: Option<usize>,
    #[arg(long)]
    mlp_epochs: Option<usize>,
    #[arg(long)]
    mlp_patience: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    inducing: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    layer_norm: bool,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

fn write_output(out: &Path, output: &TrialOutput) -> Result<Vec<PathBuf>> {
    let stem = format!("{}__{}", output.report.task, file_safe(&output.report.model));
    let report = out.join(format!("{stem}.report.json"));
    write_json(&report, &output.report)?;
    let preds = out.join(format!("{stem}.predictions.jsonl"));
    write_jsonl(&preds, &output.predictions)?;
    let mut files = vec![report, preds];
    if let Some(ck) = &output.checkpoint {
        let path = out.join(format!("{stem}.model.json"));
        ck.save(&path)?;
        files.push(path);
    }
    log::info!(
        "{} {}: {:.1} ± {:.1} over {} trials",
        output.report.task,
        output.report.model,
        100.0 * output.report.mean,
        100.0 * output.report.std,
        output.report.n_trials
    );
    Ok(files)
}

fn train_eval(ctx: &Ctx, a: TrainEvalArgs) -> Result<()> {
    let dir = ctx.settings.require_path("corpus", a.corpus)?;
    let table_path = ctx.settings.require_path("table", a.table)?;
    let out = ctx.settings.require_path("out", a.out)?;
    let stem = table_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = ctx.settings.get("name", a.name, stem)?;
    ensure!(
        name != "Random",
        "the model name Random is reserved for the chance baseline"
    );
    let task = ctx.settings.get("task", a.task, TaskChoice::All)?;
    let trials = ctx.settings.get("trials", a.trials, 5)?;
    ensure!(trials >= 1, "--trials must be at least 1");
    let candidates = ctx.settings.get("candidates", a.candidates, BATCH_SIZE)?;
    let pair_cfg = pair_config(ctx, a.pairs_per_doc)?;
    let d = TrainConfig::default();
    let mlp = TrainConfig {
        max_epochs: ctx.settings.get("mlp-epochs", a.mlp_epochs, d.max_epochs)?,
        patience: ctx.settings.get("mlp-patience", a.mlp_patience, d.patience)?,
        ..d
    };
    let d = SetEncoderConfig::default();
    let enc = SetEncoderConfig {
        hidden: ctx.settings.get("hidden", a.hidden, d.hidden)?,
        inducing_points: ctx.settings.get("inducing", a.inducing, d.inducing_points)?,
        heads: ctx.settings.get("heads", a.heads, d.heads)?,
        blocks: ctx.settings.get("blocks", a.blocks, d.blocks)?,
        layer_norm: ctx
            .settings
            .get("layer-norm", a.layer_norm.then_some(true), d.layer_norm)?,
        max_epochs: ctx.settings.get("max-epochs", a.max_epochs, d.max_epochs)?,
        patience: ctx.settings.get("patience", a.patience, d.patience)?,
        lr: ctx.settings.get("lr", a.lr, d.lr)?,
        batch_size: ctx.settings.get("batch-size", a.batch_size, d.batch_size)?,
        ..d
    };
    enc.validate()?;

    let corpus = load_corpus(&dir)?;
    let table = EmbeddingTable::load(&table_path)?;
    let checksum = table.checksum();
    let patterns = DefaultPatterns::default();
    create_dir(&out)?;
    let mut written = Vec::new();
    let mut stats = serde_json::Map::new();
    for t in task.tasks() {
        let (model, random) = match t {
            TaskChoice::TwoParts => (
                eval::run_two_parts(&corpus, Some(&table), &name, trials, ctx.seed, &pair_cfg, &mlp)?,
                eval::run_two_parts(&corpus, None, "Random", trials, ctx.seed, &pair_cfg, &mlp)?,
            ),
            TaskChoice::MissingPart | TaskChoice::DocName => {
                let rt = if t == TaskChoice::MissingPart {
                    RankingTask::MissingPart
                } else {
                    RankingTask::DocumentName
                };
                let run = |enc: Option<&SetEncoderConfig>, label: &str| {
                    eval::run_ranking(
                        rt, &corpus, &table, enc, label, trials, ctx.seed, candidates, &patterns, ctx.exec,
                    )
                };
                (run(Some(&enc), &name)?, run(None, "Random")?)
            }
            TaskChoice::All => unreachable!("expanded above"),
        };
        stats.insert(format!("{}/{}", t.id(), name), model.report.mean.into());
        stats.insert(format!("{}/Random", t.id()), random.report.mean.into());
        written.extend(write_output(&out, &model)?);
        written.extend(write_output(&out, &random)?);
    }
    ensure!(
        table.checksum() == checksum,
        "embedding table changed during evaluation"
    );
    let outputs: Vec<&Path> = written.iter().map(PathBuf::as_path).collect();
    ctx.manifest(
        &out.join(format!("train-eval__{}.manifest.json", file_safe(&name))),
        &[&dir, &table_path],
        &outputs,
        serde_json::Value::Object(stats),
    )
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory written by `train-eval`.
    #[arg(long, value_name = "DIR")]
    results: Option<PathBuf>,
    /// two-parts, missing-part, doc-name or all.
    #[arg(long)]
    task: Option<TaskChoice>,
    /// `A,B`: list instances model A got right and model B got wrong.
    #[arg(long)]
    contrast: Option<String>,
    /// Examples per listing.
    #[arg(long)]
    limit: Option<usize>,
    /// Candidates per ranking batch, for the expected chance row.
    #[arg(long)]
    candidates: Option<usize>,
    /// Write the report here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn load_reports(dir: &Path) -> Result<Vec<(PathBuf, TrialReport)>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.to_string_lossy().ends_with(".report.json") {
            let text = std::fs::read_to_string(&path)?;
            let r: TrialReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            ensure!(
                r.is_consistent(),
                "{}: mean/std do not match the per-trial values",
                path.display()
            );
            found.push((path, r));
        }
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(found)
}

fn predictions_of(report_path: &Path) -> Result<Vec<Prediction>> {
    let p = report_path
        .to_string_lossy()
        .replace(".report.json", ".predictions.jsonl");
    Ok(read_jsonl(Path::new(&p))?)
}

fn describe(p: &Prediction) -> String {
    format!("{} → {}", p.inputs.join(", "), p.target)
}

fn report(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    let dir = ctx.settings.require_path("results", a.results)?;
    let task = ctx.settings.get("task", a.task, TaskChoice::All)?;
    let limit = ctx.settings.get("limit", a.limit, 10)?;
    let candidates = ctx.settings.get("candidates", a.candidates, BATCH_SIZE)?;
    let contrast = ctx.settings.get_opt("contrast", a.contrast)?;
    let out_path = ctx.settings.path("out", a.out);
    let all = load_reports(&dir)?;
    let mut text = String::new();
    for t in task.tasks() {
        let mut rows: Vec<&(PathBuf, TrialReport)> = all.iter().filter(|(_, r)| r.task == t.id()).collect();
        rows.sort_by_key(|(_, r)| r.model != "Random");
        let mut reports: Vec<TrialReport> = rows.iter().map(|(_, r)| r.clone()).collect();
        if !reports.iter().any(|r| r.model == "Random") {
            let chance = if t == TaskChoice::TwoParts {
                0.5
            } else {
                1.0 / candidates as f64
            };
            reports.insert(0, TrialReport::new(t.id(), "Random (expected)", vec![0], vec![chance]));
        }
        text.push_str(&format!("## {}\n\n", t.id()));
        text.push_str(&eval::render_table(&reports));
        text.push('\n');

        let named = |m: &str| rows.iter().find(|(_, r)| r.model == m).map(|(p, _)| p.clone());
        match &contrast {
            Some(spec) => {
                let (ma, mb) = spec
                    .split_once(',')
                    .map(|(x, y)| (x.trim(), y.trim()))
                    .context("--contrast expects A,B")?;
                let (Some(pa), Some(pb)) = (named(ma), named(mb)) else {
                    text.push_str(&format!("(no results for {ma} and {mb} on this task)\n\n"));
                    continue;
                };
                let (xa, xb) = (predictions_of(&pa)?, predictions_of(&pb)?);
                let hits = eval::contrast(&xa, &xb);
                text.push_str(&format!(
                    "### Correct for {ma}, incorrect for {mb} ({} instances)\n\n",
                    hits.len()
                ));
                for (p, other) in hits.iter().take(limit) {
                    text.push_str(&format!("- {} ({mb}: {other})\n", describe(p)));
                }
                text.push('\n');
            }
            None => {
                let best = rows
                    .iter()
                    .filter(|(_, r)| r.model != "Random")
                    .max_by(|x, y| x.1.mean.total_cmp(&y.1.mean));
                let Some((path, r)) = best else { continue };
                let preds = predictions_of(path)?;
                for (title, want) in [("Correct", true), ("Incorrect", false)] {
                    text.push_str(&format!("### {title} predictions of {}\n\n", r.model));
                    for p in preds.iter().filter(|p| p.correct == want).take(limit) {
                        if want {
                            text.push_str(&format!("- {}\n", describe(p)));
                        } else {
                            text.push_str(&format!("- {} (predicted: {})\n", describe(p), p.predicted));
                        }
                    }
                    text.push('\n');
                }
            }
        }
    }
    match out_path {
        Some(p) => {
            ensure_parent(&p)?;
            std::fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(text.as_bytes())?;
            lock.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_names_parse() {
        assert_eq!("two-parts".parse::<TaskChoice>().unwrap(), TaskChoice::TwoParts);
        assert_eq!("doc_name".parse::<TaskChoice>().unwrap(), TaskChoice::DocName);
        assert!("three-parts".parse::<TaskChoice>().is_err());
        assert_eq!(TaskChoice::All.tasks().len(), 3);
        assert_eq!(TaskChoice::MissingPart.to_string(), "missing-part");
    }

    #[test]
    fn split_choice_round_trips() {
        for s in ["train", "validation", "test", "all"] {
            assert_eq!(s.parse::<SplitChoice>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn file_names_are_sanitized() {
        assert_eq!(file_safe("DistilBERT FT/v2"), "DistilBERT_FT_v2");
    }
}
