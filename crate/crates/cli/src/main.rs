//! `ctm`: extraction, corpus building, task sampling, baselines and
//! evaluation over CAD STEP text.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ctm", version, about = "Text mining over CAD STEP files", long_about = None)]
pub struct Cli {
    /// Flat key = value configuration file; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Global seed (falls back to the config file, then CTM_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for data-parallel stages (1 runs sequentially).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Scan a tree of STEP files and write per-document part names (JSON lines).
    Extract(commands::ExtractArgs),
    /// Merge, clean, deduplicate, normalize and split extracted documents.
    BuildCorpus(commands::BuildCorpusArgs),
    /// Detect standard fasteners in part names and summarize them.
    DetectFasteners(commands::FastenerArgs),
    /// Write the line-by-line fine-tuning text for one split.
    EmitFinetune(commands::FinetuneArgs),
    /// Write Two Parts pairs and ranking batches for each trial seed.
    SampleTasks(commands::SampleArgs),
    /// Build a baseline embedding table (subword skip-gram, BOW, TF-IDF or random).
    TrainBaseline(commands::BaselineArgs),
    /// Train and evaluate the downstream models on an embedding table.
    TrainEval(commands::TrainEvalArgs),
    /// Render result tables and qualitative prediction listings.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
