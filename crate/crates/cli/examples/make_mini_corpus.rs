//! Writes a small synthetic STEP tree and metadata file for trying the CLI.
//!
//! `cargo run -p ctm-cli --example make_mini_corpus -- data/mini 200`

use std::path::PathBuf;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "data/mini".into()));
    let docs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let records = ctm_core::synthetic::messy_records(docs, 7);
    ctm_core::synthetic::write_step_tree(&root.join("steps"), &root.join("metadata.jsonl"), &records, 7)?;
    println!("{} documents under {}", records.len(), root.display());
    Ok(())
}
