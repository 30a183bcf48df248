//! Mining the natural-language names embedded in CAD STEP exports.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`step`]: scan ISO 10303-21 files for `MANIFOLD_SOLID_BREP` names and
//!   aggregate per-document multiplicities.
//! - [`corpus`]: default-name removal, copy-affix stripping, deduplication,
//!   normalization, seeded 70/15/15 splits and the line-by-line fine-tuning
//!   corpus.
//! - [`fastener`]: table-driven detection of standard metric fasteners.
//! - [`embedding`]: the [`EmbeddingTable`](embedding::EmbeddingTable)
//!   interchange format plus bag-of-words, TF-IDF and subword skip-gram
//!   baselines.
//! - [`tasks`]: the Two Parts, Missing Part and Document Name task builders.
//! - [`nn`] and [`eval`]: a small reverse-mode autodiff, the pair MLP, the
//!   induced-set-attention encoder and the trial protocol.
//!
//! Data-parallel stages take an [`Exec`] so callers can choose between the
//! rayon path (feature `parallel`, on by default) and a sequential fallback.

pub mod corpus;
pub mod embedding;
mod error;
pub mod eval;
mod exec;
pub mod fastener;
pub mod nn;
pub mod rng;
pub mod step;
pub mod synthetic;
pub mod tasks;

pub use error::{Error, Result};
pub use exec::Exec;
