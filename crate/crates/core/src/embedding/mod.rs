//! String embeddings: the shared table format and the trained-from-scratch baselines.
//!
//! Every embedding source ends up as an [`EmbeddingTable`] mapping whole
//! strings to vectors. Baselines that work at the token level
//! ([`BowVectorizer`], [`SubwordModel`]) implement [`Embedder`] and are
//! turned into tables with [`materialize`].

mod bow;
mod subword;
mod table;

pub use bow::{BowMode, BowVectorizer};
pub use subword::{
    fnv1a, sgns_loss_grad, subword_ngrams, train_subword_skipgram, SkipGramConfig, SkipGramMode, SubwordModel,
    TrainStats,
};
pub use table::{EmbeddingTable, Provenance};

use crate::{Exec, Result};

/// Split into maximal alphanumeric runs and maximal runs of other non-space characters.
pub fn tokenize_wordpunct(s: &str) -> Vec<&str> {
    #[derive(PartialEq, Clone, Copy)]
    enum Class {
        Word,
        Punct,
    }
    let mut out = Vec::new();
    let mut start: Option<(usize, Class)> = None;
    for (i, c) in s.char_indices() {
        let class = if c.is_whitespace() {
            None
        } else if c.is_alphanumeric() {
            Some(Class::Word)
        } else {
            Some(Class::Punct)
        };
        match (start, class) {
            (Some((_, a)), Some(b)) if a == b => {}
            (Some((st, _)), next) => {
                out.push(&s[st..i]);
                start = next.map(|c| (i, c));
            }
            (None, next) => start = next.map(|c| (i, c)),
        }
    }
    if let Some((st, _)) = start {
        out.push(&s[st..]);
    }
    out
}

/// A vector for one string. `oov` is set when nothing in the string was known.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedded {
    pub vector: Vec<f32>,
    pub oov: bool,
}

pub trait Embedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, s: &str) -> Embedded;
}

/// Mean of token vectors, summed in sorted token order so that any
/// reordering of the same token multiset gives bit-identical output.
pub(crate) fn mean_pool<'a>(
    dim: usize,
    tokens: &mut [&'a str],
    lookup: impl Fn(&'a str) -> Option<Vec<f32>>,
) -> Embedded {
    tokens.sort_unstable();
    let mut sum = vec![0f64; dim];
    let mut known = 0usize;
    for &t in tokens.iter() {
        if let Some(v) = lookup(t) {
            known += 1;
            for (s, x) in sum.iter_mut().zip(&v) {
                *s += f64::from(*x);
            }
        }
    }
    if known == 0 {
        return Embedded {
            vector: vec![0.0; dim],
            oov: true,
        };
    }
    Embedded {
        vector: sum.iter().map(|s| (s / known as f64) as f32).collect(),
        oov: false,
    }
}

/// Embed every string with `embedder` and collect the results into a table.
/// Duplicate strings are embedded once.
pub fn materialize<I, S>(
    embedder: &dyn Embedder,
    strings: I,
    provenance: Provenance,
    exec: Exec,
) -> Result<EmbeddingTable>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut keys: Vec<String> = strings.into_iter().map(Into::into).collect();
    keys.sort_unstable();
    keys.dedup();
    let embedded = exec.map(&keys, |k| embedder.embed(k));
    let oov = embedded.iter().filter(|e| e.oov).count();
    if oov > 0 {
        log::info!("{oov} of {} strings had no known token", keys.len());
    }
    let mut table = EmbeddingTable::new(embedder.dim(), provenance);
    for (k, e) in keys.into_iter().zip(embedded) {
        table.insert(k, &e.vector)?;
    }
    Ok(table)
}
