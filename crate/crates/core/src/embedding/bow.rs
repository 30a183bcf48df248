use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{tokenize_wordpunct, Embedded, Embedder};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BowMode {
    Frequency,
    Tfidf,
}

/// Bag-of-words vectors over a vocabulary fitted on corpus lines.
///
/// Frequency mode gives raw token counts. TF-IDF mode weights each count by
/// `ln(N / df)` over the `N` fitting lines and L2-normalizes the result.
#[derive(Clone, Debug)]
pub struct BowVectorizer {
    mode: BowMode,
    vocab: BTreeMap<String, usize>,
    idf: Vec<f64>,
}

impl BowVectorizer {
    pub fn fit<S: AsRef<str>>(lines: &[S], mode: BowMode) -> Result<Self> {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for line in lines {
            let toks: BTreeSet<&str> = tokenize_wordpunct(line.as_ref()).into_iter().collect();
            for t in toks {
                *df.entry(t.to_string()).or_insert(0) += 1;
            }
        }
        if df.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n = lines.len() as f64;
        let idf = df.values().map(|&d| (n / d as f64).ln()).collect();
        let vocab = df.into_keys().enumerate().map(|(i, t)| (t, i)).collect();
        Ok(Self { mode, vocab, idf })
    }

    pub fn mode(&self) -> BowMode {
        self.mode
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.index_of(token).map(|i| self.idf[i])
    }

    pub fn transform(&self, s: &str) -> Embedded {
        let mut v = vec![0f64; self.vocab.len()];
        let mut known = false;
        for t in tokenize_wordpunct(s) {
            if let Some(i) = self.index_of(t) {
                v[i] += 1.0;
                known = true;
            }
        }
        if self.mode == BowMode::Tfidf {
            for (x, w) in v.iter_mut().zip(&self.idf) {
                *x *= w;
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Embedded {
            vector: v.into_iter().map(|x| x as f32).collect(),
            oov: !known,
        }
    }
}

impl Embedder for BowVectorizer {
    fn dim(&self) -> usize {
        self.vocab.len()
    }

    fn embed(&self, s: &str) -> Embedded {
        self.transform(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_counts() {
        let bow = BowVectorizer::fit(&["gear pin rod"], BowMode::Frequency).unwrap();
        let e = bow.transform("gear gear pin");
        assert_eq!(e.vector, [2.0, 1.0, 0.0]);
        assert!(!e.oov);
    }

    #[test]
    fn ubiquitous_terms_vanish() {
        let bow = BowVectorizer::fit(&["gear pin", "pin gear"], BowMode::Tfidf).unwrap();
        assert_eq!(bow.idf("gear"), Some(0.0));
        let e = bow.transform("gear pin");
        assert!(e.vector.iter().all(|&x| x == 0.0));
        assert!(!e.oov);
    }

    #[test]
    fn tfidf_is_unit_norm_and_oov_is_zero() {
        let bow = BowVectorizer::fit(&["a b", "a c", "a d"], BowMode::Tfidf).unwrap();
        let v = bow.transform("b c c").vector;
        let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(v[bow.index_of("c").unwrap()] > v[bow.index_of("b").unwrap()]);
        let e = bow.transform("zzz");
        assert!(e.oov);
        assert!(e.vector.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            BowVectorizer::fit::<&str>(&[], BowMode::Frequency),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            BowVectorizer::fit(&["  "], BowMode::Tfidf),
            Err(Error::EmptyCorpus)
        ));
    }
}
