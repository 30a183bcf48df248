use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{mean_pool, tokenize_wordpunct, Embedded, Embedder};
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    BowFreq,
    Tfidf,
    SubwordSkipgram,
    External,
}

/// Fixed-dimension map from strings to finite `f32` vectors.
///
/// On disk: UTF-8 text, first line `#dim <N>`, then one
/// `<string> TAB <f_1> SP … SP <f_N>` row per entry with shortest
/// round-trip decimals. Backslash, tab, newline and carriage return in
/// strings are written as `\\`, `\t`, `\n`, `\r`.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    provenance: Provenance,
    keys: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl PartialEq for EmbeddingTable {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.len() == other.len() && self.iter().all(|(k, v)| other.get(k) == Some(v))
    }
}

impl EmbeddingTable {
    pub fn new(dim: usize, provenance: Provenance) -> Self {
        Self {
            dim,
            provenance,
            keys: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    /// Independent standard-normal vectors for each distinct string.
    pub fn random<I, S>(strings: I, dim: usize, seed: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut keys: Vec<String> = strings.into_iter().map(Into::into).collect();
        keys.sort_unstable();
        keys.dedup();
        let mut rng = rng::seeded(seed);
        let mut table = Self::new(dim, Provenance::External);
        for k in keys {
            let v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            table.insert(k, &v).expect("finite, right dim");
        }
        table
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn set_provenance(&mut self, provenance: Provenance) {
        self.provenance = provenance;
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Insert or replace the vector for `key`.
    pub fn insert(&mut self, key: impl Into<String>, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("embedding vectors must be finite".into()));
        }
        let key = key.into();
        match self.index.get(&key) {
            Some(&i) => self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(key.clone(), self.keys.len());
                self.keys.push(key);
                self.data.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.index
            .get(key)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.keys
            .iter()
            .enumerate()
            .map(move |(i, k)| (k.as_str(), &self.data[i * self.dim..(i + 1) * self.dim]))
    }

    /// Whole-string lookup, falling back to the mean of known token vectors.
    pub fn lookup(&self, s: &str) -> Embedded {
        if let Some(v) = self.get(s) {
            return Embedded {
                vector: v.to_vec(),
                oov: false,
            };
        }
        let mut toks = tokenize_wordpunct(s);
        mean_pool(self.dim, &mut toks, |t| self.get(t).map(<[f32]>::to_vec))
    }

    /// Order-independent digest of keys and vector bits.
    pub fn checksum(&self) -> u64 {
        let mut order: Vec<usize> = (0..self.keys.len()).collect();
        order.sort_unstable_by(|&a, &b| self.keys[a].cmp(&self.keys[b]));
        let mut h = DefaultHasher::new();
        self.dim.hash(&mut h);
        for i in order {
            self.keys[i].hash(&mut h);
            for x in &self.data[i * self.dim..(i + 1) * self.dim] {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Write in the interchange format, rows sorted by string.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "#dim {}", self.dim)?;
        let mut order: Vec<usize> = (0..self.keys.len()).collect();
        order.sort_unstable_by(|&a, &b| self.keys[a].cmp(&self.keys[b]));
        let mut line = String::new();
        for i in order {
            line.clear();
            escape_into(&self.keys[i], &mut line);
            line.push('\t');
            for (j, x) in self.data[i * self.dim..(i + 1) * self.dim].iter().enumerate() {
                if j > 0 {
                    line.push(' ');
                }
                line.push_str(&x.to_string());
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    /// Parse the interchange format. `what` names the source in errors.
    pub fn read_from<R: BufRead>(reader: R, what: &str) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| Error::io(what, e))?,
            None => return Err(Error::parse(what, 1, "missing `#dim <N>` header")),
        };
        let dim: usize = header
            .strip_prefix("#dim ")
            .and_then(|d| d.trim().parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::parse(what, 1, "expected `#dim <N>` with N > 0"))?;
        let mut table = Self::new(dim, Provenance::External);
        let mut row = Vec::with_capacity(dim);
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(what, e))?;
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let (key, nums) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(what, lineno, "expected `<string> TAB <floats>`"))?;
            let key = unescape(key).ok_or_else(|| Error::parse(what, lineno, "invalid escape in string"))?;
            row.clear();
            for tok in nums.split(' ') {
                let x: f32 = tok
                    .parse()
                    .map_err(|_| Error::parse(what, lineno, format!("not a number: {tok:?}")))?;
                if !x.is_finite() {
                    return Err(Error::parse(what, lineno, "non-finite component"));
                }
                row.push(x);
            }
            if row.len() != dim {
                return Err(Error::parse(
                    what,
                    lineno,
                    format!("expected {dim} components, found {}", row.len()),
                ));
            }
            if table.contains(&key) {
                return Err(Error::parse(what, lineno, format!("duplicate string {key:?}")));
            }
            table.insert(key, &row)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f), &path.display().to_string())
    }
}

impl Embedder for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, s: &str) -> Embedded {
        self.lookup(s)
    }
}

fn escape_into(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next()? {
            '\\' => '\\',
            't' => '\t',
            'n' => '\n',
            'r' => '\r',
            _ => return None,
        });
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<EmbeddingTable> {
        EmbeddingTable::read_from(text.as_bytes(), "mem")
    }

    #[test]
    fn reads_and_writes_format() {
        let t = parse("#dim 2\ncoffee mug\t0.5 -1\na\\tb\t1e-3 2\n").unwrap();
        assert_eq!(t.get("coffee mug").unwrap(), [0.5, -1.0]);
        assert_eq!(t.get("a\tb").unwrap(), [0.001, 2.0]);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "#dim 2\na\\tb\t0.001 2\ncoffee mug\t0.5 -1\n"
        );
    }

    #[test]
    fn short_row_reports_line() {
        let row: Vec<String> = (0..767).map(|i| format!("{i}")).collect();
        let text = format!("#dim 768\n{}\n", ["x", &row.join(" ")].join("\t"));
        match parse(&text) {
            Err(Error::Parse { line, reason, .. }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("767"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(parse(""), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("dim 2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("#dim 1\na\tNaN\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("#dim 1\na\tinf\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("#dim 1\na 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            parse("#dim 1\na\t1\na\t2\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(parse("#dim 1\na\\q\t1\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn insert_checks_dim_and_finiteness() {
        let mut t = EmbeddingTable::new(2, Provenance::External);
        assert!(matches!(
            t.insert("a", &[1.0]),
            Err(Error::DimMismatch { expected: 2, found: 1 })
        ));
        assert!(t.insert("a", &[1.0, f32::NAN]).is_err());
        t.insert("a", &[1.0, 2.0]).unwrap();
        t.insert("a", &[3.0, 4.0]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("a").unwrap(), [3.0, 4.0]);
    }

    #[test]
    fn external_lookup_is_unchanged_and_oov_is_zero() {
        let v: Vec<f32> = (0..768).map(|i| (i as f32).sin()).collect();
        let mut t = EmbeddingTable::new(768, Provenance::External);
        t.insert("coffee mug", &v).unwrap();
        let e = t.lookup("coffee mug");
        assert_eq!(e.vector, v);
        assert!(!e.oov);
        let e = t.lookup("teapot");
        assert!(e.oov);
        assert!(e.vector.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn checksum_ignores_insertion_order() {
        let a = EmbeddingTable::random(["x", "y", "z"], 4, 3);
        let mut b = EmbeddingTable::new(4, Provenance::External);
        for k in ["z", "x", "y"] {
            b.insert(k, a.get(k).unwrap()).unwrap();
        }
        assert_eq!(a.checksum(), b.checksum());
        b.insert("x", &[0.0; 4]).unwrap();
        assert_ne!(a.checksum(), b.checksum());
    }

    proptest! {
        #[test]
        fn save_load_round_trip(
            entries in prop::collection::btree_map("\\PC{0,8}|[\\t\\n\\r\\\\a]{1,4}", prop::collection::vec(-1e6f32..1e6, 3), 0..12)
        ) {
            let mut t = EmbeddingTable::new(3, Provenance::Tfidf);
            for (k, v) in &entries {
                t.insert(k.clone(), v).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.tsv");
            t.save(&path).unwrap();
            let back = EmbeddingTable::load(&path).unwrap();
            prop_assert_eq!(back.len(), t.len());
            for (k, v) in t.iter() {
                let w = back.get(k).unwrap();
                for (a, b) in v.iter().zip(w) {
                    prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
                }
            }
        }
    }
}
