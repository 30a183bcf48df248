//! Table-driven detection of standard metric fasteners in part names.
//!
//! A fastener is identified without ambiguity when a standard family and
//! code appear in the name (optionally separated by whitespace or hyphens)
//! together with an `M<d1>x<d2>` dimension token that is valid for that
//! standard. Overlapping family matches resolve to the longest family, so
//! `din en iso 4762` is never reported as plain DIN or ISO when a
//! `DIN EN ISO 4762` entry exists.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::Serialize;

use crate::corpus::{normalize_string, Corpus};
use crate::{Error, Exec, Result};

const SHIPPED_TABLE: &str = include_str!("../data/fastener_standards.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Family {
    #[serde(rename = "BS")]
    Bs,
    #[serde(rename = "KS")]
    Ks,
    #[serde(rename = "DIN EN")]
    DinEn,
    #[serde(rename = "DIN")]
    Din,
    #[serde(rename = "ISO")]
    Iso,
    #[serde(rename = "AS")]
    As,
    #[serde(rename = "UNI")]
    Uni,
    #[serde(rename = "IS")]
    Is,
    #[serde(rename = "ANSI")]
    Ansi,
    #[serde(rename = "DIN EN ISO")]
    DinEnIso,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::Bs,
        Family::Ks,
        Family::DinEn,
        Family::Din,
        Family::Iso,
        Family::As,
        Family::Uni,
        Family::Is,
        Family::Ansi,
        Family::DinEnIso,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Bs => "BS",
            Family::Ks => "KS",
            Family::DinEn => "DIN EN",
            Family::Din => "DIN",
            Family::Iso => "ISO",
            Family::As => "AS",
            Family::Uni => "UNI",
            Family::Is => "IS",
            Family::Ansi => "ANSI",
            Family::DinEnIso => "DIN EN ISO",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.split_whitespace().collect::<Vec<_>>().join(" ").to_uppercase();
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown fastener family {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FastenerStandard {
    pub family: Family,
    pub code: String,
    /// Valid (thread diameter, length) pairs in mm. Empty means unchecked.
    pub valid_dims: BTreeSet<(u32, u32)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FastenerMatch {
    pub part_name: String,
    pub family: Family,
    pub code: String,
    pub dims: (u32, u32),
    /// False when the standard carries no dimension grid.
    pub dims_verified: bool,
}

impl FastenerMatch {
    pub fn standard(&self) -> String {
        format!("{} {}", self.family, self.code)
    }
}

#[derive(Debug)]
struct Compiled {
    standard: FastenerStandard,
    pattern: Regex,
}

/// The standards table with one compiled matcher per (family, code).
#[derive(Debug)]
pub struct StandardsDb {
    entries: Vec<Compiled>,
    dims: Regex,
}

impl StandardsDb {
    pub fn new(standards: Vec<FastenerStandard>) -> Result<Self> {
        if standards.is_empty() {
            return Err(Error::EmptyStandards);
        }
        let entries = standards
            .into_iter()
            .map(|standard| {
                let family = standard
                    .family
                    .as_str()
                    .to_lowercase()
                    .split(' ')
                    .map(regex::escape)
                    .collect::<Vec<_>>()
                    .join(r"[\s-]+");
                let pattern = format!(
                    r"(?:^|[^\p{{L}}\p{{N}}])({family}[\s-]*{})(?:[^\p{{N}}]|$)",
                    regex::escape(&standard.code.to_lowercase())
                );
                let pattern = Regex::new(&pattern).map_err(|e| Error::Config(e.to_string()))?;
                Ok(Compiled { standard, pattern })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            entries,
            dims: Regex::new(r"(?:^|[^\p{L}\p{N}])m(\d+)x(\d+)(?:[^\p{N}]|$)").expect("static regex"),
        })
    }

    /// Parse `family TAB code TAB d1 TAB d2` rows; `#` lines are comments.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut by_key: BTreeMap<(Family, String), BTreeSet<(u32, u32)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 2 && cols.len() != 4 {
                return Err(Error::parse(
                    "standards table",
                    i + 1,
                    "expected 2 or 4 tab-separated columns",
                ));
            }
            let family: Family = cols[0]
                .parse()
                .map_err(|e: Error| Error::parse("standards table", i + 1, e.to_string()))?;
            let code = cols[1].trim();
            if code.is_empty() || !code.bytes().all(|b| b.is_ascii_digit()) {
                return Err(Error::parse("standards table", i + 1, "code must be a digit string"));
            }
            let dims = by_key.entry((family, code.to_string())).or_default();
            if cols.len() == 4 && !(cols[2].is_empty() && cols[3].is_empty()) {
                let num = |s: &str| {
                    s.trim()
                        .parse::<u32>()
                        .map_err(|e| Error::parse("standards table", i + 1, e.to_string()))
                };
                dims.insert((num(cols[2])?, num(cols[3])?));
            }
        }
        let standards = by_key
            .into_iter()
            .map(|((family, code), valid_dims)| FastenerStandard {
                family,
                code,
                valid_dims,
            })
            .collect();
        Self::new(standards)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }

    /// The curated table bundled with the crate (ISO 4762, DIN 912/913 and equivalents).
    pub fn shipped() -> Self {
        Self::parse_tsv(SHIPPED_TABLE).expect("bundled table parses")
    }

    pub fn standards(&self) -> impl Iterator<Item = &FastenerStandard> {
        self.entries.iter().map(|c| &c.standard)
    }

    fn dimension_tokens(&self, name: &str) -> Vec<(u32, u32)> {
        self.dims
            .captures_iter(name)
            .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
            .collect()
    }

    /// All unambiguous fastener matches in a normalized part name.
    pub fn detect(&self, name: &str) -> Vec<FastenerMatch> {
        let dims = self.dimension_tokens(name);
        if dims.is_empty() {
            return Vec::new();
        }
        let mut candidates: Vec<(std::ops::Range<usize>, &FastenerStandard, (u32, u32), bool)> = Vec::new();
        for c in &self.entries {
            let std = &c.standard;
            let found = if std.valid_dims.is_empty() {
                Some((dims[0], false))
            } else {
                dims.iter().find(|d| std.valid_dims.contains(d)).map(|&d| (d, true))
            };
            let Some((d, verified)) = found else { continue };
            // Overlapping hits of one pattern are impossible; take the first.
            if let Some(m) = c.pattern.captures(name).and_then(|cap| cap.get(1)) {
                candidates.push((m.range(), std, d, verified));
            }
        }
        candidates.sort_by(|a, b| {
            b.1.family
                .as_str()
                .len()
                .cmp(&a.1.family.as_str().len())
                .then(a.0.start.cmp(&b.0.start))
        });
        let mut taken: Vec<std::ops::Range<usize>> = Vec::new();
        let mut out = Vec::new();
        for (span, std, dims, verified) in candidates {
            if taken.iter().any(|t| t.start < span.end && span.start < t.end) {
                continue;
            }
            taken.push(span);
            out.push(FastenerMatch {
                part_name: name.to_string(),
                family: std.family,
                code: std.code.clone(),
                dims,
                dims_verified: verified,
            });
        }
        out
    }
}

/// Detect fasteners in a normalized part name.
pub fn detect_fasteners(name: &str, db: &StandardsDb) -> Vec<FastenerMatch> {
    db.detect(name)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FastenerReport {
    pub documents_with_fastener: usize,
    pub total_fasteners: usize,
    /// Fastener occurrences per `FAMILY CODE`, counting part multiplicity.
    pub per_standard: BTreeMap<String, usize>,
}

/// Count fastener part occurrences (with multiplicity) across the corpus.
pub fn corpus_fastener_report(corpus: &Corpus, db: &StandardsDb, exec: Exec) -> FastenerReport {
    let per_doc = exec.map(&corpus.records, |rec| {
        let mut hist: BTreeMap<String, usize> = BTreeMap::new();
        let mut total = 0;
        for (part, &n) in &rec.parts {
            let matches = db.detect(&normalize_string(part));
            if let Some(first) = matches.first() {
                total += n as usize;
                *hist.entry(first.standard()).or_insert(0) += n as usize;
            }
        }
        (total, hist)
    });
    let mut report = FastenerReport::default();
    for (total, hist) in per_doc {
        if total > 0 {
            report.documents_with_fastener += 1;
            report.total_fasteners += total;
        }
        for (k, v) in hist {
            *report.per_standard.entry(k).or_insert(0) += v;
        }
    }
    report
}
