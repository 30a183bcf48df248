//! Name extraction from ISO 10303-21 (STEP) exchange files.
//!
//! Only the first string parameter of `MANIFOLD_SOLID_BREP` entity instances
//! is of interest, so the scanner is record oriented: it splits the file on
//! `;` terminators (respecting quoted strings and `/* */` comments) and looks
//! at the type keyword of each simple entity instance. Complex instances,
//! geometry and assembly structure are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Exec, Result};

const SOLID_BREP: &str = "MANIFOLD_SOLID_BREP";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityKind {
    SolidBrep,
    Other,
}

/// A name found on one entity instance, still STEP-encoded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepNameOccurrence {
    pub entity_kind: EntityKind,
    pub raw_name: String,
    pub file_id: String,
}

#[derive(Clone, Debug, Default)]
pub struct ScanReport {
    pub occurrences: Vec<StepNameOccurrence>,
    /// Malformed solid-brep records that were skipped.
    pub warnings: usize,
}

/// Decode file bytes: valid UTF-8 runs are kept, every other byte is read as Latin-1.
fn decode_bytes(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for chunk in bytes.utf8_chunks() {
        out.push_str(chunk.valid());
        out.extend(chunk.invalid().iter().map(|&b| char::from(b)));
    }
    out
}

fn looks_like_step(text: &str) -> bool {
    text.trim_start_matches('\u{feff}')
        .trim_start()
        .starts_with("ISO-10303-21")
}

/// Split into `;`-terminated records. Comments are dropped; the bool marks a
/// record that ran into end of input without a terminator.
fn records(text: &str) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_string = false;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if in_string {
            match c {
                '\'' => {
                    in_string = false;
                    cur.push(c);
                }
                // Physical line breaks are not part of string values.
                '\r' | '\n' => {}
                _ => cur.push(c),
            }
            continue;
        }
        match c {
            '\'' => {
                in_string = true;
                cur.push(c);
            }
            '/' if chars.peek() == Some(&'*') => {
                chars.next();
                let mut prev = '\0';
                for d in chars.by_ref() {
                    if prev == '*' && d == '/' {
                        break;
                    }
                    prev = d;
                }
            }
            ';' => out.push((std::mem::take(&mut cur), false)),
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push((cur, true));
    }
    out
}

enum Record<'a> {
    SolidBrep(&'a str),
    Malformed,
    Ignored,
}

fn classify(record: &str) -> Record<'_> {
    let rest = record.trim_start();
    let Some(rest) = rest.strip_prefix('#') else {
        return Record::Ignored;
    };
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return Record::Ignored;
    }
    let Some(rest) = rest[digits..].trim_start().strip_prefix('=') else {
        return Record::Ignored;
    };
    let rest = rest.trim_start();
    let kw_len = rest
        .bytes()
        .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
        .count();
    if &rest[..kw_len] != SOLID_BREP {
        return Record::Ignored;
    }
    let Some(params) = rest[kw_len..].trim_start().strip_prefix('(') else {
        return Record::Malformed;
    };
    let params = params.trim_start();
    if let Some(after) = params.strip_prefix('$') {
        return match after.trim_start().chars().next() {
            Some(',') | Some(')') => Record::SolidBrep(""),
            _ => Record::Malformed,
        };
    }
    let Some(body) = params.strip_prefix('\'') else {
        return Record::Malformed;
    };
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\'' {
            if bytes.get(i + 1) == Some(&b'\'') {
                i += 2;
                continue;
            }
            return match body[i + 1..].trim_start().chars().next() {
                Some(',') | Some(')') => Record::SolidBrep(&body[..i]),
                _ => Record::Malformed,
            };
        }
        i += 1;
    }
    Record::Malformed
}

/// Scan one STEP file and return every `MANIFOLD_SOLID_BREP` name occurrence.
pub fn scan_step_file(file_id: &str, bytes: &[u8]) -> Result<ScanReport> {
    let text = decode_bytes(bytes);
    if !looks_like_step(&text) {
        return Err(Error::NotStep {
            file: file_id.to_string(),
        });
    }
    let mut report = ScanReport::default();
    for (record, unterminated) in records(&text) {
        match classify(&record) {
            Record::SolidBrep(_) if unterminated => report.warnings += 1,
            Record::SolidBrep(name) => report.occurrences.push(StepNameOccurrence {
                entity_kind: EntityKind::SolidBrep,
                raw_name: name.to_string(),
                file_id: file_id.to_string(),
            }),
            Record::Malformed => report.warnings += 1,
            Record::Ignored => {}
        }
    }
    Ok(report)
}

fn hex_run(raw: &str, start: usize, width: usize, directive: usize) -> Result<u32> {
    let digits = raw
        .get(start..start + width)
        .filter(|d| d.bytes().all(|b| b.is_ascii_hexdigit()))
        .ok_or(Error::StepEscape {
            offset: directive,
            reason: "expected hex digits",
        })?;
    Ok(u32::from_str_radix(digits, 16).expect("validated hex"))
}

/// Resolve ISO 10303-21 string control directives.
///
/// Handles `''`, `\\`, `\X\hh`, `\X2\…\X0\`, `\X4\…\X0\`, `\S\c` and drops
/// `\P?\` code page switches. A backslash that does not open a known
/// directive is kept literally.
pub fn decode_step_string(raw: &str) -> Result<String> {
    let b = raw.as_bytes();
    let mut out = String::with_capacity(raw.len());
    let mut i = 0;
    while i < b.len() {
        match b[i] {
            b'\'' => {
                out.push('\'');
                i += if b.get(i + 1) == Some(&b'\'') { 2 } else { 1 };
            }
            b'\\' => {
                let rest = &raw[i..];
                if rest.starts_with("\\\\") {
                    out.push('\\');
                    i += 2;
                } else if rest.starts_with("\\X2\\") || rest.starts_with("\\X4\\") {
                    let width = if rest.as_bytes()[2] == b'2' { 4 } else { 8 };
                    let mut j = i + 4;
                    let mut units = Vec::new();
                    loop {
                        let unterminated = Error::StepEscape {
                            offset: i,
                            reason: "unterminated \\X2\\ or \\X4\\ run",
                        };
                        if j >= b.len() {
                            return Err(unterminated);
                        }
                        if raw[j..].starts_with("\\X0\\") {
                            j += 4;
                            break;
                        }
                        if b[j] == b'\\' {
                            return Err(unterminated);
                        }
                        units.push(hex_run(raw, j, width, i)?);
                        j += width;
                    }
                    if width == 4 {
                        let units16 = units.iter().map(|&u| u as u16);
                        for c in char::decode_utf16(units16) {
                            out.push(c.map_err(|_| Error::StepEscape {
                                offset: i,
                                reason: "unpaired UTF-16 surrogate",
                            })?);
                        }
                    } else {
                        for u in units {
                            out.push(char::from_u32(u).ok_or(Error::StepEscape {
                                offset: i,
                                reason: "invalid code point",
                            })?);
                        }
                    }
                    i = j;
                } else if rest.starts_with("\\X\\") {
                    let v = hex_run(raw, i + 3, 2, i)?;
                    out.push(char::from_u32(v).expect("byte value"));
                    i += 5;
                } else if rest.starts_with("\\S\\") {
                    let c = rest[3..].chars().next().ok_or(Error::StepEscape {
                        offset: i,
                        reason: "missing character after \\S\\",
                    })?;
                    let code = (c as u32) + 128;
                    out.push(char::from_u32(code).unwrap_or(c));
                    i += 3 + c.len_utf8();
                } else if rest.len() >= 4
                    && rest.as_bytes()[1] == b'P'
                    && rest.as_bytes()[2].is_ascii_uppercase()
                    && rest.as_bytes()[3] == b'\\'
                {
                    i += 4;
                } else {
                    out.push('\\');
                    i += 1;
                }
            }
            _ => {
                let c = raw[i..].chars().next().expect("char boundary");
                out.push(c);
                i += c.len_utf8();
            }
        }
    }
    Ok(out)
}

/// Encode a string as a STEP string parameter body (without the quotes).
///
/// Printable ASCII passes through, `'` and `\` are doubled and everything
/// else becomes a `\X2\…\X0\` run.
pub fn encode_step_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut run: Vec<u16> = Vec::new();
    let flush = |run: &mut Vec<u16>, out: &mut String| {
        if !run.is_empty() {
            out.push_str("\\X2\\");
            for u in run.drain(..) {
                out.push_str(&format!("{u:04X}"));
            }
            out.push_str("\\X0\\");
        }
    };
    for c in s.chars() {
        if c == ' ' || c.is_ascii_graphic() {
            flush(&mut run, &mut out);
            match c {
                '\'' => out.push_str("''"),
                '\\' => out.push_str("\\\\"),
                _ => out.push(c),
            }
        } else {
            let mut buf = [0u16; 2];
            run.extend_from_slice(c.encode_utf16(&mut buf));
        }
    }
    flush(&mut run, &mut out);
    out
}

/// Decoded name counts for one STEP file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FileNameMultiset {
    counts: BTreeMap<String, u32>,
}

impl FileNameMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>) {
        *self.counts.entry(name.into()).or_insert(0) += 1;
    }

    pub fn counts(&self) -> &BTreeMap<String, u32> {
        &self.counts
    }

    /// Decode and count the occurrences of one scan. Names whose escapes do
    /// not decode are kept raw; the returned count tallies them.
    pub fn from_occurrences(occurrences: &[StepNameOccurrence]) -> (Self, usize) {
        let mut set = Self::new();
        let mut undecodable = 0;
        for occ in occurrences {
            match decode_step_string(&occ.raw_name) {
                Ok(name) => set.add(name),
                Err(e) => {
                    log::warn!("{}: keeping raw name {:?}: {e}", occ.file_id, occ.raw_name);
                    undecodable += 1;
                    set.add(occ.raw_name.clone());
                }
            }
        }
        (set, undecodable)
    }
}

impl<S: Into<String>> FromIterator<(S, u32)> for FileNameMultiset {
    fn from_iter<I: IntoIterator<Item = (S, u32)>>(iter: I) -> Self {
        let counts = iter
            .into_iter()
            .filter(|(_, n)| *n > 0)
            .map(|(s, n)| (s.into(), n))
            .collect();
        Self { counts }
    }
}

/// Combine the files of one document: each string keeps its largest
/// per-file multiplicity.
pub fn aggregate_document(files: &[FileNameMultiset]) -> BTreeMap<String, u32> {
    let mut out: BTreeMap<String, u32> = BTreeMap::new();
    for file in files {
        for (name, &n) in &file.counts {
            let slot = out.entry(name.clone()).or_insert(0);
            *slot = (*slot).max(n);
        }
    }
    out
}

/// One line of the extractor's JSON-lines output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentParts {
    pub doc_id: String,
    pub parts: BTreeMap<String, u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExtractionSummary {
    pub documents: usize,
    pub files_scanned: usize,
    pub files_rejected: Vec<String>,
    pub malformed_records: usize,
    pub undecodable_names: usize,
}

fn is_step_path(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("step") || e.eq_ignore_ascii_case("stp"))
}

fn collect_step_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_step_files(&path, out)?;
        } else if is_step_path(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Document id of a STEP file below `root`: its top-level directory, or the
/// file stem for files placed directly in `root`.
pub fn document_id(root: &Path, file: &Path) -> String {
    let rel = file.strip_prefix(root).unwrap_or(file);
    let mut comps = rel.components();
    let first = comps.next().map(|c| c.as_os_str().to_string_lossy().into_owned());
    if comps.next().is_some() {
        first.unwrap_or_default()
    } else {
        file.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Scan every `.step`/`.stp` file below `root` and aggregate per document.
/// Files that are not STEP are reported and skipped. Output is sorted by doc id.
pub fn extract_documents(root: &Path, exec: Exec) -> Result<(Vec<DocumentParts>, ExtractionSummary)> {
    let mut files = Vec::new();
    collect_step_files(root, &mut files)?;
    files.sort();

    let scanned = exec.map(&files, |path| -> Result<_> {
        let file_id = path.strip_prefix(root).unwrap_or(path).display().to_string();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let scan = scan_step_file(&file_id, &bytes);
        Ok((document_id(root, path), scan))
    });

    let mut summary = ExtractionSummary {
        files_scanned: files.len(),
        ..Default::default()
    };
    let mut per_doc: BTreeMap<String, Vec<FileNameMultiset>> = BTreeMap::new();
    for item in scanned {
        let (doc_id, scan) = item?;
        match scan {
            Ok(report) => {
                summary.malformed_records += report.warnings;
                let (set, bad) = FileNameMultiset::from_occurrences(&report.occurrences);
                summary.undecodable_names += bad;
                per_doc.entry(doc_id).or_default().push(set);
            }
            Err(Error::NotStep { file }) => {
                log::warn!("{file}: not a STEP file, skipped");
                summary.files_rejected.push(file);
            }
            Err(e) => return Err(e),
        }
    }
    let docs: Vec<DocumentParts> = per_doc
        .into_iter()
        .map(|(doc_id, files)| DocumentParts {
            doc_id,
            parts: aggregate_document(&files),
        })
        .collect();
    summary.documents = docs.len();
    Ok((docs, summary))
}
