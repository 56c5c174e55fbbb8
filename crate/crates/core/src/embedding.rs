//! Labeled embedding datasets: ingestion, validation, normalization and
//! persistence.
//!
//! The canonical interchange format is CSV with header
//! `id,group,label,f0,...,f{d-1}`. An optional leading comment line
//! `# classes=<C>` fixes the class count; without it `C = max label + 1`.
//! JSONL (one `{"id","group","label","embedding"}` object per line) is
//! accepted on input.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io;

/// Norm below which a vector is treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    /// Source identifier (patient, device) used for group-aware splitting.
    pub group: Option<String>,
    pub label: usize,
    pub embedding: Vec<f64>,
}

/// An immutable, validated collection of labeled embeddings sharing one
/// dimension and one label space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    classes: usize,
    examples: Vec<LabeledExample>,
}

impl EmbeddingSet {
    /// Validates ids, dimensions, labels and finiteness.
    pub fn new(dim: usize, classes: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId { id: ex.id.clone() });
            }
            if ex.embedding.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: ex.embedding.len(),
                });
            }
            if ex.label >= classes {
                return Err(Error::InvalidConfig(format!(
                    "example {}: label {} outside [0, {classes})",
                    ex.id, ex.label
                )));
            }
            if ex.embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "example {}: non-finite feature value",
                    ex.id
                )));
            }
        }
        Ok(Self {
            dim,
            classes,
            examples,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn into_examples(self) -> Vec<LabeledExample> {
        self.examples
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }

    /// Skips validation; callers pass examples taken from a validated set
    /// with the same dimension and label space.
    pub(crate) fn from_parts(dim: usize, classes: usize, examples: Vec<LabeledExample>) -> Self {
        Self {
            dim,
            classes,
            examples,
        }
    }
}

/// Returns `v / ‖v‖₂`, or `None` for a (numerically) zero vector.
pub fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm >= ZERO_NORM) {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

/// Rescales every embedding to unit L2 norm.
pub fn normalize(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let examples = set
        .examples
        .iter()
        .map(|ex| {
            let embedding = unit(&ex.embedding).ok_or_else(|| Error::ZeroVector {
                id: ex.id.clone(),
            })?;
            Ok(LabeledExample {
                embedding,
                ..ex.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmbeddingSet::from_parts(set.dim, set.classes, examples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Guesses the format from a file extension; anything but `.jsonl` /
    /// `.ndjson` is treated as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(Error::InvalidConfig(format!("unknown format {other}"))),
        }
    }
}

pub fn load_embeddings(path: &Path, format: Format) -> Result<EmbeddingSet> {
    let text = io::read_to_string(path)?;
    match format {
        Format::Csv => parse_csv(path, &text),
        Format::Jsonl => parse_jsonl(path, &text),
    }
}

/// Reads `# classes=<C>` from the leading comment block.
fn declared_classes(path: &Path, text: &str) -> Result<Option<usize>> {
    for (i, line) in text.lines().enumerate() {
        let Some(comment) = line.trim_start().strip_prefix('#') else {
            if line.trim().is_empty() {
                continue;
            }
            break;
        };
        if let Some(value) = comment.trim().strip_prefix("classes=") {
            let c = value.trim().parse().map_err(|_| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("invalid class count {value:?}"),
            })?;
            return Ok(Some(c));
        }
    }
    Ok(None)
}

fn finish(
    path: &Path,
    dim: usize,
    declared: Option<usize>,
    rows: Vec<(usize, LabeledExample)>,
) -> Result<EmbeddingSet> {
    let classes = match declared {
        Some(c) => {
            if let Some((line, ex)) = rows.iter().find(|(_, ex)| ex.label >= c) {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line: *line,
                    message: format!("label {} not below declared class count {c}", ex.label),
                });
            }
            c
        }
        None => rows.iter().map(|(_, ex)| ex.label + 1).max().unwrap_or(0),
    };
    let mut seen = HashSet::with_capacity(rows.len());
    for (line, ex) in &rows {
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: *line,
                message: format!("duplicate id {}", ex.id),
            });
        }
    }
    let examples = rows.into_iter().map(|(_, ex)| ex).collect();
    EmbeddingSet::new(dim, classes, examples)
}

fn parse_csv(path: &Path, text: &str) -> Result<EmbeddingSet> {
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let declared = declared_classes(path, text)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header = match records.next() {
        None => return finish(path, 0, declared, Vec::new()),
        Some(r) => r.map_err(|e| malformed(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?,
    };
    let header_line = header.position().map_or(1, |p| p.line() as usize);
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "group" || cols[2] != "label" {
        return Err(malformed(
            header_line,
            "header must start with id,group,label".to_string(),
        ));
    }
    let dim = cols.len() - 3;
    for (j, name) in cols[3..].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(malformed(
                header_line,
                format!("expected feature column f{j}, found {name:?}"),
            ));
        }
    }

    let mut rows = Vec::new();
    for record in records {
        let record =
            record.map_err(|e| malformed(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != dim + 3 {
            return Err(malformed(
                line,
                format!(
                    "dimension mismatch: expected {dim} features, found {}",
                    record.len().saturating_sub(3)
                ),
            ));
        }
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(malformed(line, "empty id".to_string()));
        }
        let group = match record[1].trim() {
            "" => None,
            g => Some(g.to_string()),
        };
        let label: usize = record[2]
            .trim()
            .parse()
            .map_err(|_| malformed(line, format!("invalid label {:?}", &record[2])))?;
        let embedding = record
            .iter()
            .skip(3)
            .map(|field| {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| malformed(line, format!("invalid feature value {field:?}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(malformed(line, format!("non-finite feature value {field:?}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((
            line,
            LabeledExample {
                id,
                group,
                label,
                embedding,
            },
        ));
    }
    finish(path, dim, declared, rows)
}

#[derive(Deserialize)]
struct JsonRow {
    id: String,
    group: Option<String>,
    label: usize,
    embedding: Vec<f64>,
}

fn parse_jsonl(path: &Path, text: &str) -> Result<EmbeddingSet> {
    let declared = declared_classes(path, text)?;
    let mut dim = None;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row: JsonRow = serde_json::from_str(trimmed).map_err(|e| malformed(e.to_string()))?;
        match dim {
            None => dim = Some(row.embedding.len()),
            Some(d) if d != row.embedding.len() => {
                return Err(malformed(format!(
                    "dimension mismatch: expected {d} features, found {}",
                    row.embedding.len()
                )))
            }
            _ => {}
        }
        if row.embedding.iter().any(|v| !v.is_finite()) {
            return Err(malformed("non-finite feature value".to_string()));
        }
        rows.push((
            line,
            LabeledExample {
                id: row.id,
                group: row.group.filter(|g| !g.is_empty()),
                label: row.label,
                embedding: row.embedding,
            },
        ));
    }
    finish(path, dim.unwrap_or(0), declared, rows)
}

/// Renders a set in the canonical CSV format. `comments` are emitted as
/// `# ` lines ahead of the `# classes=` line and the header.
pub fn to_csv(set: &EmbeddingSet, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "# classes={}", set.classes);
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "group".to_string(), "label".to_string()];
    header.extend((0..set.dim).map(|j| format!("f{j}")));
    writer.write_record(&header).expect("in-memory write");
    for ex in &set.examples {
        let mut record = Vec::with_capacity(set.dim + 3);
        record.push(ex.id.clone());
        record.push(ex.group.clone().unwrap_or_default());
        record.push(ex.label.to_string());
        // `Display` for f64 prints the shortest string that parses back to
        // the same value.
        record.extend(ex.embedding.iter().map(|v| v.to_string()));
        writer.write_record(&record).expect("in-memory write");
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    out.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
    out
}

pub fn save_embeddings(set: &EmbeddingSet, path: &Path, comments: &[String]) -> Result<()> {
    io::write_atomic(path, to_csv(set, comments).as_bytes())
}
