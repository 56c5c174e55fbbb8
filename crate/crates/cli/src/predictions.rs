//! Per-example prediction files: the machine form of a prediction-set
//! listing.
//!
//! ```text
//! # tool=cpembed 0.1.0
//! # ...provenance...
//! # classes=5
//! # epsilon=0.1
//! id,label,p0,...,p4,alpha0,...,alpha4,set,top1
//! ```

use std::fmt::Write as _;
use std::path::Path;

use cpembed_core::conformal::{prediction_set, top1, PValueRow};
use cpembed_core::io;
use cpembed_core::{EmbeddingSet, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub truth: Vec<usize>,
    pub rows: Vec<PValueRow>,
    pub classes: usize,
}

pub fn render(
    test: &EmbeddingSet,
    rows: &[PValueRow],
    classes: usize,
    epsilon: f64,
    comments: &[String],
) -> Result<String> {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "# classes={classes}");
    let _ = writeln!(out, "# epsilon={epsilon}");
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..classes).map(|c| format!("p{c}")));
    header.extend((0..classes).map(|c| format!("alpha{c}")));
    header.push("set".to_string());
    header.push("top1".to_string());

    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(&header).expect("in-memory write");
    for (ex, row) in test.examples().iter().zip(rows) {
        let set = prediction_set(row, epsilon)?;
        let mut record = vec![ex.id.clone(), ex.label.to_string()];
        record.extend(row.p_values.iter().map(|p| p.to_string()));
        record.extend(row.alphas.iter().map(|a| a.to_string()));
        record.push(set.to_string());
        record.push(top1(row).to_string());
        writer.write_record(&record).expect("in-memory write");
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    out.push_str(std::str::from_utf8(&bytes).expect("utf-8"));
    Ok(out)
}

pub fn load(path: &Path) -> Result<Predictions> {
    let text = io::read_to_string(path)?;
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    let classes = headers.iter().filter(|h| h.starts_with('p')).count();
    let expected = 2 * classes + 4;
    if headers.len() != expected
        || &headers[0] != "id"
        || &headers[1] != "label"
        || (0..classes).any(|c| headers[2 + c] != format!("p{c}"))
        || (0..classes).any(|c| headers[2 + classes + c] != format!("alpha{c}"))
    {
        return Err(malformed(
            1,
            "expected header id,label,p0..,alpha0..,set,top1".to_string(),
        ));
    }

    let mut out = Predictions {
        ids: Vec::new(),
        truth: Vec::new(),
        rows: Vec::new(),
        classes,
    };
    for record in reader.records() {
        let record = record.map_err(|e| {
            malformed(e.position().map_or(0, |p| p.line() as usize), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let num = |j: usize| -> Result<f64> {
            record[j]
                .trim()
                .parse()
                .map_err(|_| malformed(line, format!("invalid number {:?}", &record[j])))
        };
        out.ids.push(record[0].to_string());
        out.truth.push(
            record[1]
                .trim()
                .parse()
                .map_err(|_| malformed(line, format!("invalid label {:?}", &record[1])))?,
        );
        let p_values = (0..classes).map(|c| num(2 + c)).collect::<Result<Vec<_>>>()?;
        let alphas = (0..classes)
            .map(|c| num(2 + classes + c))
            .collect::<Result<Vec<_>>>()?;
        out.rows.push(PValueRow { p_values, alphas });
    }
    Ok(out)
}
