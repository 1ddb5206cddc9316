//! `label,f0,...,f{d-1}` CSV codec. Reals use Rust's shortest round-trip
//! formatting, so a write/read cycle is lossless.

use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub fn write_dataset_string(d: &Dataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_string()];
    header.extend((0..d.dim()).map(|i| format!("f{i}")));
    w.write_record(&header).expect("in-memory write");
    for (row, label) in d.rows().zip(d.labels()) {
        let mut rec = vec![label.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_dataset_string(d)).map_err(|e| Error::io(path, e))
}

/// Parses CSV text. When `num_classes` is `None` it is taken as
/// `max(label) + 1` (zero for an empty body).
pub fn read_dataset_str(
    text: &str,
    tag: &str,
    split: Split,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| Error::Codec(format!("unreadable header: {e}")))?
        .clone();
    if header.is_empty() || header.get(0) != Some("label") {
        return Err(Error::Codec("missing `label` header".into()));
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::Codec(format!("unexpected column `{name}` at position {}", i + 1)));
        }
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(Error::Codec("no feature columns".into()));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Codec(format!("row {}: {e}", line + 1)))?;
        let label: usize = rec[0]
            .parse()
            .map_err(|_| Error::Codec(format!("row {}: label `{}` is not an integer", line + 1, &rec[0])))?;
        labels.push(label);
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Codec(format!("row {}: `{field}` is not a real", line + 1)))?;
            features.push(v);
        }
    }
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(features, dim, labels, k, tag, split).map_err(|e| Error::Codec(e.to_string()))
}

pub fn read_dataset(path: impl AsRef<Path>, split: Split, num_classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_dataset_str(&text, &tag, split, num_classes)
}
