//! Numeric CSV pairs: one sample per row in the features file, one integer
//! label per line in the labels file. Blank lines are skipped.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

fn non_blank_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn load_matrix_csv(
    features_path: &Path,
    labels_path: &Path,
    num_classes: usize,
) -> Result<Dataset> {
    let ctx = features_path.display().to_string();
    let text = fs::read_to_string(features_path).map_err(|e| Error::io(features_path, e))?;
    let mut features = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for (line_no, line) in non_blank_lines(&text) {
        let start = features.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format(&ctx, format!("row {line_no}: cannot parse {field:?} as a number"))
            })?;
            features.push(v);
        }
        let w = features.len() - start;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(Error::format(
                    &ctx,
                    format!("row {line_no} has {w} fields, expected {expected}"),
                ));
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::format(&ctx, "no data rows"))?;

    let lctx = labels_path.display().to_string();
    let ltext = fs::read_to_string(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let mut labels = Vec::with_capacity(rows);
    for (line_no, line) in non_blank_lines(&ltext) {
        let l: usize = line.parse().map_err(|_| {
            Error::format(&lctx, format!("row {line_no}: cannot parse {line:?} as a label"))
        })?;
        labels.push(l);
    }
    if labels.len() != rows {
        return Err(Error::LengthMismatch {
            expected: rows,
            actual: labels.len(),
        });
    }
    Dataset::new(features, labels, width, num_classes)
}
