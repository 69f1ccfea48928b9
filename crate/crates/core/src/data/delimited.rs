//! Whitespace-delimited text datasets.
//!
//! Two flavours:
//! * raw feature/label file pairs as distributed with the oil-flow data
//!   ([`load_delimited`]);
//! * the self-describing dataset format written by [`write_dataset`]:
//!
//! ```text
//! # npga-dataset split=<train|validation|test>
//! features:<K> <label-set> <label-set> ...
//! <K feature values> <label columns> ...
//! ```
//!
//! where each label-set header token is `discrete:<name>:<classes>` (one
//! integer class column), `continuous:<name>:<M>` or
//! `periodic:<name>:<period>:<M>` (M value columns). Fields are tab separated
//! and floats are written in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{one_hot, Dataset, LabelKind, LabelSet, Split};
use crate::error::{NpgaError, Result};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> NpgaError {
    NpgaError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Numeric rows of a whitespace-delimited file, with 1-based line numbers.
/// Blank lines and `#` comments are skipped.
fn read_numeric_rows(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row = trimmed
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, lineno, format!("non-numeric token `{tok}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("ragged row: {} columns, expected {w}", row.len()),
                ));
            }
            _ => {}
        }
        rows.push((lineno, row));
    }
    Ok(rows)
}

/// Loads a feature file and a label file of equal row count.
///
/// Labels are either a single integer class column (0-based) or one-hot
/// columns. `num_classes` overrides the inferred class count.
pub fn load_delimited(features_path: &Path, labels_path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let feats = read_numeric_rows(features_path)?;
    let labels = read_numeric_rows(labels_path)?;
    if feats.len() != labels.len() {
        let line = labels.get(feats.len()).or(labels.last()).map_or(1, |r| r.0);
        return Err(parse_err(
            labels_path,
            line,
            format!("{} label rows for {} feature rows", labels.len(), feats.len()),
        ));
    }
    let n = feats.len();
    let k = feats.first().map_or(0, |r| r.1.len());
    let features = DMatrix::from_fn(n, k, |i, j| feats[i].1[j]);

    let width = labels.first().map_or(1, |r| r.1.len());
    let mut classes = Vec::with_capacity(n);
    for (lineno, row) in &labels {
        let class = if width == 1 {
            let v = row[0];
            if v < 0.0 || v.fract() != 0.0 {
                return Err(parse_err(
                    labels_path,
                    *lineno,
                    format!("class label `{v}` is not a nonnegative integer"),
                ));
            }
            v as usize
        } else {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v == 1.0)
                .map(|(c, _)| c)
                .collect();
            if ones.len() != 1 || row.iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(parse_err(labels_path, *lineno, "label row is not one-hot"));
            }
            ones[0]
        };
        classes.push(class);
    }
    let inferred = if width == 1 {
        classes.iter().max().map_or(0, |m| m + 1)
    } else {
        width
    };
    let num = num_classes.unwrap_or(inferred);
    if let Some((i, c)) = classes.iter().enumerate().find(|(_, c)| **c >= num) {
        return Err(parse_err(
            labels_path,
            labels[i].0,
            format!("class {c} out of range for {num} classes"),
        ));
    }
    let values = one_hot(&classes, num)?;
    Dataset::new(
        features,
        vec![LabelSet {
            name: "class".into(),
            kind: LabelKind::Discrete { classes: num },
            values,
        }],
        Split::Train,
    )
}

/// Writes a dataset in the self-describing delimited format.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# npga-dataset split={}", dataset.split).unwrap();
    write!(out, "features:{}", dataset.input_dim()).unwrap();
    for ls in &dataset.label_sets {
        if ls.name.contains(|c: char| c == ':' || c.is_whitespace()) || ls.name.is_empty() {
            return Err(NpgaError::InvalidLabel(format!(
                "label set name `{}` cannot be serialized",
                ls.name
            )));
        }
        match ls.kind {
            LabelKind::Discrete { classes } => write!(out, "\tdiscrete:{}:{classes}", ls.name),
            LabelKind::Continuous => write!(out, "\tcontinuous:{}:{}", ls.name, ls.values.ncols()),
            LabelKind::Periodic { period } => write!(out, "\tperiodic:{}:{period:?}:{}", ls.name, ls.values.ncols()),
        }
        .unwrap();
    }
    out.push('\n');
    let classes: Vec<Option<Vec<usize>>> = dataset.label_sets.iter().map(|ls| ls.class_indices().ok()).collect();
    for i in 0..dataset.len() {
        let mut fields: Vec<String> = dataset.features.row(i).iter().map(|v| format!("{v:?}")).collect();
        for (ls, cls) in dataset.label_sets.iter().zip(&classes) {
            match cls {
                Some(c) => fields.push(c[i].to_string()),
                None => fields.extend(ls.values.row(i).iter().map(|v| format!("{v:?}"))),
            }
        }
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

enum Column {
    Discrete(String, usize),
    Values(String, LabelKind, usize),
}

fn parse_header(path: &Path, line: usize, header: &str) -> Result<(usize, Vec<Column>)> {
    let mut tokens = header.split('\t');
    let bad = |msg: String| parse_err(path, line, msg);
    let k = tokens
        .next()
        .and_then(|t| t.strip_prefix("features:"))
        .and_then(|t| t.parse::<usize>().ok())
        .ok_or_else(|| bad("header must start with `features:<K>`".into()))?;
    let mut cols = Vec::new();
    for tok in tokens {
        let parts: Vec<&str> = tok.split(':').collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad count in `{tok}`")));
        let col = match parts.as_slice() {
            ["discrete", name, c] => Column::Discrete(name.to_string(), num(c)?),
            ["continuous", name, m] => Column::Values(name.to_string(), LabelKind::Continuous, num(m)?),
            ["periodic", name, p, m] => {
                let period = p.parse::<f64>().map_err(|_| bad(format!("bad period in `{tok}`")))?;
                Column::Values(name.to_string(), LabelKind::Periodic { period }, num(m)?)
            }
            _ => return Err(bad(format!("unrecognised label header `{tok}`"))),
        };
        cols.push(col);
    }
    Ok((k, cols))
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let split = match lines.next() {
        Some((_, l)) => l
            .strip_prefix("# npga-dataset split=")
            .ok_or_else(|| parse_err(path, 1, "missing `# npga-dataset` magic line"))?
            .parse::<Split>()?,
        None => return Err(parse_err(path, 1, "empty file")),
    };
    let (k, cols) = match lines.next() {
        Some((i, l)) => parse_header(path, i + 1, l)?,
        None => return Err(parse_err(path, 2, "missing header line")),
    };
    let width = k + cols
        .iter()
        .map(|c| match c {
            Column::Discrete(..) => 1,
            Column::Values(_, _, m) => *m,
        })
        .sum::<usize>();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split('\t')
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(path, i + 1, format!("non-numeric token `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != width {
            return Err(parse_err(
                path,
                i + 1,
                format!("ragged row: {} columns, expected {width}", row.len()),
            ));
        }
        rows.push(row);
    }
    let n = rows.len();
    let features = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
    let mut offset = k;
    let mut label_sets = Vec::new();
    for col in cols {
        match col {
            Column::Discrete(name, classes) => {
                let idx: Vec<usize> = rows.iter().map(|r| r[offset] as usize).collect();
                label_sets.push(LabelSet::discrete(name, &idx, classes)?);
                offset += 1;
            }
            Column::Values(name, kind, m) => {
                let values = DMatrix::from_fn(n, m, |i, j| rows[i][offset + j]);
                label_sets.push(LabelSet { name, kind, values });
                offset += m;
            }
        }
    }
    Dataset::new(features, label_sets, split)
}
