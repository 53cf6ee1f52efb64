//! UCR-archive style text files.
//!
//! One sample per row: the class label, then the values, separated by tabs
//! or commas. Shorter samples are padded with `NaN` at the end. A first line
//! `#channels C` declares `C` channels; each sample then spans `C`
//! consecutive rows carrying the same label.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;

use super::{z_normalize, Dataset};
use crate::error::{DtanError, Result};
use crate::scalar::Scalar;
use crate::warping::Signal;

struct Row {
    line: usize,
    label: String,
    values: Vec<f64>,
    /// Number of values before the first missing one.
    valid: usize,
}

fn parse_value(token: &str) -> Option<f64> {
    let t = token.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") || t == "?" {
        Some(f64::NAN)
    } else {
        t.parse().ok()
    }
}

fn parse_row(line_no: usize, line: &str) -> Result<Row> {
    let sep = if line.contains('\t') { '\t' } else { ',' };
    let mut fields = line.trim_end().split(sep);
    let label = fields.next().unwrap_or_default().trim().to_string();
    if label.is_empty() {
        return Err(DtanError::Parse { line: line_no, message: "missing class label".into() });
    }
    let values = fields
        .enumerate()
        .map(|(i, tok)| {
            parse_value(tok).ok_or_else(|| DtanError::Parse {
                line: line_no,
                message: format!("field {} ('{}') is not a number", i + 2, tok.trim()),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let valid = values.iter().take_while(|v| !v.is_nan()).count();
    if values[valid..].iter().any(|v| !v.is_nan()) {
        return Err(DtanError::Parse { line: line_no, message: "values after a missing value".into() });
    }
    if values[..valid].iter().any(|v| v.is_infinite()) {
        return Err(DtanError::Parse { line: line_no, message: "infinite value".into() });
    }
    Ok(Row { line: line_no, label, values, valid })
}

/// Sorts class labels numerically when they all parse as numbers, else
/// lexicographically.
fn order_labels(labels: BTreeSet<String>) -> Vec<String> {
    let mut names: Vec<String> = labels.into_iter().collect();
    if names.iter().all(|l| l.parse::<f64>().is_ok()) {
        names.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    names
}

/// Parses a dataset from text; `normalize` z-normalizes every signal.
pub fn read_ucr<T: Scalar, R: BufRead>(reader: R, name: &str, normalize: bool) -> Result<Dataset<T>> {
    let mut channels = 1;
    let mut rows = Vec::new();
    let mut saw_data = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('#') {
            let mut parts = header.split_whitespace();
            if parts.next() == Some("channels") && !saw_data {
                channels = parts
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .filter(|&c| c > 0)
                    .ok_or(DtanError::Parse { line: line_no, message: "bad channels header".into() })?;
            }
            continue;
        }
        saw_data = true;
        rows.push(parse_row(line_no, &line)?);
    }
    if rows.is_empty() {
        return Err(DtanError::Parse { line: 0, message: "no data rows".into() });
    }
    if rows.len() % channels != 0 {
        return Err(DtanError::Parse {
            line: rows.last().map_or(0, |r| r.line),
            message: format!("{} rows do not group into samples of {channels} channels", rows.len()),
        });
    }
    let variable = rows.iter().any(|r| r.valid < r.values.len());
    let width = rows.iter().map(|r| r.values.len()).max().unwrap_or(0);
    if !variable {
        if let Some(bad) = rows.iter().find(|r| r.values.len() != width) {
            return Err(DtanError::Parse {
                line: bad.line,
                message: format!("expected {width} values, found {}", bad.values.len()),
            });
        }
    }
    let class_names = order_labels(rows.iter().map(|r| r.label.clone()).collect());
    let mut signals = Vec::with_capacity(rows.len() / channels);
    let mut labels = Vec::with_capacity(rows.len() / channels);
    let mut constant = 0;
    for group in rows.chunks(channels) {
        if let Some(bad) = group.iter().find(|r| r.label != group[0].label) {
            return Err(DtanError::Parse { line: bad.line, message: "channels of one sample carry different labels".into() });
        }
        let valid = group.iter().map(|r| r.valid).min().unwrap_or(0);
        if valid < 2 {
            return Err(DtanError::Parse { line: group[0].line, message: "fewer than two valid values".into() });
        }
        let mut values = Vec::with_capacity(channels * width);
        for r in group {
            values.extend((0..width).map(|t| if t < valid { T::lit(r.values[t]) } else { T::zero() }));
        }
        let mut s = Signal::new(channels, values)?.with_mask((0..width).map(|t| t < valid).collect())?;
        if normalize && !z_normalize(&mut s) {
            constant += 1;
        }
        labels.push(class_names.iter().position(|n| *n == group[0].label).expect("label collected"));
        signals.push(s);
    }
    if constant > 0 {
        warn!("{name}: {constant} signal(s) have a constant channel and were set to zero");
    }
    Dataset::new(name, signals, labels, class_names)
}

/// Loads and z-normalizes a UCR-style file.
pub fn load_ucr<T: Scalar>(path: impl AsRef<Path>, name: &str) -> Result<Dataset<T>> {
    let file = File::open(path)?;
    read_ucr(BufReader::new(file), name, true)
}

/// Writes labeled rows in the loader's format with shortest round-trip
/// float formatting; masked samples are written as `NaN`.
pub fn write_rows<T: Scalar, W: Write>(w: &mut W, rows: &[(String, &Signal<T>)], sep: char) -> Result<()> {
    let channels = rows.first().map_or(1, |(_, s)| s.channels());
    if channels > 1 {
        writeln!(w, "#channels {channels}")?;
    }
    for (label, s) in rows {
        for c in 0..s.channels() {
            write!(w, "{label}")?;
            for (t, v) in s.channel(c).iter().enumerate() {
                if s.is_valid(t) {
                    write!(w, "{sep}{}", v.as_f64())?;
                } else {
                    write!(w, "{sep}NaN")?;
                }
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Writes a dataset as tab-separated rows with its original label text.
pub fn write_ucr<T: Scalar>(path: impl AsRef<Path>, data: &Dataset<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let rows: Vec<(String, &Signal<T>)> =
        data.signals.iter().zip(&data.labels).map(|(s, &k)| (data.class_names[k].clone(), s)).collect();
    write_rows(&mut w, &rows, '\t')?;
    w.flush()?;
    Ok(())
}
