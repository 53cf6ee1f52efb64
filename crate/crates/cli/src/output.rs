//! Output files: CSV tables, JSON metrics and number formatting.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::CliError;

/// Rounds to 9 significant digits.
pub fn round9(v: f64) -> f64 {
    if v.is_finite() {
        format!("{v:.8e}").parse().expect("formatted float parses")
    } else {
        v
    }
}

/// Shortest text of `v` rounded to 9 significant digits.
pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        let r = round9(v);
        if r != 0.0 && !(1e-4..1e16).contains(&r.abs()) {
            format!("{r:e}")
        } else {
            r.to_string()
        }
    }
}

/// JSON number rounded to 9 significant digits; `null` when not finite.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(round9(v)).map_or(Value::Null, Value::Number)
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&root).map_err(|e| CliError::Data(format!("{}: {e}", root.display())))?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("json serializes");
        text.push('\n');
        self.text(name, &text)
    }

    /// Writes a CSV with `header` and rows of already formatted cells.
    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.path(name);
        let io = |e: std::io::Error| CliError::Data(format!("{}: {e}", path.display()));
        let mut w = BufWriter::new(File::create(&path).map_err(io)?);
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for row in rows {
            writeln!(w, "{}", row.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt(0.1), "0.1");
        assert_eq!(fmt(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt(123456789012.0), "123456789000");
        assert_eq!(fmt(-2.5e-12), "-2.5e-12");
        assert_eq!(fmt(0.0), "0");
        assert_eq!(fmt(f64::NAN), "NaN");
        assert_eq!(num(f64::INFINITY), Value::Null);
    }
}
