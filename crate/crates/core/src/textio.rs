//! Shared helpers for the plain-text file formats.

use std::fs;
use std::path::Path;

use crate::error::{Result, SenseError};

/// Real number in scientific notation with 9 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.8e}")
}

/// Space-joined reals in [`fmt_real`] form.
pub fn fmt_reals(xs: &[f64]) -> String {
    let mut out = String::with_capacity(xs.len() * 16);
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&fmt_real(*x));
    }
    out
}

pub fn parse_reals(line: &str, context: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| SenseError::parse(context, format!("invalid real '{tok}'")))
        })
        .collect()
}

pub fn parse_field<T: std::str::FromStr>(tok: &str, what: &str, context: &str) -> Result<T> {
    tok.trim()
        .parse::<T>()
        .map_err(|_| SenseError::parse(context, format!("invalid {what} '{tok}'")))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| SenseError::io(path, e))
}

/// Write via a sibling temporary file and rename, so readers never observe a
/// partially written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| SenseError::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, contents).map_err(|e| SenseError::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| SenseError::io(path, e))
}
