//! Per-vertex value files: one `t <i> <value>` record per line. Used for
//! targets and conformal factors; omitted vertices take a default.

use std::fmt::Write as _;

use crate::phm::number;
use crate::FormatError;

pub fn parse(text: &str, n: usize, default: f64) -> Result<Vec<f64>, FormatError> {
    let mut out = vec![default; n];
    let mut seen = vec![false; n];
    for (idx, raw) in text.lines().enumerate() {
        let no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let [kw, i, value] = toks[..] else {
            return Err(FormatError::parse(no, format!("expected `t <i> <value>`, got `{line}`")));
        };
        if kw != "t" {
            return Err(FormatError::parse(no, format!("unknown record `{kw}`")));
        }
        let i: usize = i.parse().map_err(|_| FormatError::parse(no, format!("bad vertex index `{i}`")))?;
        if i >= n {
            return Err(FormatError::parse(no, format!("vertex {i} out of range ({n} vertices)")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(FormatError::parse(no, format!("vertex {i} given twice")));
        }
        out[i] = number(no, value)?;
    }
    Ok(out)
}

pub fn write(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "t {i} {v:.16e}").unwrap();
    }
    out
}
