//! Result rendering: JSON objects, CSV tables and bare numbers.

use std::fs;
use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// At least twelve significant digits, fixed notation for moderate magnitudes.
pub fn number(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        format!("{:.*}", (11 - exp).max(0) as usize, x)
    } else {
        format!("{x:.11e}")
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_f64() => number(n.as_f64().unwrap_or(f64::NAN)),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        other => other.to_string(),
    }
}

/// CSV with the union of keys as header, in first-seen order; nested values as JSON.
pub fn csv_table(rows: &[Map<String, Value>]) -> Result<String, CliError> {
    let mut header: Vec<String> = Vec::new();
    for row in rows {
        for k in row.keys() {
            if !header.contains(k) {
                header.push(k.clone());
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(CliError::io)?;
    for row in rows {
        w.write_record(header.iter().map(|k| row.get(k).map(cell).unwrap_or_default())).map_err(CliError::io)?;
    }
    String::from_utf8(w.into_inner().map_err(CliError::io)?).map_err(CliError::io)
}

/// Pretty JSON with every float at full precision.
pub fn json(value: &Value) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Writes to `path` or stdout.
pub fn emit(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn object(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            m
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_keep_twelve_digits() {
        assert_eq!(number(0.05), "0.0500000000000");
        assert_eq!(number(1234.5), "1234.50000000");
        assert_eq!(number(1e-9), "1.00000000000e-9");
        assert_eq!(number(0.0), "0");
        assert_eq!(number(0.05).parse::<f64>().unwrap(), 0.05);
    }

    #[test]
    fn csv_union_header() {
        let a = object(serde_json::json!({"x": 1, "y": 0.5}));
        let b = object(serde_json::json!({"x": 2, "z": "q"}));
        let s = csv_table(&[a, b]).unwrap();
        assert_eq!(s, "x,y,z\n1,0.500000000000,\n2,,q\n");
    }
}
