//! Shared text-format helpers: locale-independent 17-significant-digit floats,
//! simple CSV reading with `#` comment lines, and `key=value` comment parsing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::value::RawValue;

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits; infinities as `inf` / `-inf`.
pub fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Parses floats written by [`fmt_f64`] (and any ordinary decimal literal).
pub fn parse_f64(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        t => t.parse().ok(),
    }
}

/// A JSON number with 17 significant digits; infinities become the strings
/// `"inf"` / `"-inf"` since JSON has no infinity literal.
pub fn json_f64(x: f64) -> Box<RawValue> {
    let text = if x.is_finite() {
        fmt_f64(x)
    } else {
        format!("\"{}\"", fmt_f64(x))
    };
    RawValue::from_string(text).expect("valid JSON number")
}

/// Reads a float from a JSON value written by [`json_f64`].
pub fn json_to_f64(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => parse_f64(s),
        _ => None,
    }
}

/// Parsed CSV: header columns, data rows and the text of `#` comment lines.
#[derive(Clone, Debug, Default)]
pub struct CsvDoc {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub comments: Vec<String>,
}

impl CsvDoc {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut doc = CsvDoc::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                doc.comments.push(c.trim().to_string());
                continue;
            }
            let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
            if doc.header.is_empty() {
                doc.header = cells;
            } else {
                if cells.len() != doc.header.len() {
                    return Err(Error::parse(
                        format!("{origin}:{}", lineno + 1),
                        format!("expected {} columns, found {}", doc.header.len(), cells.len()),
                    ));
                }
                doc.rows.push(cells);
            }
        }
        if doc.header.is_empty() {
            return Err(Error::parse(origin, "missing header line"));
        }
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Checks the header against the expected column names.
    pub fn expect_header(&self, expected: &[&str], origin: &str) -> Result<()> {
        if self.header.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(Error::parse(
                origin,
                format!("expected header {}, found {}", expected.join(","), self.header.join(",")),
            ));
        }
        Ok(())
    }

    pub fn float(&self, row: usize, col: usize, origin: &str) -> Result<f64> {
        parse_f64(&self.rows[row][col]).ok_or_else(|| {
            Error::parse(
                format!("{origin}: row {}", row + 1),
                format!("column {} is not a number: {:?}", self.header[col], self.rows[row][col]),
            )
        })
    }

    pub fn uint(&self, row: usize, col: usize, origin: &str) -> Result<usize> {
        self.rows[row][col].parse().map_err(|_| {
            Error::parse(
                format!("{origin}: row {}", row + 1),
                format!("column {} is not a non-negative integer", self.header[col]),
            )
        })
    }

    /// All `key=value` pairs found in comment lines.
    pub fn comment_fields(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for c in &self.comments {
            out.extend(parse_key_values(c));
        }
        out
    }
}

pub fn parse_key_values(line: &str) -> BTreeMap<String, String> {
    line.split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Builds CSV text line by line.
#[derive(Default)]
pub struct CsvWriter {
    buf: String,
}

impl CsvWriter {
    pub fn new(header: &[&str]) -> Self {
        let mut w = CsvWriter::default();
        w.buf.push_str(&header.join(","));
        w.buf.push('\n');
        w
    }

    pub fn row(&mut self, cells: &[String]) {
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn comment(&mut self, text: &str) {
        let _ = writeln!(self.buf, "# {text}");
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

/// Pretty JSON for any serializable value, with sorted keys and every
/// non-integer number written by [`fmt_f64`]. Non-finite floats become `null`
/// (serde's mapping); types that need them spelled out use [`json_f64`].
pub fn to_json_pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Invalid(format!("cannot serialize: {e}")))?;
    let mut out = String::new();
    write_value(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

fn write_value(v: &serde_json::Value, depth: usize, out: &mut String) {
    use serde_json::Value;
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => out.push_str(&i.to_string()),
            (_, Some(u), _) => out.push_str(&u.to_string()),
            (_, _, Some(x)) => out.push_str(&fmt_f64(x)),
            _ => out.push_str(&n.to_string()),
        },
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(depth + 1));
                write_value(item, depth + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(depth));
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                out.push_str(&pad(depth + 1));
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push_str(": ");
                write_value(&map[*key], depth + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(depth));
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bit_exactly() {
        for &x in &[0.0, -0.0, 1.0 / 3.0, -2.6325154e-300, 6.02e23, f64::MIN_POSITIVE, f64::INFINITY] {
            let back = parse_f64(&fmt_f64(x)).unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn pretty_json_uses_full_precision() {
        #[derive(serde::Serialize)]
        struct S {
            b: f64,
            a: Vec<usize>,
            c: f64,
        }
        let text = to_json_pretty(&S { b: 0.1, a: vec![1, 2], c: f64::NAN }).unwrap();
        assert_eq!(text, "{\n  \"a\": [\n    1,\n    2\n  ],\n  \"b\": 1.0000000000000001e-1,\n  \"c\": null\n}\n");
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["b"].as_f64(), Some(0.1));
    }

    #[test]
    fn json_infinity_is_a_string() {
        let raw = json_f64(f64::INFINITY);
        assert_eq!(raw.get(), "\"inf\"");
        let v: serde_json::Value = serde_json::from_str(raw.get()).unwrap();
        assert_eq!(json_to_f64(&v), Some(f64::INFINITY));
    }

    #[test]
    fn csv_parse_reports_column_mismatch() {
        assert!(CsvDoc::parse("k,v\n1,2,3\n", "t").is_err());
        let doc = CsvDoc::parse("# a=1 b=x\nk,v\n1,2\n", "t").unwrap();
        assert_eq!(doc.comment_fields()["b"], "x");
        assert_eq!(doc.float(0, 1, "t").unwrap(), 2.0);
    }
}
