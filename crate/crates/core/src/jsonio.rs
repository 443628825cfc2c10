//! Canonical JSON and JSON-lines persistence.
//!
//! Canonical output sorts object keys and rounds every float to 9
//! significant digits. Rounding is idempotent, so a save→load→save cycle
//! reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Number, Value};

#[derive(Debug, thiserror::Error)]
pub enum JsonIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error on {path} line {line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error("unsupported schema version {found} in {path} (expected {expected})")]
    SchemaVersion { path: String, found: u64, expected: u64 },
}

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds `x` to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let s = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    s.parse().unwrap_or(x)
}

fn canonicalize(value: Value) -> Value {
    match value {
        Value::Number(n) => {
            if n.is_f64() {
                let r = round_significant(n.as_f64().unwrap_or(0.0));
                Number::from_f64(r).map(Value::Number).unwrap_or(Value::Null)
            } else {
                Value::Number(n)
            }
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Object(map) => {
            // serde_json's default map is ordered by key
            let sorted: Map<String, Value> =
                map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect();
            Value::Object(sorted)
        }
        other => other,
    }
}

/// Canonical single-line JSON text for `value`.
pub fn to_canonical_string<T: Serialize>(value: &T) -> Result<String, JsonIoError> {
    let v = canonicalize(serde_json::to_value(value)?);
    Ok(serde_json::to_string(&v)?)
}

/// Canonical pretty-printed JSON text for `value`.
pub fn to_canonical_pretty<T: Serialize>(value: &T) -> Result<String, JsonIoError> {
    let v = canonicalize(serde_json::to_value(value)?);
    Ok(serde_json::to_string_pretty(&v)?)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> JsonIoError + '_ {
    move |source| JsonIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), JsonIoError> {
    let mut text = to_canonical_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, JsonIoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| JsonIoError::Json {
        path: path.display().to_string(),
        line: source.line(),
        source,
    })
}

/// Writes one canonical JSON document per line.
pub fn write_jsonl<'a, T, I>(path: &Path, items: I) -> Result<(), JsonIoError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = to_canonical_string(item)?;
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reads a JSON-lines file, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonIoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| JsonIoError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        items.push(item);
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn keys_are_sorted() {
        let v = serde_json::json!({"b": 1, "a": 2.5});
        assert_eq!(to_canonical_string(&v).unwrap(), r#"{"a":2.5,"b":1}"#);
    }

    #[test]
    fn rounds_to_nine_digits() {
        assert_eq!(round_significant(1.234_567_891_23), 1.234_567_89);
        assert_eq!(round_significant(-98_765.432_109_8), -98_765.432_1);
    }

    proptest! {
        #[test]
        fn rounding_is_idempotent(x in -1e12f64..1e12) {
            let once = round_significant(x);
            prop_assert_eq!(once, round_significant(once));
        }

        #[test]
        fn canonical_text_round_trips(xs in proptest::collection::vec(-1e6f64..1e6, 0..20)) {
            let first = to_canonical_string(&xs).unwrap();
            let back: Vec<f64> = serde_json::from_str(&first).unwrap();
            prop_assert_eq!(first, to_canonical_string(&back).unwrap());
        }
    }
}
