//! Table, JSON and CSV rendering of flat records.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Table,
    Json,
    Csv,
}

/// Everything needed to rerun a command and reproduce its metrics.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: Value,
    pub base_seed: u64,
    pub version: &'static str,
    pub dataset: Value,
    pub dataset_fingerprint: Option<String>,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(
        command: &str,
        parameters: &impl Serialize,
        base_seed: u64,
        dataset: Value,
        fingerprint: Option<String>,
    ) -> Self {
        Self {
            command: command.to_owned(),
            parameters: serde_json::to_value(parameters).unwrap_or(Value::Null),
            base_seed,
            version: env!("CARGO_PKG_VERSION"),
            dataset,
            dataset_fingerprint: fingerprint,
            timestamp: timestamp(),
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")
            .with_context(|| format!("cannot write manifest {}", path.display()))
    }
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

/// Flattens a serializable record into (column, value) pairs; nested objects
/// become dotted column names.
pub fn flatten(record: &impl Serialize) -> Vec<(String, Value)> {
    fn walk(prefix: &str, v: Value, out: &mut Vec<(String, Value)>) {
        match v {
            Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() {
                        k
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, v, out);
                }
            }
            other => out.push((prefix.to_owned(), other)),
        }
    }
    let mut out = Vec::new();
    walk(
        "",
        serde_json::to_value(record).unwrap_or(Value::Null),
        &mut out,
    );
    out
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(x) if !n.is_u64() && !n.is_i64() && x != 0.0 && x.abs() < 1e-3 => {
                format!("{x:.3e}")
            }
            Some(x) if !n.is_u64() && !n.is_i64() => format!("{x:.6}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) if s.contains([',', '"', '\n']) => {
            format!("\"{}\"", s.replace('"', "\"\""))
        }
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Union of the column names in first-seen order. A null leaf is dropped when
/// other rows expand the same field into nested columns.
fn columns(rows: &[Vec<(String, Value)>]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for row in rows {
        for (k, _) in row {
            if !out.contains(k) {
                out.push(k.clone());
            }
        }
    }
    let nested = |h: &str| {
        out.iter()
            .any(|o| o.len() > h.len() && o.starts_with(h) && o.as_bytes()[h.len()] == b'.')
    };
    let keep: Vec<bool> = out.iter().map(|h| !nested(h)).collect();
    out.into_iter()
        .zip(keep)
        .filter_map(|(h, k)| k.then_some(h))
        .collect()
}

/// Writes rows in the chosen format. JSON is one object per line.
pub fn emit<T: Serialize>(out: &mut impl Write, format: Format, rows: &[T]) -> std::io::Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    let flat: Vec<Vec<(String, Value)>> = rows.iter().map(flatten).collect();
    let headers = columns(&flat);
    let lookup = |row: &[(String, Value)], h: &str| {
        row.iter()
            .find(|(k, _)| k == h)
            .map(|(_, v)| v.clone())
            .unwrap_or(Value::Null)
    };
    let flat: Vec<Vec<Value>> = flat
        .iter()
        .map(|r| headers.iter().map(|h| lookup(r, h)).collect())
        .collect();
    let headers: Vec<&str> = headers.iter().map(String::as_str).collect();
    match format {
        Format::Json => {
            for row in rows {
                writeln!(
                    out,
                    "{}",
                    serde_json::to_string(row).map_err(std::io::Error::other)?
                )?;
            }
        }
        Format::Csv => {
            writeln!(out, "{}", headers.join(","))?;
            for row in &flat {
                let cells: Vec<String> = row.iter().map(csv_cell).collect();
                writeln!(out, "{}", cells.join(","))?;
            }
        }
        Format::Table => {
            let cells: Vec<Vec<String>> =
                flat.iter().map(|r| r.iter().map(cell).collect()).collect();
            let widths: Vec<usize> = headers
                .iter()
                .enumerate()
                .map(|(j, h)| {
                    cells
                        .iter()
                        .map(|r| r[j].len())
                        .chain([h.len()])
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |items: Vec<&str>| {
                items
                    .iter()
                    .zip(&widths)
                    .map(|(s, w)| format!("{s:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            writeln!(out, "{}", line(headers.clone()))?;
            for r in &cells {
                writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
            }
        }
    }
    Ok(())
}

/// Writes `rows` as JSON lines to `path`.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).with_context(|| format!("cannot write {}", path.display()))
}
