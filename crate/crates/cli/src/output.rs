//! Byte-stable JSON and CSV emission.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub const TOOL: &str = "qcd";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Sorts object keys and rounds every float to 12 significant digits.
pub fn canonical(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(String, Value)> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonical(v))).collect::<Map<_, _>>())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        Value::Number(n) if n.is_f64() => {
            let x = round12(n.as_f64().expect("f64 number"));
            serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
        }
        other => other,
    }
}

/// Header block attached to every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub grid_n: Option<usize>,
    pub config: Value,
}

impl Meta {
    pub fn new(command: &str, seed: u64, grid_n: Option<usize>, config: impl Serialize) -> Self {
        Meta {
            tool: TOOL,
            version: VERSION,
            command: command.into(),
            seed,
            grid_n,
            config: serde_json::to_value(config).unwrap_or(Value::Null),
        }
    }
}

pub fn json_document(meta: &Meta, result: impl Serialize) -> Result<String, CliError> {
    let doc = serde_json::json!({ "meta": meta, "result": serde_json::to_value(result).map_err(CliError::encode)? });
    let mut s = serde_json::to_string_pretty(&canonical(doc)).map_err(CliError::encode)?;
    s.push('\n');
    Ok(s)
}

/// A CSV cell: integers verbatim, floats at 12 significant digits.
#[derive(Debug, Clone, Copy)]
pub enum Cell {
    Int(u64),
    Real(f64),
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Cell::Int(i) => write!(f, "{i}"),
            Cell::Real(x) => write!(f, "{}", round12(x)),
        }
    }
}

/// CSV with a `#`-prefixed header block, then a column header row.
pub fn csv_document(meta: &Meta, columns: &[&str], rows: &[Vec<Cell>]) -> Result<String, CliError> {
    let mut buf = Vec::new();
    let head = serde_json::to_string(&canonical(serde_json::to_value(meta).map_err(CliError::encode)?))
        .map_err(CliError::encode)?;
    writeln!(buf, "# {head}").expect("write to memory");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns).map_err(|e| CliError::Domain(e.to_string()))?;
        for row in rows {
            w.write_record(row.iter().map(|c| c.to_string())).map_err(|e| CliError::Domain(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::io(Path::new("<csv>"), e))?;
    }
    Ok(String::from_utf8(buf).expect("utf-8 csv"))
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn emit(text: &str, path: Option<&PathBuf>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}
