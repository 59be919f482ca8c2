//! Per-run records and their CSV / JSON forms.

use std::io::{Read, Write};
use std::path::Path;

use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};
use crate::experiments::config::{Format, Method};

pub const CSV_HEADER: [&str; 10] =
    ["method", "d", "seed", "train_acc", "robust_acc", "margin", "ratio", "eopp_gap", "interpolating", "wall_ms"];

/// Round to the 9 significant digits that the output formats carry, so that
/// emitting and parsing a record is lossless.
pub fn quantize(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.8e}").parse().expect("formatted float parses")
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub train_acc: f64,
    pub robust_acc: f64,
    pub margin: f64,
    /// `None` when the classifier has no core component.
    pub ratio: Option<f64>,
    /// `None` when an environment has no positive rows.
    pub eopp_gap: Option<f64>,
    pub interpolating: bool,
    pub wall_ms: u64,
}

impl Metrics {
    pub fn new(train_acc: f64, robust_acc: f64, margin: f64, ratio: Option<f64>, eopp_gap: Option<f64>, wall_ms: u64) -> Self {
        Self {
            train_acc: quantize(train_acc),
            robust_acc: quantize(robust_acc),
            margin: quantize(margin),
            ratio: ratio.map(quantize),
            eopp_gap: eopp_gap.map(quantize),
            interpolating: train_acc == 1.0 && margin > 0.0,
            wall_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub d: usize,
    pub seed: u64,
    /// Metrics, or the failure reason verbatim.
    pub outcome: std::result::Result<Metrics, String>,
}

impl RunRecord {
    pub fn metrics(&self) -> Option<&Metrics> {
        self.outcome.as_ref().ok()
    }

    pub fn sort_key(&self) -> (&'static str, usize, u64) {
        (self.method.name(), self.d, self.seed)
    }
}

fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub fn write_csv(records: &[RunRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        let mut row = vec![r.method.name().to_string(), r.d.to_string(), r.seed.to_string()];
        match &r.outcome {
            Ok(m) => row.extend([
                fmt_float(m.train_acc),
                fmt_float(m.robust_acc),
                fmt_float(m.margin),
                fmt_opt(m.ratio),
                fmt_opt(m.eopp_gap),
                m.interpolating.to_string(),
                m.wall_ms.to_string(),
            ]),
            Err(reason) => {
                row.extend(std::iter::repeat(String::new()).take(5));
                row.push(format!("error:{reason}"));
                row.push(String::new());
            }
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str, row: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("row {row}: cannot parse {what} `{s}`")))
}

fn parse_opt(s: &str, what: &str, row: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, what, row).map(Some)
    }
}

pub fn read_csv(input: impl Read) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let io = |e: csv::Error| Error::Format(e.to_string());
    let header = rdr.headers().map_err(io)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(io)?;
        let row = i + 2;
        let f = |k: usize| rec.get(k).unwrap_or("");
        let method = f(0).parse::<Method>().map_err(|e| Error::Format(format!("row {row}: {e}")))?;
        let d = parse_field(f(1), "d", row)?;
        let seed = parse_field(f(2), "seed", row)?;
        let outcome = if let Some(reason) = f(8).strip_prefix("error:") {
            Err(reason.to_string())
        } else {
            Ok(Metrics {
                train_acc: parse_field(f(3), "train_acc", row)?,
                robust_acc: parse_field(f(4), "robust_acc", row)?,
                margin: parse_field(f(5), "margin", row)?,
                ratio: parse_opt(f(6), "ratio", row)?,
                eopp_gap: parse_opt(f(7), "eopp_gap", row)?,
                interpolating: parse_field(f(8), "interpolating", row)?,
                wall_ms: parse_field(f(9), "wall_ms", row)?,
            })
        };
        out.push(RunRecord { method, d, seed, outcome });
    }
    Ok(out)
}

fn num(x: f64) -> Value {
    Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn to_json(records: &[RunRecord]) -> String {
    let rows: Vec<Value> = records
        .iter()
        .map(|r| {
            let mut o = Map::new();
            o.insert("method".into(), Value::String(r.method.name().into()));
            o.insert("d".into(), Value::from(r.d));
            o.insert("seed".into(), Value::from(r.seed));
            match &r.outcome {
                Ok(m) => {
                    o.insert("train_acc".into(), num(m.train_acc));
                    o.insert("robust_acc".into(), num(m.robust_acc));
                    o.insert("margin".into(), num(m.margin));
                    o.insert("ratio".into(), m.ratio.map_or(Value::Null, num));
                    o.insert("eopp_gap".into(), m.eopp_gap.map_or(Value::Null, num));
                    o.insert("interpolating".into(), Value::Bool(m.interpolating));
                    o.insert("wall_ms".into(), Value::from(m.wall_ms));
                }
                Err(reason) => {
                    for k in ["train_acc", "robust_acc", "margin", "ratio", "eopp_gap"] {
                        o.insert(k.into(), Value::Null);
                    }
                    o.insert("interpolating".into(), Value::String(format!("error:{reason}")));
                    o.insert("wall_ms".into(), Value::Null);
                }
            }
            Value::Object(o)
        })
        .collect();
    serde_json::to_string_pretty(&Value::Array(rows)).expect("records serialize")
}

pub fn from_json(text: &str) -> Result<Vec<RunRecord>> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let rows = v.as_array().ok_or_else(|| Error::Format("expected a JSON array".into()))?;
    let bad = |i: usize, k: &str| Error::Format(format!("record {i}: bad or missing `{k}`"));
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let get = |k: &str| row.get(k).ok_or_else(|| bad(i, k));
            let float = |k: &str| get(k)?.as_f64().ok_or_else(|| bad(i, k));
            let opt = |k: &str| -> Result<Option<f64>> {
                match get(k)? {
                    Value::Null => Ok(None),
                    v => v.as_f64().map(Some).ok_or_else(|| bad(i, k)),
                }
            };
            let method = get("method")?.as_str().and_then(|s| s.parse().ok()).ok_or_else(|| bad(i, "method"))?;
            let d = get("d")?.as_u64().ok_or_else(|| bad(i, "d"))? as usize;
            let seed = get("seed")?.as_u64().ok_or_else(|| bad(i, "seed"))?;
            let outcome = match get("interpolating")? {
                Value::String(s) => Err(s.strip_prefix("error:").ok_or_else(|| bad(i, "interpolating"))?.to_string()),
                Value::Bool(interpolating) => Ok(Metrics {
                    train_acc: float("train_acc")?,
                    robust_acc: float("robust_acc")?,
                    margin: float("margin")?,
                    ratio: opt("ratio")?,
                    eopp_gap: opt("eopp_gap")?,
                    interpolating: *interpolating,
                    wall_ms: get("wall_ms")?.as_u64().ok_or_else(|| bad(i, "wall_ms"))?,
                }),
                _ => return Err(bad(i, "interpolating")),
            };
            Ok(RunRecord { method, d, seed, outcome })
        })
        .collect()
}

/// Write records to `path`; nothing is created for an empty list.
pub fn emit(records: &[RunRecord], format: Format, path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to write".into()));
    }
    let mut buf = Vec::new();
    match format {
        Format::Csv => write_csv(records, &mut buf)?,
        Format::Json => {
            buf.extend_from_slice(to_json(records).as_bytes());
            buf.push(b'\n');
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('[') {
        from_json(&text)
    } else {
        read_csv(text.as_bytes())
    }
}
