//! Rendering of command results. Floats always carry 17 significant digits so
//! that repeated runs are byte-identical and values round-trip exactly.

use std::io::{self, Write};

use serde_json::ser::Formatter;
use serde_json::{Map, Value};

use crate::args::Format;

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

struct Exact;

impl Formatter for Exact {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }
}

pub fn to_json(value: &Value) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Exact);
    serde::Serialize::serialize(value, &mut ser).expect("serializing a Value cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => fmt_f64(x),
            _ => n.to_string(),
        },
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(cell).collect::<Vec<_>>().join(" "),
        Value::Object(_) => to_json(v).trim_end().to_string(),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Array(items) => {
            for (i, x) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), x, out);
            }
        }
        _ => out.push((prefix.to_string(), cell(v))),
    }
}

/// Rows with fixed columns plus summary fields.
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
    pub summary: Map<String, Value>,
}

pub enum Output {
    Record(Value),
    Table(Table),
}

impl Output {
    pub fn render(&self, format: Option<Format>) -> String {
        match self {
            Output::Record(v) => match format.unwrap_or(Format::Json) {
                Format::Json => to_json(v),
                Format::Csv => {
                    let mut pairs = Vec::new();
                    flatten("", v, &mut pairs);
                    let mut s = String::from("key,value\n");
                    for (k, x) in pairs {
                        s.push_str(&format!("{k},{x}\n"));
                    }
                    s
                }
            },
            Output::Table(t) => match format.unwrap_or(Format::Csv) {
                Format::Csv => {
                    let mut s = t.columns.join(",");
                    s.push('\n');
                    for row in &t.rows {
                        s.push_str(&row.iter().map(cell).collect::<Vec<_>>().join(","));
                        s.push('\n');
                    }
                    for (k, v) in &t.summary {
                        s.push_str(&format!("# {k}={}\n", cell(v)));
                    }
                    s
                }
                Format::Json => {
                    let mut obj = t.summary.clone();
                    let rows = t
                        .rows
                        .iter()
                        .map(|r| {
                            Value::Object(t.columns.iter().map(|c| c.to_string()).zip(r.iter().cloned()).collect())
                        })
                        .collect();
                    obj.insert("rows".into(), Value::Array(rows));
                    to_json(&Value::Object(obj))
                }
            },
        }
    }
}
