//! Structured output and the error classes that pick the exit code.

use std::fmt;
use std::io::Write;

use serde_json::{Map, Value};

/// Bad invocation or unreadable input: exit 2.
#[derive(Debug)]
pub struct Usage(pub String);

/// Well-formed input that fails a check: exit 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}
impl std::error::Error for Invalid {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

pub const EXIT_INVALID: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INTERNAL: u8 = 70;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        EXIT_USAGE
    } else if err.downcast_ref::<Invalid>().is_some() {
        EXIT_INVALID
    } else {
        EXIT_INTERNAL
    }
}

/// Prints records either as pretty JSON or as `key value` lines, nested keys
/// joined with dots.
#[derive(Debug, Clone, Copy)]
pub struct Out {
    pub json: bool,
}

impl Out {
    pub fn record(&self, value: Value) {
        if self.json {
            emit(&format!("{}\n", serde_json::to_string_pretty(&value).expect("json value serializes")));
        } else {
            let mut lines = Vec::new();
            flatten("", &value, &mut lines);
            let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            let text: String = lines.into_iter().map(|(k, v)| format!("{k:<width$} {v}\n")).collect();
            emit(&text);
        }
    }

    /// Raw text in text mode, `value` in JSON mode.
    pub fn either(&self, text: &str, value: impl FnOnce() -> String) {
        if self.json {
            emit(&format!("{}\n", value()));
        } else {
            emit(text);
        }
    }
}

/// A reader that closed the pipe early (`| head`) has seen all it wants.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|()| out.flush());
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match value {
        Value::Object(map) => flatten_map(prefix, map, out),
        Value::Array(items) if items.iter().all(|v| !v.is_object() && !v.is_array()) => {
            let joined: Vec<String> = items.iter().map(scalar).collect();
            out.push((prefix.to_string(), joined.join(",")));
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), v, out);
            }
        }
        v => out.push((prefix.to_string(), scalar(v))),
    }
}

fn flatten_map(prefix: &str, map: &Map<String, Value>, out: &mut Vec<(String, String)>) {
    for (k, v) in map {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        flatten(&key, v, out);
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        v => v.to_string(),
    }
}
