//! Record envelope, number formatting and CSV rendering.

use serde::Serialize;
use serde_json::{json, Map, Value};

/// Version of every JSON and CSV layout this crate emits.
pub const SCHEMA_VERSION: u32 = 1;

/// Rounds to 12 significant digits.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Applies [`sig12`] to every float in a JSON tree. Integers are untouched.
pub fn round_tree(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = sig12(n.as_f64().expect("f64 number"));
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_tree).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_tree(v))).collect()),
        other => other,
    }
}

/// Builds the standard record: version fields, the resolved configuration
/// echoed verbatim, and the result rounded to 12 significant digits.
pub fn envelope(command: &str, config: Value, result: impl Serialize) -> Value {
    let result = serde_json::to_value(result).expect("results serialize");
    json!({
        "schema_version": SCHEMA_VERSION,
        "library_version": ratchet_ruin::VERSION,
        "command": command,
        "config": config,
        "result": round_tree(result),
    })
}

/// Pretty JSON with a trailing newline.
pub fn render_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

/// Formats a cell with 12 significant digits; `None` is an empty cell.
pub fn cell(x: Option<f64>) -> String {
    match x {
        Some(x) => sig12(x).to_string(),
        None => String::new(),
    }
}

/// CSV with `#` metadata lines (schema, version, configuration) ahead of
/// the header.
pub fn render_csv(command: &str, config: &Value, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let meta: Map<String, Value> = [
        ("schema_version".to_string(), json!(SCHEMA_VERSION)),
        ("library_version".to_string(), json!(ratchet_ruin::VERSION)),
        ("command".to_string(), json!(command)),
    ]
    .into_iter()
    .collect();
    out.push_str(&format!("# {}\n", Value::Object(meta)));
    out.push_str(&format!("# config {config}\n"));
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}
