//! Prompt rendering and reply parsing.

use std::fmt::Write;

use serde_json::Value as Json;

use crate::catalog::{AttributeSpec, Dtype, Segment, Value};

fn describe(a: &AttributeSpec) -> String {
    format!("- {} ({}): {}", a.name, a.dtype, a.description)
}

pub fn extract_prompt(attr: &AttributeSpec, segments: &[&Segment]) -> String {
    let mut p = String::from("Extract one attribute value from the passages below.\n");
    let _ = writeln!(p, "Attribute:\n{}", describe(attr));
    p.push_str("Passages:\n");
    for (i, s) in segments.iter().enumerate() {
        let _ = writeln!(p, "[{}] {}", i + 1, s.text.trim());
    }
    let _ = write!(
        p,
        "Reply with a JSON object {{\"{}\": value}}. Use null if the passages do not state it. \
         Give a single value, never a list.",
        attr.name
    );
    p
}

pub fn sample_prompt(attrs: &[AttributeSpec], document: &str) -> String {
    let mut p = String::from("Extract the following attributes from the document.\nAttributes:\n");
    for a in attrs {
        let _ = writeln!(p, "{}", describe(a));
    }
    let _ = write!(
        p,
        "Document:\n{document}\nReply with a JSON object mapping each attribute name to \
         {{\"value\": v, \"evidence\": \"exact sentence stating it\"}}, or null if absent."
    );
    p
}

pub fn synthesize_prompt(attr: &AttributeSpec, n: usize) -> String {
    format!(
        "Write {n} short, varied passages of the kind a document would use to state this attribute:\n{}\n\
         Reply with a JSON object {{\"exemplars\": [\"...\", ...]}}.",
        describe(attr)
    )
}

/// The outermost JSON object in a reply, tolerating code fences and prose.
pub fn reply_object(text: &str) -> Option<serde_json::Map<String, Json>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str(&text[start..=end]).ok()? {
        Json::Object(m) => Some(m),
        _ => None,
    }
}

pub fn field<'a>(obj: &'a serde_json::Map<String, Json>, name: &str) -> Option<&'a Json> {
    obj.get(name)
        .or_else(|| obj.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v))
}

/// Converts a JSON scalar to a typed value. `None` means the reply was not a
/// single value of the right type (lists, objects, unparseable numbers).
pub fn typed_value(v: &Json, dtype: Dtype) -> Option<Value> {
    match (v, dtype) {
        (Json::Null, _) => Some(Value::Null),
        (Json::Number(n), Dtype::Number) => n.as_f64().map(Value::Number),
        (Json::String(s), Dtype::Number) => {
            let cleaned: String = s.trim().chars().filter(|c| *c != ',').collect();
            cleaned.parse::<f64>().ok().filter(|x| x.is_finite()).map(Value::Number)
        }
        (Json::String(s), _) => Some(Value::Text(s.clone())),
        (Json::Number(n), _) => Some(Value::Text(n.to_string())),
        (Json::Bool(_), Dtype::Number) => None,
        (Json::Bool(b), _) => Some(Value::Text(b.to_string())),
        _ => None,
    }
}

/// Value from an extraction reply: `(value, warning)`.
pub fn parse_extract_reply(text: &str, attr: &AttributeSpec) -> (Value, bool) {
    let Some(obj) = reply_object(text) else {
        return (Value::Null, true);
    };
    let Some(v) = field(&obj, &attr.name) else {
        return (Value::Null, true);
    };
    // Accept the sampling shape as well.
    let v = match v {
        Json::Object(inner) => match inner.get("value") {
            Some(x) => x,
            None => return (Value::Null, true),
        },
        other => other,
    };
    match typed_value(v, attr.dtype) {
        Some(val) => (val, false),
        None => (Value::Null, true),
    }
}

/// `(value, evidence, warning)` for one attribute of a sampling reply.
pub fn parse_sample_field(
    obj: &serde_json::Map<String, Json>,
    attr: &AttributeSpec,
) -> (Value, Option<String>, bool) {
    match field(obj, &attr.name) {
        None | Some(Json::Null) => (Value::Null, None, false),
        Some(Json::Object(inner)) => {
            let evidence = inner.get("evidence").and_then(Json::as_str).map(str::to_string);
            match inner.get("value").map(|v| typed_value(v, attr.dtype)) {
                Some(Some(v)) => (v, evidence, false),
                _ => (Value::Null, None, true),
            }
        }
        Some(other) => match typed_value(other, attr.dtype) {
            Some(v) => (v, None, false),
            None => (Value::Null, None, true),
        },
    }
}

pub fn parse_exemplars(text: &str) -> Option<Vec<String>> {
    let obj = reply_object(text)?;
    let list = field(&obj, "exemplars")?.as_array()?;
    Some(
        list.iter()
            .filter_map(Json::as_str)
            .map(str::to_string)
            .filter(|s| !s.trim().is_empty())
            .collect(),
    )
}
