//! Structured-output extraction for `{"reasoning", "answer", "confidence_level"}`
//! completions.
//!
//! Stages, first success wins:
//! 1. the whole (trimmed) text as a JSON object;
//! 2. the first fenced code block as a JSON object;
//! 3. each balanced `{...}` substring, left to right, as a JSON object;
//! 4. regex extraction of a quoted or bare `"answer":` value.
//!
//! An object only counts if it carries a non-empty `answer`. Confidence outside
//! `[0, 1]` or unparseable is reported as absent.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;

use crate::error::ParseFailed;

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredFields {
    pub reasoning: String,
    pub answer: String,
    pub confidence: Option<f64>,
}

pub fn parse_structured_response(text: &str) -> Result<StructuredFields, ParseFailed> {
    from_json_text(text.trim())
        .or_else(|| first_fenced_block(text).and_then(from_json_text))
        .or_else(|| balanced_objects(text).find_map(from_json_text))
        .or_else(|| from_field_regex(text))
        .ok_or_else(|| ParseFailed {
            text: text.to_string(),
        })
}

fn from_json_text(candidate: &str) -> Option<StructuredFields> {
    match serde_json::from_str::<Value>(candidate.trim()).ok()? {
        Value::Object(map) => {
            let answer = value_text(map.get("answer")?)?;
            if answer.is_empty() {
                return None;
            }
            let reasoning = map.get("reasoning").and_then(value_text).unwrap_or_default();
            let confidence = map
                .get("confidence_level")
                .or_else(|| map.get("confidence"))
                .and_then(confidence_value);
            Some(StructuredFields {
                reasoning,
                answer,
                confidence,
            })
        }
        _ => None,
    }
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        other => Some(other.to_string()),
    }
}

fn confidence_value(v: &Value) -> Option<f64> {
    let c = match v {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse::<f64>().ok()?,
        _ => return None,
    };
    (0.0..=1.0).contains(&c).then_some(c)
}

fn first_fenced_block(text: &str) -> Option<&str> {
    static FENCE: OnceLock<Regex> = OnceLock::new();
    let re = FENCE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z0-9_+-]*[ \t]*\r?\n(.*?)```").unwrap());
    re.captures(text).map(|c| c.get(1).unwrap().as_str())
}

/// Balanced `{...}` substrings in order of their opening brace. Braces inside
/// JSON string literals are ignored.
fn balanced_objects(text: &str) -> impl Iterator<Item = &str> {
    let bytes = text.as_bytes();
    bytes
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'{')
        .filter_map(move |(start, _)| {
            let mut depth = 0usize;
            let mut in_string = false;
            let mut escaped = false;
            for (i, &b) in bytes.iter().enumerate().skip(start) {
                if in_string {
                    match b {
                        _ if escaped => escaped = false,
                        b'\\' => escaped = true,
                        b'"' => in_string = false,
                        _ => {}
                    }
                    continue;
                }
                match b {
                    b'"' => in_string = true,
                    b'{' => depth += 1,
                    b'}' => {
                        depth -= 1;
                        if depth == 0 {
                            return Some(&text[start..=i]);
                        }
                    }
                    _ => {}
                }
            }
            None
        })
}

fn field_regex(name: &str) -> Regex {
    Regex::new(&format!(
        r#"(?i)"{name}"\s*:\s*("(?:[^"\\]|\\.)*"|[^,}}\s][^,}}\n]*)"#
    ))
    .unwrap()
}

fn field_value(re: &Regex, text: &str) -> Option<String> {
    let raw = re.captures(text)?.get(1)?.as_str().trim();
    if raw.starts_with('"') {
        serde_json::from_str::<String>(raw)
            .ok()
            .or_else(|| Some(raw.trim_matches('"').to_string()))
            .map(|s| s.trim().to_string())
    } else if raw == "null" {
        None
    } else {
        Some(raw.to_string())
    }
}

fn from_field_regex(text: &str) -> Option<StructuredFields> {
    static RES: OnceLock<[Regex; 3]> = OnceLock::new();
    let [answer_re, reasoning_re, confidence_re] = RES.get_or_init(|| {
        [
            field_regex("answer"),
            field_regex("reasoning"),
            field_regex("confidence_level"),
        ]
    });
    let answer = field_value(answer_re, text).filter(|a| !a.is_empty())?;
    let reasoning = field_value(reasoning_re, text).unwrap_or_default();
    let confidence = field_value(confidence_re, text)
        .and_then(|c| c.parse::<f64>().ok())
        .filter(|c| (0.0..=1.0).contains(c));
    Some(StructuredFields {
        reasoning,
        answer,
        confidence,
    })
}
