//! Extraction of a policy object from free-form model output.

use serde_json::Value;

use super::{ActionMatrix, PolicyError, PolicyOrigin};
use crate::control::{MpcWeights, PidGains};

/// Byte ranges of balanced `{...}` spans, in order of their opening brace.
/// Braces inside JSON string literals are ignored.
fn brace_candidates(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    for start in (0..bytes.len()).filter(|&i| bytes[i] == b'{') {
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match (escaped, b) {
                    (true, _) => escaped = false,
                    (false, b'\\') => escaped = true,
                    (false, b'"') => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        out.push((start, i + 1));
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    out
}

fn number(obj: &Value, section: &str, key: &str) -> Result<f64, String> {
    match obj.get(section).and_then(|s| s.get(key)) {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| format!("{section}.{key} is not a float")),
        Some(other) => Err(format!("{section}.{key} is not numeric: {other}")),
        None => Err(format!("missing {section}.{key}")),
    }
}

fn decode(obj: &Value) -> Result<ActionMatrix, String> {
    let pid = PidGains {
        kp: number(obj, "pid", "kp")?,
        ki: number(obj, "pid", "ki")?,
        kd: number(obj, "pid", "kd")?,
    };
    let mpc = MpcWeights {
        w_l: number(obj, "mpc", "w_l")?,
        w_h: number(obj, "mpc", "w_h")?,
        w_s: number(obj, "mpc", "w_s")?,
    };
    let id = obj.get("id").and_then(Value::as_str).unwrap_or_default().to_string();
    let origin = match obj.get("origin") {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| format!("origin: {e}"))?,
        None => PolicyOrigin::Manual,
    };
    Ok(ActionMatrix { id, origin, pid, mpc })
}

/// Finds the first JSON object in `text` carrying all six parameters.
///
/// Accepts bare JSON, fenced code blocks and surrounding prose. When JSON
/// objects are present but none is a complete policy, reports
/// [`PolicyError::MalformedPolicy`] with the first object's defect.
pub fn parse_policy(text: &str) -> Result<ActionMatrix, PolicyError> {
    let mut first_defect: Option<String> = None;
    for (start, end) in brace_candidates(text) {
        let Ok(value) = serde_json::from_str::<Value>(&text[start..end]) else {
            continue;
        };
        if !value.is_object() {
            continue;
        }
        match decode(&value) {
            Ok(p) => return Ok(p),
            Err(defect) => {
                first_defect.get_or_insert(defect);
            }
        }
    }
    match first_defect {
        Some(defect) => Err(PolicyError::MalformedPolicy(defect)),
        None => Err(PolicyError::NoPolicyFound),
    }
}
