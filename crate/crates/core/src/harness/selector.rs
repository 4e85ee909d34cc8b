// SPDX-License-Identifier: Apache-2.0

//! Path selectors into JSON documents.
//!
//! Syntax: dot-separated object keys, `[n]` for array indices, and
//! `[field=value]` to pick the first array element (or object member) whose
//! `field` equals `value`. A trailing `#key` yields the object key of the last
//! member selected by a key or filter step.
//!
//! ```text
//! state.session.controls.pickup
//! state.oois[catalog_id=column].attachment.kind
//! state.oois[catalog_id=column].#key
//! replies[type=Error].reason
//! ```

use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Key(String),
    Index(usize),
    Filter { field: String, value: String },
    KeyOf,
}

pub fn parse(path: &str) -> Result<Vec<Segment>, String> {
    let mut segs = Vec::new();
    let mut chars = path.chars().peekable();
    let mut key = String::new();
    let flush = |key: &mut String, segs: &mut Vec<Segment>| {
        if !key.is_empty() {
            let k = std::mem::take(key);
            segs.push(if k == "#key" { Segment::KeyOf } else { Segment::Key(k) });
        }
    };
    while let Some(c) = chars.next() {
        match c {
            '.' => flush(&mut key, &mut segs),
            '[' => {
                flush(&mut key, &mut segs);
                let mut inner = String::new();
                loop {
                    match chars.next() {
                        Some(']') => break,
                        Some(ch) => inner.push(ch),
                        None => return Err(format!("unclosed '[' in {path:?}")),
                    }
                }
                segs.push(match inner.split_once('=') {
                    Some((f, v)) => Segment::Filter { field: f.trim().to_string(), value: v.trim().to_string() },
                    None => Segment::Index(
                        inner.trim().parse().map_err(|_| format!("bad index [{inner}] in {path:?}"))?,
                    ),
                });
            }
            ']' => return Err(format!("stray ']' in {path:?}")),
            _ => key.push(c),
        }
    }
    flush(&mut key, &mut segs);
    if segs.is_empty() {
        return Err("empty selector".into());
    }
    if segs[..segs.len() - 1].contains(&Segment::KeyOf) {
        return Err(format!("#key must be last in {path:?}"));
    }
    Ok(segs)
}

fn field_matches(v: &Value, field: &str, want: &str) -> bool {
    match v.get(field) {
        Some(Value::String(s)) => s == want,
        // compares the JSON text, so `[count=3]` and `[on=true]` match
        #[allow(clippy::cmp_owned)]
        Some(other) => other.to_string() == want,
        None => false,
    }
}

/// Resolves `path` in `doc`; `Ok(None)` means the path leads nowhere.
pub fn select(doc: &Value, path: &str) -> Result<Option<Value>, String> {
    let segs = parse(path)?;
    let mut cur = doc;
    let mut last_key: Option<String> = None;
    for seg in &segs {
        let next = match seg {
            Segment::Key(k) => {
                last_key = Some(k.clone());
                cur.get(k.as_str())
            }
            Segment::Index(i) => cur.get(*i),
            Segment::Filter { field, value } => match cur {
                Value::Array(items) => items.iter().find(|v| field_matches(v, field, value)),
                Value::Object(map) => map.iter().find(|(_, v)| field_matches(v, field, value)).map(|(k, v)| {
                    last_key = Some(k.clone());
                    v
                }),
                _ => None,
            },
            Segment::KeyOf => {
                return Ok(last_key.map(|k| match k.parse::<u64>() {
                    Ok(n) => Value::from(n),
                    Err(_) => Value::String(k),
                }));
            }
        };
        match next {
            Some(v) => cur = v,
            None => return Ok(None),
        }
    }
    Ok(Some(cur.clone()))
}

/// Structural equality that treats `1` and `1.0` as equal.
pub fn json_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| json_eq(p, q)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| json_eq(v, w)))
        }
        _ => a == b,
    }
}

/// Numeric closeness, element-wise for arrays and objects.
pub fn json_approx(a: &Value, b: &Value, tol: f64) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => match (x.as_f64(), y.as_f64()) {
            (Some(p), Some(q)) => (p - q).abs() <= tol,
            _ => false,
        },
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| json_approx(p, q, tol))
        }
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| json_approx(v, w, tol)))
        }
        _ => a == b,
    }
}
