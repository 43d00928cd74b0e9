//! Inter-agent JSON protocol.
//!
//! ```text
//! PLAN     {"assignments": {<ticker>: [<KIND>...]}, "rationale": str}
//! SIGNAL   {"stance": "BULLISH|BEARISH|NEUTRAL", "confidence": num, "rationale": str, "key_evidence": [str]}
//! DECISION {"action": "BUY|SELL|HOLD", "quantity": int|null, "confidence": num, "rationale": str}
//! ```
//!
//! Parsing is strict first. If that fails, a single repair pass extracts the
//! first well-formed object from surrounding prose, normalizes enum case and
//! clamps numeric ranges. Anything still invalid is a [`ParseFailure`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Action, AnalystKind, Stance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SchemaId {
    Plan,
    Signal,
    Decision,
}

impl SchemaId {
    /// The schema line embedded in prompts and repair requests.
    pub fn describe(self) -> &'static str {
        match self {
            SchemaId::Plan => r#"{"assignments": {"<TICKER>": ["TECHNICAL"|"FUNDAMENTAL"|"INSIDER"|"MEDIA", ...]}, "rationale": "<string>"}"#,
            SchemaId::Signal => r#"{"stance": "BULLISH"|"BEARISH"|"NEUTRAL", "confidence": <number 0..1>, "rationale": "<string>", "key_evidence": ["<string>", ...]}"#,
            SchemaId::Decision => r#"{"action": "BUY"|"SELL"|"HOLD", "quantity": <integer>|null, "confidence": <number 0..1>, "rationale": "<string>"}"#,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Plan { assignments: BTreeMap<String, BTreeSet<AnalystKind>>, rationale: String },
    Signal { stance: Stance, confidence: f64, rationale: String, key_evidence: Vec<String> },
    Decision { action: Action, quantity: Option<u64>, confidence: f64, rationale: String },
}

/// A successful parse plus the repairs it needed (empty when strict).
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub payload: Payload,
    pub repairs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub reason: String,
}

impl ParseFailure {
    fn new(reason: impl Into<String>) -> Self {
        Self { reason: reason.into() }
    }
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.reason)
    }
}

impl std::error::Error for ParseFailure {}

pub fn parse_structured(raw: &str, schema: SchemaId) -> Result<Parsed, ParseFailure> {
    let direct = serde_json::from_str::<Value>(raw.trim()).ok().filter(Value::is_object);
    if let Some(v) = &direct {
        let mut fixes = Fixes::Strict;
        if let Ok(payload) = interpret(v, schema, &mut fixes) {
            return Ok(Parsed { payload, repairs: Vec::new() });
        }
    }

    let mut repairs = Vec::new();
    let value = match direct {
        Some(v) => v,
        None => {
            let v = extract_first_object(raw)?;
            repairs.push("extracted JSON object from surrounding text".to_string());
            v
        }
    };
    let mut fixes = Fixes::Repair(&mut repairs);
    let payload = interpret(&value, schema, &mut fixes)?;
    Ok(Parsed { payload, repairs })
}

enum Fixes<'a> {
    Strict,
    Repair(&'a mut Vec<String>),
}

impl Fixes<'_> {
    /// Record a repair, or fail when parsing strictly.
    fn fix(&mut self, what: impl Into<String>) -> Result<(), ParseFailure> {
        match self {
            Fixes::Strict => Err(ParseFailure::new(what)),
            Fixes::Repair(log) => {
                log.push(what.into());
                Ok(())
            }
        }
    }
}

fn obj(v: &Value) -> Result<&Map<String, Value>, ParseFailure> {
    v.as_object().ok_or_else(|| ParseFailure::new("payload is not a JSON object"))
}

fn enum_field<T>(
    o: &Map<String, Value>,
    key: &str,
    parse: impl Fn(&str) -> Option<T>,
    fixes: &mut Fixes,
) -> Result<T, ParseFailure> {
    let s = o
        .get(key)
        .ok_or_else(|| ParseFailure::new(format!("missing field {key:?}")))?
        .as_str()
        .ok_or_else(|| ParseFailure::new(format!("field {key:?} is not a string")))?;
    if let Some(v) = parse(s) {
        return Ok(v);
    }
    let norm = s.trim().to_ascii_uppercase();
    match parse(&norm) {
        Some(v) => {
            fixes.fix(format!("normalized {key} {s:?} to {norm:?}"))?;
            Ok(v)
        }
        None => Err(ParseFailure::new(format!("invalid {key} {s:?}"))),
    }
}

fn confidence(o: &Map<String, Value>, required: bool, fixes: &mut Fixes) -> Result<f64, ParseFailure> {
    let raw = match o.get("confidence") {
        None | Some(Value::Null) if !required => {
            fixes.fix("missing confidence, defaulted to 0")?;
            return Ok(0.0);
        }
        None => return Err(ParseFailure::new("missing field \"confidence\"")),
        Some(v) => v,
    };
    let c = match raw {
        Value::Number(n) => n.as_f64().ok_or_else(|| ParseFailure::new("confidence is not finite"))?,
        Value::String(s) => {
            let c: f64 = s
                .trim()
                .trim_end_matches('%')
                .parse()
                .map_err(|_| ParseFailure::new(format!("confidence {s:?} is not a number")))?;
            fixes.fix(format!("parsed confidence from string {s:?}"))?;
            if s.trim().ends_with('%') {
                c / 100.0
            } else {
                c
            }
        }
        _ => return Err(ParseFailure::new("confidence is not a number")),
    };
    if !c.is_finite() {
        return Err(ParseFailure::new("confidence is not finite"));
    }
    if !(0.0..=1.0).contains(&c) {
        let clamped = c.clamp(0.0, 1.0);
        fixes.fix(format!("clamped confidence {c} to {clamped}"))?;
        return Ok(clamped);
    }
    Ok(c)
}

fn text(o: &Map<String, Value>, key: &str, fixes: &mut Fixes) -> Result<String, ParseFailure> {
    match o.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        None | Some(Value::Null) => {
            fixes.fix(format!("missing {key}, defaulted to empty"))?;
            Ok(String::new())
        }
        Some(other) => {
            fixes.fix(format!("coerced non-string {key} to text"))?;
            Ok(other.to_string())
        }
    }
}

fn interpret(v: &Value, schema: SchemaId, fixes: &mut Fixes) -> Result<Payload, ParseFailure> {
    let o = obj(v)?;
    match schema {
        SchemaId::Signal => {
            let stance = enum_field(o, "stance", Stance::parse, fixes)?;
            let confidence = confidence(o, true, fixes)?;
            let rationale = text(o, "rationale", fixes)?;
            let key_evidence = match o.get("key_evidence") {
                Some(Value::Array(items)) => {
                    let mut out = Vec::with_capacity(items.len());
                    for it in items {
                        match it {
                            Value::String(s) => out.push(s.clone()),
                            other => {
                                fixes.fix("coerced non-string evidence item")?;
                                out.push(other.to_string());
                            }
                        }
                    }
                    out
                }
                Some(Value::String(s)) => {
                    fixes.fix("wrapped single evidence string in a list")?;
                    vec![s.clone()]
                }
                None | Some(Value::Null) => {
                    fixes.fix("missing key_evidence, defaulted to []")?;
                    Vec::new()
                }
                Some(_) => return Err(ParseFailure::new("key_evidence is not a list")),
            };
            Ok(Payload::Signal { stance, confidence, rationale, key_evidence })
        }
        SchemaId::Decision => {
            let action = enum_field(o, "action", Action::parse, fixes)?;
            let quantity = match o.get("quantity") {
                None => {
                    fixes.fix("missing quantity, treated as null")?;
                    None
                }
                Some(Value::Null) => None,
                Some(Value::Number(n)) => {
                    if let Some(q) = n.as_u64() {
                        Some(q)
                    } else {
                        let f = n.as_f64().unwrap_or(f64::NAN);
                        if !f.is_finite() {
                            return Err(ParseFailure::new("quantity is not finite"));
                        }
                        let q = f.max(0.0).floor();
                        fixes.fix(format!("coerced quantity {f} to {q}"))?;
                        Some(q.min(u64::MAX as f64) as u64)
                    }
                }
                Some(Value::String(s)) => {
                    let q = s
                        .trim()
                        .parse::<u64>()
                        .map_err(|_| ParseFailure::new(format!("quantity {s:?} is not an integer")))?;
                    fixes.fix(format!("parsed quantity from string {s:?}"))?;
                    Some(q)
                }
                Some(_) => return Err(ParseFailure::new("quantity is not an integer")),
            };
            let confidence = confidence(o, false, fixes)?;
            let rationale = text(o, "rationale", fixes)?;
            Ok(Payload::Decision { action, quantity, confidence, rationale })
        }
        SchemaId::Plan => {
            let map = match o.get("assignments") {
                Some(Value::Object(m)) => m,
                Some(_) => return Err(ParseFailure::new("assignments is not an object")),
                None if !o.is_empty() && o.values().all(|x| x.is_array() || x.is_string()) => {
                    fixes.fix("treated top-level object as assignments")?;
                    o
                }
                None => return Err(ParseFailure::new("missing field \"assignments\"")),
            };
            let mut assignments = BTreeMap::new();
            for (ticker, kinds) in map {
                let key = ticker.trim().to_ascii_uppercase();
                if &key != ticker {
                    fixes.fix(format!("normalized ticker {ticker:?}"))?;
                }
                let items: Vec<&Value> = match kinds {
                    Value::Array(a) => a.iter().collect(),
                    Value::String(_) => {
                        fixes.fix(format!("wrapped single analyst for {key} in a list"))?;
                        vec![kinds]
                    }
                    _ => return Err(ParseFailure::new(format!("analysts for {key} are not a list"))),
                };
                let mut set = BTreeSet::new();
                for k in items {
                    let s = k.as_str().ok_or_else(|| ParseFailure::new("analyst kind is not a string"))?;
                    match AnalystKind::parse(s) {
                        Some(kind) => {
                            set.insert(kind);
                        }
                        None => match AnalystKind::parse(&s.trim().to_ascii_uppercase()) {
                            Some(kind) => {
                                fixes.fix(format!("normalized analyst kind {s:?}"))?;
                                set.insert(kind);
                            }
                            None => fixes.fix(format!("dropped unknown analyst kind {s:?}"))?,
                        },
                    }
                }
                if set.is_empty() {
                    fixes.fix(format!("dropped {key} with no valid analysts"))?;
                    continue;
                }
                assignments.insert(key, set);
            }
            let rationale = text(o, "rationale", fixes)?;
            Ok(Payload::Plan { assignments, rationale })
        }
    }
}

/// First balanced `{...}` in `raw` that parses as a JSON object. Fenced
/// code blocks need no special handling since the braces are found inside.
fn extract_first_object(raw: &str) -> Result<Value, ParseFailure> {
    let mut saw_open = false;
    let mut search_from = 0;
    while let Some(rel) = raw[search_from..].find('{') {
        let start = search_from + rel;
        saw_open = true;
        if let Some(end) = balanced_end(&raw[start..]) {
            if let Ok(v) = serde_json::from_str::<Value>(&raw[start..start + end]) {
                if v.is_object() {
                    return Ok(v);
                }
            }
        }
        search_from = start + 1;
    }
    if saw_open {
        Err(ParseFailure::new("truncated or malformed JSON object"))
    } else {
        Err(ParseFailure::new("no JSON object"))
    }
}

/// Byte length of the balanced object starting at `s[0] == '{'`.
fn balanced_end(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut esc = false;
    for (i, ch) in s.char_indices() {
        if in_str {
            match ch {
                _ if esc => esc = false,
                '\\' => esc = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}
