use std::collections::HashSet;

use serde_json::{json, Map, Value};

use super::ParseError;
use crate::model::{EventDraft, EventType, Year};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Strip code fences and surrounding prose, find the first object with
    /// an `events` array anywhere in the text.
    #[default]
    Lenient,
    /// The whole response must be the events object.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedEvents {
    /// Sorted ascending by year, ties by name.
    pub events: Vec<EventDraft>,
    pub warnings: Vec<String>,
}

pub fn parse_events(raw: &str) -> Result<ParsedEvents, ParseError> {
    parse_events_with(raw, Strictness::Lenient)
}

pub fn parse_events_with(raw: &str, strictness: Strictness) -> Result<ParsedEvents, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::MalformedResponse("empty response".into()));
    }
    let entries = match strictness {
        Strictness::Strict => serde_json::from_str::<Value>(raw.trim())
            .ok()
            .and_then(|v| events_array(&v).cloned()),
        Strictness::Lenient => locate_events(raw).or_else(|| {
            // Typographic quotes are a common copy/paste artifact.
            let straightened: String = raw
                .chars()
                .map(|c| match c {
                    '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' => '"',
                    c => c,
                })
                .collect();
            (straightened != raw)
                .then(|| locate_events(&straightened))
                .flatten()
        }),
    };
    let entries = entries.ok_or_else(|| {
        ParseError::MalformedResponse("no object with an \"events\" array found".into())
    })?;

    let mut out = ParsedEvents::default();
    let mut seen = HashSet::new();
    for (index, entry) in entries.iter().enumerate() {
        match parse_entry(entry, &mut out.warnings) {
            Ok(draft) => {
                let key = (draft.name.to_lowercase(), draft.year);
                if seen.insert(key) {
                    out.events.push(draft);
                } else {
                    out.warnings.push(format!(
                        "duplicate event '{}' ({}) dropped",
                        draft.name, draft.year
                    ));
                }
            }
            Err(why) => out.warnings.push(format!("event #{index} skipped: {why}")),
        }
    }
    out.events
        .sort_by(|a, b| a.year.cmp(&b.year).then_with(|| a.name.cmp(&b.name)));
    Ok(out)
}

/// Renders drafts in the response schema the Events prompt asks for.
pub fn serialize_events(events: &[EventDraft]) -> String {
    let list: Vec<Value> = events
        .iter()
        .map(|e| {
            json!({
                "Event_name": e.name,
                "Year": e.year.value().to_string(),
                "Type": e.event_type.label(),
            })
        })
        .collect();
    json!({ "events": list }).to_string()
}

fn events_array(v: &Value) -> Option<&Vec<Value>> {
    let obj = v.as_object()?;
    obj.iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("events"))
        .and_then(|(_, v)| v.as_array())
}

/// Depth-first search for the first object holding an `events` array.
fn find_nested(v: &Value) -> Option<&Vec<Value>> {
    if let Some(a) = events_array(v) {
        return Some(a);
    }
    match v {
        Value::Object(m) => m.values().find_map(find_nested),
        Value::Array(a) => a.iter().find_map(find_nested),
        _ => None,
    }
}

fn strip_fences(raw: &str) -> &str {
    let Some(open) = raw.find("```") else {
        return raw;
    };
    let after = &raw[open + 3..];
    // Skip an info string such as `json`.
    let body = match after.find('\n') {
        Some(nl) => &after[nl + 1..],
        None => after,
    };
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

fn locate_events(raw: &str) -> Option<Vec<Value>> {
    let text = strip_fences(raw).trim();
    if let Ok(v) = serde_json::from_str::<Value>(text) {
        if let Some(a) = find_nested(&v) {
            return Some(a.clone());
        }
    }
    for (start, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            if let Some(a) = find_nested(&v) {
                return Some(a.clone());
            }
        }
    }
    // Fences might have hidden the payload (e.g. prose fence before it).
    if text.len() != raw.trim().len() {
        let whole = raw.trim();
        for (start, _) in whole.match_indices('{') {
            let mut stream =
                serde_json::Deserializer::from_str(&whole[start..]).into_iter::<Value>();
            if let Some(Ok(v)) = stream.next() {
                if let Some(a) = find_nested(&v) {
                    return Some(a.clone());
                }
            }
        }
    }
    None
}

fn normalized_key(k: &str) -> String {
    k.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn field<'a>(obj: &'a Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    obj.iter()
        .find(|(k, _)| names.contains(&normalized_key(k).as_str()))
        .map(|(_, v)| v)
}

fn parse_entry(entry: &Value, warnings: &mut Vec<String>) -> Result<EventDraft, String> {
    let obj = entry.as_object().ok_or("entry is not an object")?;
    let name = field(obj, &["eventname", "name", "event", "title"])
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .ok_or("missing event name")?;
    if name.chars().count() > crate::model::MAX_NAME_CHARS {
        return Err(format!(
            "name longer than {} characters",
            crate::model::MAX_NAME_CHARS
        ));
    }
    let year = match field(obj, &["year", "date"]) {
        Some(Value::String(s)) => parse_year(s, warnings)?,
        Some(Value::Number(n)) => {
            let v = n
                .as_i64()
                .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64))
                .ok_or_else(|| format!("year {n} is not an integer"))?;
            Year::new(v).map_err(|e| e.to_string())?
        }
        Some(other) => return Err(format!("year has unexpected value {other}")),
        None => return Err("missing year".into()),
    };
    if year.value() == 0 {
        warnings.push(format!(
            "'{name}' has year 0, which does not exist in the calendar"
        ));
    }
    let event_type = match field(obj, &["type", "category", "eventtype"]).and_then(Value::as_str) {
        Some(label) => EventType::from_label(label).unwrap_or_else(|| {
            warnings.push(format!(
                "unrecognized event type '{label}' for '{name}', using Other"
            ));
            EventType::Other
        }),
        None => {
            warnings.push(format!("'{name}' has no event type, using Other"));
            EventType::Other
        }
    };
    Ok(EventDraft {
        name: name.to_string(),
        year,
        event_type,
    })
}

fn parse_year(text: &str, warnings: &mut Vec<String>) -> Result<Year, String> {
    let t = text.trim().trim_matches(|c| c == '"' || c == '\'').trim();
    let upper = t.to_ascii_uppercase();
    let (digits, bc) = if let Some(rest) = upper
        .strip_suffix("BCE")
        .or_else(|| upper.strip_suffix("BC"))
        .or_else(|| upper.strip_suffix("B.C."))
    {
        warnings.push(format!("year '{text}' written with a BC suffix"));
        (rest.trim().to_string(), true)
    } else if let Some(rest) = upper
        .strip_suffix("CE")
        .or_else(|| upper.strip_suffix("AD"))
        .or_else(|| upper.strip_prefix("AD"))
    {
        (rest.trim().to_string(), false)
    } else {
        (upper, false)
    };
    let value: i64 = digits
        .parse()
        .map_err(|_| format!("year '{text}' is not a decimal integer"))?;
    let value = if bc { -value.abs() } else { value };
    Year::new(value).map_err(|e| e.to_string())
}
