//! Session persistence and export.
//!
//! A session is one JSON document with the top-level keys
//! `schema_version`, `session_id`, `events`, `placements`, `edges`, `scale`,
//! `records` and `selection`. Saves are atomic (temp file + rename).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::layout::format_year_label;
use crate::model::{validate_session, CanvasState, GenerationKind, ParsedPayload, TimelineEvent};

pub const SCHEMA_VERSION: u64 = 1;

const STATE_KEYS: [&str; 7] = [
    "session_id",
    "events",
    "placements",
    "edges",
    "scale",
    "records",
    "selection",
];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: {message}")]
    Schema {
        message: String,
        violations: Vec<String>,
    },
}

impl StoreError {
    fn schema(message: impl Into<String>) -> Self {
        StoreError::Schema {
            message: message.into(),
            violations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSession {
    pub state: CanvasState,
    pub warnings: Vec<String>,
}

pub fn to_document(state: &CanvasState) -> Value {
    let mut doc = serde_json::to_value(state).expect("session state is serializable");
    doc.as_object_mut()
        .expect("state serializes to an object")
        .insert("schema_version".into(), SCHEMA_VERSION.into());
    doc
}

pub fn save_session(state: &CanvasState, path: &Path) -> Result<(), StoreError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| StoreError::Io { path, source }
    };
    let bytes = serde_json::to_vec_pretty(&to_document(state)).expect("serializable");
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "session".into());
    let tmp = dir.join(format!(
        ".{file_name}.{}.tmp",
        uuid::Uuid::new_v4().simple()
    ));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(io(&tmp)(e));
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(path)(e)
    })
}

pub fn load_session(path: &Path) -> Result<LoadedSession, StoreError> {
    let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_document_str(&text)
}

pub fn from_document_str(text: &str) -> Result<LoadedSession, StoreError> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| StoreError::schema(format!("not JSON: {e}")))?;
    let Value::Object(mut obj) = doc else {
        return Err(StoreError::schema("session document must be an object"));
    };
    match obj.remove("schema_version") {
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => return Err(StoreError::schema(format!("unsupported version {v}"))),
        None => return Err(StoreError::schema("missing schema_version")),
    }
    let mut warnings = Vec::new();
    let unknown: Vec<String> = obj
        .keys()
        .filter(|k| !STATE_KEYS.contains(&k.as_str()))
        .cloned()
        .collect();
    for key in unknown {
        obj.remove(&key);
        warnings.push(format!("ignored unknown field '{key}'"));
    }
    let state: CanvasState = serde_json::from_value(Value::Object(obj))
        .map_err(|e| StoreError::schema(e.to_string()))?;
    let violations = validate_session(&state);
    if !violations.is_empty() {
        return Err(StoreError::Schema {
            message: format!("{} invariant violation(s)", violations.len()),
            violations,
        });
    }
    Ok(LoadedSession { state, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    /// One line per event plus relationship titles.
    #[default]
    Outline,
    /// Markdown with summaries and relationship prose.
    Document,
}

fn chronological(state: &CanvasState) -> Vec<&TimelineEvent> {
    let mut events: Vec<&TimelineEvent> = state.events.values().collect();
    events.sort_by(|a, b| a.year.cmp(&b.year).then_with(|| a.name.cmp(&b.name)));
    events
}

pub fn event_line(e: &TimelineEvent) -> String {
    format!(
        "{} — {} [{}]",
        format_year_label(e.year),
        e.name,
        e.event_type
    )
}

pub fn export_timeline(state: &CanvasState, format: ExportFormat) -> String {
    let relationships: Vec<_> = state
        .records
        .iter()
        .filter(|r| r.kind == GenerationKind::Relationship)
        .collect();
    let mut out = String::new();
    match format {
        ExportFormat::Outline => {
            out.push_str("Timeline\n");
            for e in chronological(state) {
                out.push_str(&event_line(e));
                out.push('\n');
            }
            if !relationships.is_empty() {
                out.push_str("\nRelationships\n");
                for r in relationships {
                    out.push_str(&format!("- {}\n", r.title));
                }
            }
        }
        ExportFormat::Document => {
            out.push_str("# Timeline\n");
            for e in chronological(state) {
                out.push_str(&format!("\n## {}\n", event_line(e)));
                if let Some(text) = e.explanation.as_ref().or(e.short_summary.as_ref()) {
                    out.push_str(&format!("\n{}\n", text.trim()));
                }
            }
            if !relationships.is_empty() {
                out.push_str("\n# Relationships\n");
                for r in relationships {
                    out.push_str(&format!("\n## {}\n", r.title));
                    match &r.parsed {
                        Some(ParsedPayload::Relationship { text }) => {
                            out.push_str(&format!("\n{}\n", text.plain_text.trim()))
                        }
                        _ => {
                            if let Some(err) = &r.error {
                                out.push_str(&format!("\n(generation failed: {err})\n"));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
