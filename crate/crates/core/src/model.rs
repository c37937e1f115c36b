//! Shared domain types for a timeline exploration session.
//!
//! Everything here is a plain value type. Mutation helpers on [`CanvasState`]
//! keep referential integrity (deleting an event drops its placement, incident
//! edges and selection entry); geometry is recomputed by [`crate::layout`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest event name we accept.
pub const MAX_NAME_CHARS: usize = 200;
/// Longest explanation the Explain prompt asks the model for.
pub const MAX_EXPLANATION_CHARS: usize = 3000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("year {0} is outside the supported range of +/-{max}", max = Year::MAX_ABS)]
    YearOutOfRange(i64),
    #[error("event name must be nonempty")]
    EmptyName,
    #[error("event name exceeds {MAX_NAME_CHARS} characters")]
    NameTooLong,
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new() -> Self {
                Self(uuid::Uuid::new_v4().simple().to_string())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl Default for $name {
            fn default() -> Self {
                Self::new()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(
    /// Identifies a session.
    SessionId
);
id_type!(
    /// Identifies an event node within a session.
    EventId
);
id_type!(EdgeId);
id_type!(
    /// Identifies a [`GenerationRecord`].
    RecordId
);

/// Signed calendar year. Negative values are BC.
///
/// Year 0 does not exist in the proleptic calendar but models occasionally
/// emit it; it is accepted and flagged by the parsers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Year(i32);

impl Year {
    pub const MAX_ABS: i32 = 100_000;

    pub fn new(value: i64) -> Result<Self, ModelError> {
        if value.unsigned_abs() > Self::MAX_ABS as u64 {
            return Err(ModelError::YearOutOfRange(value));
        }
        Ok(Self(value as i32))
    }

    pub fn value(self) -> i32 {
        self.0
    }
}

impl TryFrom<i64> for Year {
    type Error = ModelError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Year::new(value)
    }
}

impl From<Year> for i64 {
    fn from(y: Year) -> Self {
        y.0 as i64
    }
}

impl fmt::Display for Year {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The closed set of event categories shown in the legend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventType {
    Theory,
    Discovery,
    Invention,
    Politics,
    Art,
    Economics,
    Other,
}

impl EventType {
    pub const ALL: [EventType; 7] = [
        EventType::Theory,
        EventType::Discovery,
        EventType::Invention,
        EventType::Politics,
        EventType::Art,
        EventType::Economics,
        EventType::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EventType::Theory => "Theory",
            EventType::Discovery => "Discovery",
            EventType::Invention => "Invention",
            EventType::Politics => "Politics",
            EventType::Art => "Art",
            EventType::Economics => "Economics",
            EventType::Other => "Other",
        }
    }

    /// Exact (case-insensitive) label match.
    pub fn from_label(label: &str) -> Option<Self> {
        let label = label.trim();
        Self::ALL
            .into_iter()
            .find(|t| t.label().eq_ignore_ascii_case(label))
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for EventType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_label(s).ok_or_else(|| format!("unknown event type '{s}'"))
    }
}

/// Where an event came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Generation { record: RecordId },
    UserPlaced,
}

/// An event as parsed from a model response, before it is placed in a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventDraft {
    pub name: String,
    pub year: Year,
    pub event_type: EventType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub id: EventId,
    pub name: String,
    pub year: Year,
    pub event_type: EventType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    pub origin: Origin,
}

impl TimelineEvent {
    pub fn from_draft(draft: EventDraft, origin: Origin) -> Result<Self, ModelError> {
        let name = draft.name.trim().to_string();
        if name.is_empty() {
            return Err(ModelError::EmptyName);
        }
        if name.chars().count() > MAX_NAME_CHARS {
            return Err(ModelError::NameTooLong);
        }
        Ok(Self {
            id: EventId::new(),
            name,
            year: draft.year,
            event_type: draft.event_type,
            short_summary: None,
            explanation: None,
            origin,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// Directed: expanded source node to each event generated from it.
    Provenance,
    /// Undirected: drawn between events whose connection was explained.
    Relationship,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub kind: EdgeKind,
    pub from_node: EventId,
    pub to_node: EventId,
    pub record: RecordId,
}

impl Edge {
    pub fn touches(&self, id: &EventId) -> bool {
        &self.from_node == id || &self.to_node == id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePlacement {
    pub event_id: EventId,
    pub x: f64,
    pub y: f64,
    /// Set after a manual drag; pinned nodes are never re-laid out.
    pub pinned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineScale {
    pub min_year: Year,
    pub max_year: Year,
    pub pixels_per_year: f64,
    pub zoom: f64,
}

impl TimelineScale {
    pub fn contains(&self, year: Year) -> bool {
        self.min_year <= year && year <= self.max_year
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GenerationKind {
    Events,
    Explain,
    Questions,
    Relationship,
    Image,
}

impl GenerationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GenerationKind::Events => "Events",
            GenerationKind::Explain => "Explain",
            GenerationKind::Questions => "Questions",
            GenerationKind::Relationship => "Relationship",
            GenerationKind::Image => "Image",
        }
    }

    /// Side panel tab the record is listed under, if any.
    pub fn tab(self) -> Option<PanelTab> {
        match self {
            GenerationKind::Explain | GenerationKind::Questions | GenerationKind::Image => {
                Some(PanelTab::Descriptions)
            }
            GenerationKind::Relationship => Some(PanelTab::Relationships),
            GenerationKind::Events => None,
        }
    }
}

impl fmt::Display for GenerationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PanelTab {
    Descriptions,
    Relationships,
}

/// Character offset range (Unicode scalar values, end exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub title: String,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Anchor>,
}

/// One resolved (or unresolved) `=display@Event Name=` reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpan {
    /// Char offsets into `RelationshipText::plain_text`.
    pub start: usize,
    pub end: usize,
    pub display_text: String,
    /// The event name exactly as written between `@` and the closing `=`.
    pub event_name: String,
    /// `None` when no known event matched.
    pub event: Option<EventId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelationshipText {
    pub plain_text: String,
    pub spans: Vec<EventSpan>,
}

impl RelationshipText {
    /// Reinserts the `=display@name=` markers at each span.
    pub fn to_markup(&self) -> String {
        let chars: Vec<char> = self.plain_text.chars().collect();
        let mut out = String::with_capacity(self.plain_text.len() + self.spans.len() * 16);
        let mut cursor = 0;
        for span in &self.spans {
            out.extend(&chars[cursor..span.start]);
            out.push('=');
            out.extend(&chars[span.start..span.end]);
            out.push('@');
            out.push_str(&span.event_name);
            out.push('=');
            cursor = span.end;
        }
        out.extend(&chars[cursor..]);
        out
    }

    pub fn resolved_events(&self) -> impl Iterator<Item = &EventId> {
        self.spans.iter().filter_map(|s| s.event.as_ref())
    }
}

/// Kind-specific parse result stored on a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ParsedPayload {
    Events { events: Vec<EventDraft> },
    Explain { text: String },
    Questions { questions: Vec<String> },
    Relationship { text: RelationshipText },
    Image { locator: String },
}

impl ParsedPayload {
    pub fn kind(&self) -> GenerationKind {
        match self {
            ParsedPayload::Events { .. } => GenerationKind::Events,
            ParsedPayload::Explain { .. } => GenerationKind::Explain,
            ParsedPayload::Questions { .. } => GenerationKind::Questions,
            ParsedPayload::Relationship { .. } => GenerationKind::Relationship,
            ParsedPayload::Image { .. } => GenerationKind::Image,
        }
    }
}

/// One model interaction and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: RecordId,
    /// Position in the session's append-only record log, starting at 1.
    #[serde(default)]
    pub seq: u64,
    pub kind: GenerationKind,
    pub topic: String,
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subevents: Option<Vec<String>>,
    pub raw_output: String,
    /// Absent only when the generation failed (`error` is set).
    pub parsed: Option<ParsedPayload>,
    #[serde(default)]
    pub citations: Vec<Citation>,
    pub title: String,
    pub created_at: DateTime<Utc>,
    pub latency_ms: u64,
    /// Events this record refers to (generated, explained or related).
    #[serde(default)]
    pub event_ids: Vec<EventId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

impl GenerationRecord {
    pub fn new(kind: GenerationKind, topic: &str, context: &str, title: String) -> Self {
        Self {
            id: RecordId::new(),
            seq: 0,
            kind,
            topic: topic.to_string(),
            context: context.to_string(),
            subevents: None,
            raw_output: String::new(),
            parsed: None,
            citations: Vec::new(),
            title,
            created_at: Utc::now(),
            latency_ms: 0,
            event_ids: Vec::new(),
            error: None,
            warnings: Vec::new(),
            tags: BTreeMap::new(),
        }
    }
}

/// The mutable exploration surface of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanvasState {
    pub session_id: SessionId,
    pub events: BTreeMap<EventId, TimelineEvent>,
    pub placements: BTreeMap<EventId, NodePlacement>,
    pub edges: Vec<Edge>,
    /// `None` while the session has no events.
    pub scale: Option<TimelineScale>,
    pub records: Vec<GenerationRecord>,
    pub selection: BTreeSet<EventId>,
}

impl CanvasState {
    pub fn new(session_id: SessionId) -> Self {
        Self {
            session_id,
            events: BTreeMap::new(),
            placements: BTreeMap::new(),
            edges: Vec::new(),
            scale: None,
            records: Vec::new(),
            selection: BTreeSet::new(),
        }
    }

    /// Inserts an event with a provisional placement; call
    /// [`crate::layout::relayout`] afterwards to position it.
    pub fn insert_event(&mut self, event: TimelineEvent) {
        let id = event.id.clone();
        self.placements.insert(
            id.clone(),
            NodePlacement {
                event_id: id.clone(),
                x: 0.0,
                y: 0.0,
                pinned: false,
            },
        );
        self.events.insert(id, event);
    }

    /// Removes an event together with its placement, incident edges and
    /// selection entry. Returns the removed event.
    pub fn remove_event(&mut self, id: &EventId) -> Option<TimelineEvent> {
        let event = self.events.remove(id)?;
        self.placements.remove(id);
        self.edges.retain(|e| !e.touches(id));
        self.selection.remove(id);
        Some(event)
    }

    /// Appends a record, assigning the next sequence number.
    pub fn append_record(&mut self, mut record: GenerationRecord) -> &GenerationRecord {
        record.seq = self.records.last().map_or(1, |r| r.seq + 1);
        self.records.push(record);
        self.records.last().expect("just pushed")
    }

    pub fn record(&self, id: &RecordId) -> Option<&GenerationRecord> {
        self.records.iter().find(|r| &r.id == id)
    }

    /// Context of the most recent record, if any.
    pub fn last_context(&self) -> Option<&str> {
        self.records
            .iter()
            .rev()
            .map(|r| r.context.as_str())
            .find(|c| !c.trim().is_empty())
    }

    pub fn find_event_by_name(&self, name: &str) -> Option<&TimelineEvent> {
        let name = name.trim();
        self.events
            .values()
            .find(|e| e.name.trim().eq_ignore_ascii_case(name))
    }
}

/// Checks every invariant of the session and describes each violation.
/// An empty result means the session is consistent.
pub fn validate_session(state: &CanvasState) -> Vec<String> {
    let mut out = Vec::new();

    for (key, event) in &state.events {
        if &event.id != key {
            out.push(format!("event stored under key {key} has id {}", event.id));
        }
        let name_len = event.name.trim().chars().count();
        if name_len == 0 {
            out.push(format!("event {key} has an empty name"));
        } else if event.name.chars().count() > MAX_NAME_CHARS {
            out.push(format!(
                "event {key} name exceeds {MAX_NAME_CHARS} characters"
            ));
        }
        if let Some(expl) = &event.explanation {
            let n = expl.chars().count();
            if n > MAX_EXPLANATION_CHARS {
                out.push(format!(
                    "event {key} explanation has {n} characters, exceeding the {MAX_EXPLANATION_CHARS}-character bound"
                ));
            }
        }
        if let Origin::Generation { record } = &event.origin {
            if state.record(record).is_none() {
                out.push(format!(
                    "event {key} origin references unknown record {record}"
                ));
            }
        }
        if !state.placements.contains_key(key) {
            out.push(format!("event {key} has no placement"));
        }
    }

    for (key, placement) in &state.placements {
        if &placement.event_id != key {
            out.push(format!(
                "placement stored under key {key} refers to {}",
                placement.event_id
            ));
        }
        let Some(event) = state.events.get(key) else {
            out.push(format!("placement {key} references a missing event"));
            continue;
        };
        if !placement.x.is_finite() || !placement.y.is_finite() {
            out.push(format!("placement {key} has non-finite coordinates"));
            continue;
        }
        if !placement.pinned {
            if let Some(scale) = &state.scale {
                let expected = crate::layout::year_to_x(scale, event.year);
                if (placement.x - expected).abs() > 1e-6 * expected.abs().max(1.0) {
                    out.push(format!(
                        "unpinned placement {key} at x={} but its year maps to x={expected}",
                        placement.x
                    ));
                }
            }
        }
    }

    match &state.scale {
        None if !state.events.is_empty() => {
            out.push("session has events but no timeline scale".to_string());
        }
        None => {}
        Some(scale) => {
            if !(scale.pixels_per_year > 0.0 && scale.pixels_per_year.is_finite()) {
                out.push(format!(
                    "scale pixels_per_year must be positive, got {}",
                    scale.pixels_per_year
                ));
            }
            if !(scale.zoom > 0.0 && scale.zoom.is_finite()) {
                out.push(format!("scale zoom must be positive, got {}", scale.zoom));
            }
            if scale.min_year > scale.max_year {
                out.push(format!(
                    "scale range [{}, {}] is inverted",
                    scale.min_year, scale.max_year
                ));
            }
            for event in state.events.values() {
                if !scale.contains(event.year) {
                    out.push(format!(
                        "event {} year {} lies outside the timeline range [{}, {}]",
                        event.id, event.year, scale.min_year, scale.max_year
                    ));
                }
            }
        }
    }

    let mut edge_ids = BTreeSet::new();
    for edge in &state.edges {
        if !edge_ids.insert(&edge.id) {
            out.push(format!("duplicate edge id {}", edge.id));
        }
        for end in [&edge.from_node, &edge.to_node] {
            if !state.events.contains_key(end) {
                out.push(format!("edge {} references missing node {end}", edge.id));
            }
        }
        if state.record(&edge.record).is_none() {
            out.push(format!(
                "edge {} references unknown record {}",
                edge.id, edge.record
            ));
        }
    }

    let mut record_ids = BTreeSet::new();
    let mut last_seq = 0;
    for record in &state.records {
        let rid = &record.id;
        if !record_ids.insert(rid) {
            out.push(format!("duplicate record id {rid}"));
        }
        if record.seq <= last_seq {
            out.push(format!(
                "record {rid} has sequence {} after {last_seq}; the log must be append-only",
                record.seq
            ));
        }
        last_seq = record.seq;
        if record.title.trim().is_empty() {
            out.push(format!("record {rid} has an empty title"));
        }
        match &record.parsed {
            Some(p) if p.kind() != record.kind => out.push(format!(
                "record {rid} of kind {} carries a {} payload",
                record.kind,
                p.kind()
            )),
            None if record.error.is_none() => {
                out.push(format!("record {rid} has neither a payload nor an error"))
            }
            _ => {}
        }
        if let Some(ParsedPayload::Relationship { text }) = &record.parsed {
            let len = text.plain_text.chars().count();
            let mut prev_end = 0;
            for span in &text.spans {
                if span.start < prev_end || span.start > span.end || span.end > len {
                    out.push(format!(
                        "record {rid} has a misplaced span [{}, {})",
                        span.start, span.end
                    ));
                }
                prev_end = span.end;
            }
        }
        let prose_len = record.raw_output.chars().count();
        for citation in &record.citations {
            if let Some(a) = citation.anchor {
                if a.start > a.end || a.end > prose_len {
                    out.push(format!(
                        "record {rid} citation '{}' anchor [{}, {}) exceeds prose length {prose_len}",
                        citation.title, a.start, a.end
                    ));
                }
            }
        }
    }

    for id in &state.selection {
        if !state.events.contains_key(id) {
            out.push(format!("selection references missing node {id}"));
        }
    }

    out
}
