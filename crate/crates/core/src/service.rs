//! Session registry and the end-to-end generation flows.
//!
//! Each session lives behind its own mutex. Model calls run without the
//! lock held: a flow snapshots what it needs, awaits the gateway, then
//! re-locks to apply the result after checking that the nodes it depends
//! on still exist. Record sequence numbers are assigned under the lock, so
//! they give the per-session order of applied mutations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, CompletionResult, Gateway, GatewayError, PromptKey};
use crate::layout::{
    dim_mask, filter_by_type, fit_viewport, layout_snapshot, relayout, LayoutError, LayoutSnapshot,
    Screen, Viewport, DEFAULT_CANVAS_WIDTH, DIM_OPACITY, FULL_OPACITY,
};
use crate::model::{
    CanvasState, Edge, EdgeId, EdgeKind, EventId, EventType, GenerationKind, GenerationRecord,
    Origin, ParsedPayload, RecordId, SessionId, TimelineEvent, MAX_EXPLANATION_CHARS,
};
use crate::parse::{
    derive_short_summary, parse_events, parse_questions, parse_relationship_markup,
};
use crate::prompt::{
    build_events_prompt, build_explain_prompt, build_image_prompt, build_questions_prompt,
    build_relationship_prompt, PromptError, PromptParams, DEFAULT_CONTEXT,
};
use crate::store::{self, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown node {0}")]
    UnknownNode(EventId),
    #[error("unknown record {0}")]
    UnknownRecord(RecordId),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("at least 2 events are required, got {0}")]
    TooFewEvents(usize),
    #[error("session changed during generation: {0}")]
    StaleSession(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("upstream error: {0}")]
    Upstream(String),
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("request budget of {0} exhausted for this session")]
    BudgetExceeded(u32),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ServiceError {
    /// HTTP status used by the service surface.
    pub fn status_code(&self) -> u16 {
        match self {
            ServiceError::InvalidRequest(_) | ServiceError::TooFewEvents(_) => 400,
            ServiceError::UnknownSession(_)
            | ServiceError::UnknownNode(_)
            | ServiceError::UnknownRecord(_) => 404,
            ServiceError::StaleSession(_) => 409,
            ServiceError::MalformedResponse(_) => 422,
            ServiceError::BudgetExceeded(_) => 429,
            ServiceError::Upstream(_) => 502,
            ServiceError::Timeout(_) => 504,
            ServiceError::Store(StoreError::Schema { .. }) => 400,
            ServiceError::Store(StoreError::Io { .. }) => 500,
        }
    }
}

impl From<GatewayError> for ServiceError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Timeout(ms) => ServiceError::Timeout(ms),
            GatewayError::Upstream { message, .. } => ServiceError::Upstream(message),
            GatewayError::BudgetExceeded { limit } => ServiceError::BudgetExceeded(limit),
            GatewayError::InvalidRequest(m) => ServiceError::InvalidRequest(m),
            GatewayError::ImagesDisabled => {
                ServiceError::InvalidRequest("image generation is disabled".into())
            }
        }
    }
}

impl From<PromptError> for ServiceError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::TooFewEvents(n) => ServiceError::TooFewEvents(n),
            PromptError::InvalidParams(m) => ServiceError::InvalidRequest(m),
        }
    }
}

impl From<LayoutError> for ServiceError {
    fn from(e: LayoutError) -> Self {
        match e {
            LayoutError::UnknownNode(id) => ServiceError::UnknownNode(id),
            LayoutError::UnknownRecord(id) => ServiceError::UnknownRecord(id),
            other => ServiceError::InvalidRequest(other.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub canvas_width: f64,
    pub screen: Screen,
    /// Where `save` writes `<session id>.json`; saving is refused when unset.
    pub sessions_dir: Option<PathBuf>,
    pub temperature: f64,
    pub timeout_ms: u64,
    /// Copied onto every record (e.g. a study identifier for audits).
    pub record_tags: BTreeMap<String, String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            canvas_width: DEFAULT_CANVAS_WIDTH,
            screen: Screen::default(),
            sessions_dir: None,
            temperature: crate::gateway::DEFAULT_TEMPERATURE,
            timeout_ms: crate::gateway::DEFAULT_TIMEOUT_MS,
            record_tags: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventsRequest {
    #[serde(default)]
    pub topic: Option<String>,
    #[serde(default)]
    pub context: Option<String>,
    /// Node being expanded; its name is the default topic.
    #[serde(default)]
    pub source_node: Option<EventId>,
    #[serde(default)]
    pub num_of_topics: Option<u32>,
    #[serde(default)]
    pub num_of_margin: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventsOutcome {
    pub events: Vec<TimelineEvent>,
    pub edges: Vec<Edge>,
    /// The Events record; absent when nothing was generated.
    pub record: Option<GenerationRecord>,
    pub relationship: Option<GenerationRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplainRequest {
    #[serde(default)]
    pub topic: Option<String>,
    #[serde(default)]
    pub context: Option<String>,
    #[serde(default)]
    pub node: Option<EventId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOutcome {
    pub record: GenerationRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<GenerationRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionsOutcome {
    pub questions: Vec<String>,
    pub record: GenerationRecord,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipOutcome {
    pub record: GenerationRecord,
    pub edges: Vec<Edge>,
    pub warnings: Vec<String>,
}

/// Viewport plus per-node opacity for a navigation action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusView {
    pub viewport: Viewport,
    pub highlighted: BTreeSet<EventId>,
    pub opacity: BTreeMap<EventId, f64>,
}

type Slot = Arc<Mutex<CanvasState>>;

pub struct Engine {
    gateway: Arc<Gateway>,
    config: EngineConfig,
    sessions: RwLock<HashMap<SessionId, Slot>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("gateway", &self.gateway)
            .field("config", &self.config)
            .field("sessions", &self.sessions.read().len())
            .finish()
    }
}

fn effective(text: Option<&str>) -> Option<String> {
    text.map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
}

fn title(topic: &str, context: &str) -> String {
    format!("{topic} — {context}")
}

fn chronological(state: &CanvasState, ids: &BTreeSet<EventId>) -> Vec<TimelineEvent> {
    let mut events: Vec<TimelineEvent> = ids
        .iter()
        .filter_map(|id| state.events.get(id).cloned())
        .collect();
    events.sort_by(|a, b| a.year.cmp(&b.year).then_with(|| a.name.cmp(&b.name)));
    events
}

fn known_events(state: &CanvasState) -> Vec<(EventId, String)> {
    state
        .events
        .values()
        .map(|e| (e.id.clone(), e.name.clone()))
        .collect()
}

impl Engine {
    pub fn new(gateway: Arc<Gateway>, config: EngineConfig) -> Self {
        Self {
            gateway,
            config,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn create_session(&self) -> SessionId {
        let id = SessionId::new();
        self.sessions.write().insert(
            id.clone(),
            Arc::new(Mutex::new(CanvasState::new(id.clone()))),
        );
        id
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        let mut ids: Vec<SessionId> = self.sessions.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn slot(&self, id: &SessionId) -> Result<Slot, ServiceError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.clone()))
    }

    /// Snapshot of the committed session state.
    pub fn get(&self, id: &SessionId) -> Result<CanvasState, ServiceError> {
        Ok(self.slot(id)?.lock().clone())
    }

    pub fn event_ids(&self, id: &SessionId) -> Result<Vec<EventId>, ServiceError> {
        Ok(self.slot(id)?.lock().events.keys().cloned().collect())
    }

    pub fn records(&self, id: &SessionId) -> Result<Vec<GenerationRecord>, ServiceError> {
        Ok(self.slot(id)?.lock().records.clone())
    }

    fn request(&self, session: &SessionId, prompt: String, key: PromptKey) -> CompletionRequest {
        let mut req = CompletionRequest::new(prompt, key).for_session(session.clone());
        req.temperature = self.config.temperature;
        req.timeout_ms = self.config.timeout_ms;
        req
    }

    fn new_record(&self, kind: GenerationKind, topic: &str, context: &str) -> GenerationRecord {
        let mut r = GenerationRecord::new(kind, topic, context, title(topic, context));
        r.tags = self.config.record_tags.clone();
        r
    }

    /// Runs a completion and parses it, asking once more if parsing fails.
    async fn complete_parsed<T>(
        &self,
        req: &CompletionRequest,
        citations: bool,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<(CompletionResult, T), ServiceError> {
        let mut last_err = String::new();
        for attempt in 0..2 {
            let result = if citations {
                self.gateway.complete_with_citations(req).await?
            } else {
                self.gateway.complete(req).await?
            };
            match parse(&result.text) {
                Ok(v) => return Ok((result, v)),
                Err(e) => {
                    tracing::warn!(attempt, kind = req.kind.as_str(), error = %e, "unparseable response");
                    last_err = e;
                }
            }
        }
        Err(ServiceError::MalformedResponse(last_err))
    }

    pub async fn generate_events(
        &self,
        session: &SessionId,
        req: EventsRequest,
    ) -> Result<EventsOutcome, ServiceError> {
        let slot = self.slot(session)?;
        let source_name = match &req.source_node {
            Some(id) => Some(
                slot.lock()
                    .events
                    .get(id)
                    .map(|e| e.name.clone())
                    .ok_or_else(|| ServiceError::UnknownNode(id.clone()))?,
            ),
            None => None,
        };
        let topic = effective(req.topic.as_deref())
            .or(source_name)
            .ok_or_else(|| ServiceError::InvalidRequest("topic must not be empty".into()))?;
        let context =
            effective(req.context.as_deref()).unwrap_or_else(|| DEFAULT_CONTEXT.to_string());

        let mut params = PromptParams::new(topic.clone(), context.clone());
        if let Some(n) = req.num_of_topics {
            params.num_of_topics = n;
        }
        if let Some(m) = req.num_of_margin {
            params.num_of_margin = m;
        }
        let prompt = build_events_prompt(&params)?;
        let mut key = PromptKey::new(GenerationKind::Events, &topic, &context);
        key.num_of_topics = Some(params.num_of_topics);
        let creq = self.request(session, prompt, key);
        let (result, parsed) = self
            .complete_parsed(&creq, false, |t| parse_events(t).map_err(|e| e.to_string()))
            .await?;

        let mut warnings = result.warnings.clone();
        warnings.extend(parsed.warnings.iter().cloned());
        if parsed.events.is_empty() {
            warnings.push("the model returned no events; nothing was added".into());
            return Ok(EventsOutcome {
                events: Vec::new(),
                edges: Vec::new(),
                record: None,
                relationship: None,
                warnings,
            });
        }

        let (events, edges, record) = {
            let mut state = slot.lock();
            if let Some(src) = &req.source_node {
                if !state.events.contains_key(src) {
                    return Err(ServiceError::StaleSession(format!(
                        "source node {src} was deleted"
                    )));
                }
            }
            let mut record = self.new_record(GenerationKind::Events, &topic, &context);
            record.raw_output = result.text.clone();
            record.latency_ms = result.latency_ms;
            record.warnings = warnings.clone();
            record.parsed = Some(ParsedPayload::Events {
                events: parsed.events.clone(),
            });
            let mut events = Vec::with_capacity(parsed.events.len());
            for draft in parsed.events {
                match TimelineEvent::from_draft(
                    draft,
                    Origin::Generation {
                        record: record.id.clone(),
                    },
                ) {
                    Ok(e) => events.push(e),
                    Err(e) => warnings.push(format!("event skipped: {e}")),
                }
            }
            record.event_ids = events.iter().map(|e| e.id.clone()).collect();
            let mut edges = Vec::new();
            for e in &events {
                state.insert_event(e.clone());
                if let Some(src) = &req.source_node {
                    edges.push(Edge {
                        id: EdgeId::new(),
                        kind: EdgeKind::Provenance,
                        from_node: src.clone(),
                        to_node: e.id.clone(),
                        record: record.id.clone(),
                    });
                }
            }
            state.edges.extend(edges.iter().cloned());
            relayout(&mut state, self.config.canvas_width);
            let record = state.append_record(record).clone();
            (events, edges, record)
        };

        let relationship = if events.len() >= 2 {
            Some(
                self.auto_relationship(session, &slot, &topic, &context, &events)
                    .await?,
            )
        } else {
            warnings.push("fewer than 2 events generated; no relationship summary".into());
            None
        };

        Ok(EventsOutcome {
            events,
            edges,
            record: Some(record),
            relationship,
            warnings,
        })
    }

    /// Relationship summary over freshly generated events. Failures are
    /// recorded on the record instead of undoing the events.
    async fn auto_relationship(
        &self,
        session: &SessionId,
        slot: &Slot,
        topic: &str,
        context: &str,
        events: &[TimelineEvent],
    ) -> Result<GenerationRecord, ServiceError> {
        let names: Vec<String> = events.iter().map(|e| e.name.clone()).collect();
        let prompt = build_relationship_prompt(topic, context, &names)?;
        let key = PromptKey::new(GenerationKind::Relationship, topic, context)
            .with_subevents(names.clone());
        let creq = self.request(session, prompt, key);
        let outcome = self.gateway.complete(&creq).await;

        let mut state = slot.lock();
        let mut record = self.new_record(GenerationKind::Relationship, topic, context);
        record.subevents = Some(names);
        record.event_ids = events
            .iter()
            .map(|e| e.id.clone())
            .filter(|id| state.events.contains_key(id))
            .collect();
        match outcome {
            Ok(result) => {
                let markup = parse_relationship_markup(&result.text, &known_events(&state));
                record.raw_output = result.text;
                record.latency_ms = result.latency_ms;
                record.warnings = result.warnings;
                record.warnings.extend(markup.warnings);
                record.parsed = Some(ParsedPayload::Relationship { text: markup.text });
            }
            Err(e) => {
                tracing::warn!(error = %e, "relationship summary failed; events kept");
                record.error = Some(e.to_string());
            }
        }
        Ok(state.append_record(record).clone())
    }

    pub async fn explain(
        &self,
        session: &SessionId,
        req: ExplainRequest,
    ) -> Result<ExplainOutcome, ServiceError> {
        let slot = self.slot(session)?;
        let node_name = match &req.node {
            Some(id) => Some(
                slot.lock()
                    .events
                    .get(id)
                    .map(|e| e.name.clone())
                    .ok_or_else(|| ServiceError::UnknownNode(id.clone()))?,
            ),
            None => None,
        };
        let topic = effective(req.topic.as_deref())
            .or(node_name)
            .ok_or_else(|| ServiceError::InvalidRequest("topic must not be empty".into()))?;
        let context =
            effective(req.context.as_deref()).unwrap_or_else(|| DEFAULT_CONTEXT.to_string());

        let prompt = build_explain_prompt(&topic, &context)?;
        let key = PromptKey::new(GenerationKind::Explain, &topic, &context);
        let creq = self.request(session, prompt, key);
        let (result, text) = self
            .complete_parsed(&creq, true, |t| {
                let t = t.trim();
                if t.is_empty() {
                    Err("empty explanation".to_string())
                } else {
                    Ok(t.to_string())
                }
            })
            .await?;

        let mut warnings = result.warnings.clone();
        let image = if self.gateway.images_enabled() {
            match self.generate_image(session, &topic, &context, &text).await {
                Ok(r) => Some(r),
                Err(e) => {
                    warnings.push(format!("image generation failed: {e}"));
                    None
                }
            }
        } else {
            None
        };

        let mut state = slot.lock();
        if let Some(id) = &req.node {
            if !state.events.contains_key(id) {
                return Err(ServiceError::StaleSession(format!("node {id} was deleted")));
            }
        }
        let mut record = self.new_record(GenerationKind::Explain, &topic, &context);
        record.raw_output = result.text.clone();
        record.latency_ms = result.latency_ms;
        record.citations = result.citations;
        record.parsed = Some(ParsedPayload::Explain { text: text.clone() });
        if let Some(id) = &req.node {
            record.event_ids = vec![id.clone()];
            let event = state.events.get_mut(id).expect("checked above");
            let explanation: String = if text.chars().count() > MAX_EXPLANATION_CHARS {
                warnings.push(format!(
                    "explanation truncated to {MAX_EXPLANATION_CHARS} characters on the node"
                ));
                text.chars().take(MAX_EXPLANATION_CHARS).collect()
            } else {
                text.clone()
            };
            event.short_summary = Some(derive_short_summary(&explanation));
            event.explanation = Some(explanation);
        }
        record.warnings = warnings.clone();
        let record = state.append_record(record).clone();
        let image = image.map(|mut img| {
            img.event_ids = record.event_ids.clone();
            state.append_record(img).clone()
        });
        Ok(ExplainOutcome {
            record,
            image,
            warnings,
        })
    }

    async fn generate_image(
        &self,
        session: &SessionId,
        topic: &str,
        context: &str,
        description: &str,
    ) -> Result<GenerationRecord, ServiceError> {
        let prompt = build_image_prompt(topic, description)?;
        let key = PromptKey::new(GenerationKind::Image, topic, context);
        let result = self
            .gateway
            .complete(&self.request(session, prompt, key))
            .await?;
        let mut record = self.new_record(GenerationKind::Image, topic, context);
        record.raw_output = result.text.clone();
        record.latency_ms = result.latency_ms;
        record.parsed = Some(ParsedPayload::Image {
            locator: result.text.trim().to_string(),
        });
        Ok(record)
    }

    pub async fn questions(
        &self,
        session: &SessionId,
        topic: &str,
        context: Option<&str>,
    ) -> Result<QuestionsOutcome, ServiceError> {
        let slot = self.slot(session)?;
        let topic = effective(Some(topic))
            .ok_or_else(|| ServiceError::InvalidRequest("topic must not be empty".into()))?;
        let context = effective(context).unwrap_or_else(|| DEFAULT_CONTEXT.to_string());
        let prompt = build_questions_prompt(&topic, &context)?;
        let key = PromptKey::new(GenerationKind::Questions, &topic, &context);
        let creq = self.request(session, prompt, key);
        let (result, parsed) = self
            .complete_parsed(&creq, false, |t| {
                parse_questions(t).map_err(|e| e.to_string())
            })
            .await?;

        let mut warnings = result.warnings.clone();
        warnings.extend(parsed.warnings);
        let mut record = self.new_record(GenerationKind::Questions, &topic, &context);
        record.raw_output = result.text;
        record.latency_ms = result.latency_ms;
        record.warnings = warnings.clone();
        record.parsed = Some(ParsedPayload::Questions {
            questions: parsed.questions.clone(),
        });
        let record = slot.lock().append_record(record).clone();
        Ok(QuestionsOutcome {
            questions: parsed.questions,
            record,
            warnings,
        })
    }

    /// Explains a suggested question as if it had been typed as the topic.
    pub async fn answer_question(
        &self,
        session: &SessionId,
        question: &str,
        context: Option<&str>,
    ) -> Result<ExplainOutcome, ServiceError> {
        self.explain(
            session,
            ExplainRequest {
                topic: Some(question.to_string()),
                context: context.map(str::to_string),
                node: None,
            },
        )
        .await
    }

    pub async fn generate_relationship(
        &self,
        session: &SessionId,
        node_ids: &[EventId],
    ) -> Result<RelationshipOutcome, ServiceError> {
        let slot = self.slot(session)?;
        let ids: BTreeSet<EventId> = node_ids.iter().cloned().collect();
        let (events, context) = {
            let state = slot.lock();
            if let Some(missing) = ids.iter().find(|id| !state.events.contains_key(*id)) {
                return Err(ServiceError::UnknownNode(missing.clone()));
            }
            let context = state
                .last_context()
                .map(str::to_string)
                .unwrap_or_else(|| DEFAULT_CONTEXT.to_string());
            (chronological(&state, &ids), context)
        };
        if events.len() < 2 {
            return Err(ServiceError::TooFewEvents(events.len()));
        }
        let names: Vec<String> = events.iter().map(|e| e.name.clone()).collect();
        let topic = names.join(", ");
        let prompt = build_relationship_prompt(&topic, &context, &names)?;
        let key = PromptKey::new(GenerationKind::Relationship, &topic, &context)
            .with_subevents(names.clone());
        let result = self
            .gateway
            .complete(&self.request(session, prompt, key))
            .await?;

        let mut state = slot.lock();
        if let Some(gone) = events.iter().find(|e| !state.events.contains_key(&e.id)) {
            return Err(ServiceError::StaleSession(format!(
                "node {} was deleted",
                gone.id
            )));
        }
        let markup = parse_relationship_markup(&result.text, &known_events(&state));
        let mut record = self.new_record(GenerationKind::Relationship, &topic, &context);
        record.subevents = Some(names);
        record.raw_output = result.text;
        record.latency_ms = result.latency_ms;
        record.event_ids = events.iter().map(|e| e.id.clone()).collect();
        let mut warnings = result.warnings;
        warnings.extend(markup.warnings);
        record.warnings = warnings.clone();
        record.parsed = Some(ParsedPayload::Relationship { text: markup.text });
        let edges: Vec<Edge> = events
            .windows(2)
            .map(|w| Edge {
                id: EdgeId::new(),
                kind: EdgeKind::Relationship,
                from_node: w[0].id.clone(),
                to_node: w[1].id.clone(),
                record: record.id.clone(),
            })
            .collect();
        state.edges.extend(edges.iter().cloned());
        let record = state.append_record(record).clone();
        Ok(RelationshipOutcome {
            record,
            edges,
            warnings,
        })
    }

    /// Places a node by hand; it is pinned from then on.
    pub fn move_node(
        &self,
        session: &SessionId,
        id: &EventId,
        x: f64,
        y: f64,
    ) -> Result<(), ServiceError> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(ServiceError::InvalidRequest(
                "coordinates must be finite".into(),
            ));
        }
        let slot = self.slot(session)?;
        let mut state = slot.lock();
        let p = state
            .placements
            .get_mut(id)
            .ok_or_else(|| ServiceError::UnknownNode(id.clone()))?;
        p.x = x;
        p.y = y;
        p.pinned = true;
        Ok(())
    }

    pub fn delete_node(
        &self,
        session: &SessionId,
        id: &EventId,
    ) -> Result<TimelineEvent, ServiceError> {
        let slot = self.slot(session)?;
        let mut state = slot.lock();
        let removed = state
            .remove_event(id)
            .ok_or_else(|| ServiceError::UnknownNode(id.clone()))?;
        relayout(&mut state, self.config.canvas_width);
        Ok(removed)
    }

    pub fn select(&self, session: &SessionId, ids: &[EventId]) -> Result<(), ServiceError> {
        let slot = self.slot(session)?;
        let mut state = slot.lock();
        if let Some(missing) = ids.iter().find(|id| !state.events.contains_key(*id)) {
            return Err(ServiceError::UnknownNode(missing.clone()));
        }
        state.selection = ids.iter().cloned().collect();
        Ok(())
    }

    pub fn layout_snapshot(
        &self,
        session: &SessionId,
        zoom: f64,
    ) -> Result<LayoutSnapshot, ServiceError> {
        if !zoom.is_finite() || zoom <= 0.0 {
            return Err(ServiceError::InvalidRequest("zoom must be positive".into()));
        }
        let slot = self.slot(session)?;
        let state = slot.lock();
        Ok(layout_snapshot(&state, zoom, None))
    }

    /// Fits the nodes a record refers to and dims every other node.
    pub fn focus_record(
        &self,
        session: &SessionId,
        record: &RecordId,
    ) -> Result<FocusView, ServiceError> {
        let slot = self.slot(session)?;
        let state = slot.lock();
        let opacity = dim_mask(record, &state)?;
        let highlighted: BTreeSet<EventId> = opacity
            .iter()
            .filter(|(_, o)| **o == FULL_OPACITY)
            .map(|(id, _)| id.clone())
            .collect();
        let viewport = match fit_viewport(&highlighted, &state, self.config.screen) {
            Ok(v) => v,
            Err(_) => self.default_viewport(&state),
        };
        Ok(FocusView {
            viewport,
            highlighted,
            opacity,
        })
    }

    /// Centers on one node at zoom 1.0 and dims the others.
    pub fn focus_event(
        &self,
        session: &SessionId,
        id: &EventId,
    ) -> Result<FocusView, ServiceError> {
        let slot = self.slot(session)?;
        let state = slot.lock();
        let viewport = fit_viewport([id], &state, self.config.screen)?;
        Ok(FocusView {
            viewport,
            highlighted: BTreeSet::from([id.clone()]),
            opacity: highlight(&state, |e| &e.id == id),
        })
    }

    pub fn filter_type(
        &self,
        session: &SessionId,
        t: EventType,
    ) -> Result<FocusView, ServiceError> {
        let slot = self.slot(session)?;
        let state = slot.lock();
        let current = self.default_viewport(&state);
        let (highlighted, viewport) = filter_by_type(t, &state, self.config.screen, current);
        Ok(FocusView {
            viewport,
            opacity: highlight(&state, |e| highlighted.contains(&e.id)),
            highlighted,
        })
    }

    fn default_viewport(&self, state: &CanvasState) -> Viewport {
        let ids: Vec<&EventId> = state.events.keys().collect();
        fit_viewport(ids, state, self.config.screen)
            .unwrap_or_else(|_| Viewport::new(self.config.screen))
    }

    fn session_path(&self, id: &SessionId) -> Result<PathBuf, ServiceError> {
        let dir = self.config.sessions_dir.as_ref().ok_or_else(|| {
            ServiceError::InvalidRequest("no sessions directory configured".into())
        })?;
        Ok(dir.join(format!("{id}.json")))
    }

    /// Writes the session to `<sessions dir>/<id>.json`.
    pub fn save(&self, session: &SessionId) -> Result<PathBuf, ServiceError> {
        let path = self.session_path(session)?;
        self.save_to(session, &path)?;
        Ok(path)
    }

    pub fn save_to(&self, session: &SessionId, path: &Path) -> Result<(), ServiceError> {
        let slot = self.slot(session)?;
        let state = slot.lock();
        store::save_session(&state, path)?;
        Ok(())
    }

    /// Loads a session file and registers it, replacing any live session
    /// with the same id. Returns the id and load warnings.
    pub fn load_from(&self, path: &Path) -> Result<(SessionId, Vec<String>), ServiceError> {
        let loaded = store::load_session(path)?;
        let id = loaded.state.session_id.clone();
        self.sessions
            .write()
            .insert(id.clone(), Arc::new(Mutex::new(loaded.state)));
        Ok((id, loaded.warnings))
    }

    pub fn load(&self, session: &SessionId) -> Result<(SessionId, Vec<String>), ServiceError> {
        let path = self.session_path(session)?;
        if !path.exists() {
            return Err(ServiceError::UnknownSession(session.clone()));
        }
        self.load_from(&path)
    }
}

fn highlight(state: &CanvasState, keep: impl Fn(&TimelineEvent) -> bool) -> BTreeMap<EventId, f64> {
    state
        .events
        .values()
        .map(|e| {
            let o = if keep(e) { FULL_OPACITY } else { DIM_OPACITY };
            (e.id.clone(), o)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{
        Fixture, FixtureStore, MockMode, MockProvider, Provider, ProviderError, ProviderResponse,
        RetryPolicy,
    };
    use crate::layout::RenderMode;
    use crate::model::validate_session;
    use async_trait::async_trait;
    use std::time::Duration;

    fn engine_with(store: FixtureStore, mode: MockMode) -> Engine {
        let provider = Arc::new(MockProvider::new(store, mode));
        Engine::new(Arc::new(Gateway::new(provider)), EngineConfig::default())
    }

    fn engine() -> Engine {
        engine_with(FixtureStore::builtin(), MockMode::Demo)
    }

    fn aod() -> EventsRequest {
        EventsRequest {
            topic: Some("Age of Discovery".into()),
            context: Some("North America".into()),
            ..Default::default()
        }
    }

    #[tokio::test]
    async fn sessions_are_distinct_and_empty() {
        let e = engine();
        let a = e.create_session();
        let b = e.create_session();
        assert_ne!(a, b);
        assert!(!a.as_str().is_empty());
        let s = e.get(&a).unwrap();
        assert!(s.events.is_empty() && s.records.is_empty());
        assert!(matches!(
            e.get(&SessionId::from("nope")),
            Err(ServiceError::UnknownSession(_))
        ));
    }

    #[tokio::test]
    async fn events_flow_on_fixture() {
        let e = engine();
        let s = e.create_session();
        let out = e.generate_events(&s, aod()).await.unwrap();
        assert_eq!(out.events.len(), 8);
        assert!(out.edges.is_empty());
        let rel = out.relationship.unwrap();
        assert!(rel.error.is_none());
        assert_eq!(rel.title, "Age of Discovery — North America");
        let state = e.get(&s).unwrap();
        assert!(validate_session(&state).is_empty());
        let scale = state.scale.unwrap();
        assert!(scale.min_year.value() <= 1492 && scale.max_year.value() >= 1607);
        let rels = state
            .records
            .iter()
            .filter(|r| r.kind == GenerationKind::Relationship)
            .count();
        assert_eq!(rels, 1);
    }

    #[tokio::test]
    async fn expansion_adds_provenance_edges() {
        let e = engine();
        let s = e.create_session();
        let first = e.generate_events(&s, aod()).await.unwrap();
        let src = first.events[0].id.clone();
        let out = e
            .generate_events(
                &s,
                EventsRequest {
                    source_node: Some(src.clone()),
                    context: Some("North America".into()),
                    ..Default::default()
                },
            )
            .await
            .unwrap();
        assert_eq!(out.edges.len(), 8);
        assert!(out
            .edges
            .iter()
            .all(|edge| edge.from_node == src && edge.kind == EdgeKind::Provenance));
        assert_eq!(
            out.record.unwrap().topic,
            "Christopher Columbus' first voyage"
        );
        assert!(validate_session(&e.get(&s).unwrap()).is_empty());
    }

    #[tokio::test]
    async fn empty_events_add_nothing() {
        let mut store = FixtureStore::new();
        store.insert(
            PromptKey::new(GenerationKind::Events, "Void", "general knowledge"),
            Fixture::text(r#"{"events": []}"#),
        );
        let e = engine_with(store, MockMode::Strict);
        let s = e.create_session();
        let out = e
            .generate_events(
                &s,
                EventsRequest {
                    topic: Some("Void".into()),
                    ..Default::default()
                },
            )
            .await
            .unwrap();
        assert!(out.events.is_empty() && out.record.is_none());
        assert!(!out.warnings.is_empty());
        assert!(e.get(&s).unwrap().records.is_empty());
    }

    #[tokio::test]
    async fn malformed_after_one_reask() {
        struct Counting(std::sync::atomic::AtomicU32);
        #[async_trait]
        impl Provider for Counting {
            fn name(&self) -> &str {
                "counting"
            }
            async fn complete(
                &self,
                _req: &CompletionRequest,
            ) -> Result<ProviderResponse, ProviderError> {
                self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                Ok(ProviderResponse {
                    text: "I cannot answer that.".into(),
                    sources: vec![],
                })
            }
        }
        let p = Arc::new(Counting(Default::default()));
        let e = Engine::new(Arc::new(Gateway::new(p.clone())), EngineConfig::default());
        let s = e.create_session();
        let err = e.questions(&s, "Topic", None).await.unwrap_err();
        assert!(matches!(err, ServiceError::MalformedResponse(_)));
        assert_eq!(err.status_code(), 422);
        assert_eq!(p.0.load(std::sync::atomic::Ordering::SeqCst), 2);
        assert!(e.get(&s).unwrap().records.is_empty());
    }

    #[tokio::test]
    async fn relationship_failure_keeps_events() {
        // Strict store with only the events fixture: the relationship call fails.
        let mut store = FixtureStore::new();
        let builtin = FixtureStore::builtin();
        let key = PromptKey::new(GenerationKind::Events, "Age of Discovery", "North America");
        store.insert(key.clone(), builtin.get(&key).unwrap().clone());
        let provider = Arc::new(MockProvider::new(store, MockMode::Strict));
        let gw = Gateway::new(provider).with_retry(RetryPolicy {
            max_retries: 0,
            base_delay: Duration::from_millis(1),
        });
        let e = Engine::new(Arc::new(gw), EngineConfig::default());
        let s = e.create_session();
        let out = e.generate_events(&s, aod()).await.unwrap();
        assert_eq!(out.events.len(), 8);
        let rel = out.relationship.unwrap();
        assert!(rel.error.is_some() && rel.parsed.is_none());
        assert!(validate_session(&e.get(&s).unwrap()).is_empty());
    }

    #[tokio::test]
    async fn explain_node_sets_summary() {
        let e = engine();
        let s = e.create_session();
        let out = e.generate_events(&s, aod()).await.unwrap();
        let node = out.events[3].id.clone();
        let ex = e
            .explain(
                &s,
                ExplainRequest {
                    node: Some(node.clone()),
                    ..Default::default()
                },
            )
            .await
            .unwrap();
        let state = e.get(&s).unwrap();
        let ev = &state.events[&node];
        let text = match &ex.record.parsed {
            Some(ParsedPayload::Explain { text }) => text.clone(),
            other => panic!("{other:?}"),
        };
        assert_eq!(
            ev.short_summary.as_deref(),
            Some(derive_short_summary(&text).as_str())
        );
        assert_eq!(ex.record.event_ids, vec![node]);
        assert!(ex.image.is_none());
    }

    #[tokio::test]
    async fn explain_topic_carries_citations() {
        let e = engine();
        let s = e.create_session();
        let ex = e
            .explain(
                &s,
                ExplainRequest {
                    topic: Some("Age of Discovery".into()),
                    context: Some("North America".into()),
                    node: None,
                },
            )
            .await
            .unwrap();
        assert_eq!(ex.record.citations.len(), 2);
        assert!(ex.record.event_ids.is_empty());
    }

    #[tokio::test]
    async fn explain_with_images() {
        let provider = Arc::new(MockProvider::builtin(MockMode::Demo));
        let gw = Gateway::new(provider).with_images(true);
        let e = Engine::new(Arc::new(gw), EngineConfig::default());
        let s = e.create_session();
        let ex = e
            .explain(
                &s,
                ExplainRequest {
                    topic: Some("Printing press".into()),
                    ..Default::default()
                },
            )
            .await
            .unwrap();
        let img = ex.image.unwrap();
        assert_eq!(img.kind, GenerationKind::Image);
        assert!(validate_session(&e.get(&s).unwrap()).is_empty());
    }

    #[tokio::test]
    async fn questions_and_answer() {
        let e = engine();
        let s = e.create_session();
        let q = e
            .questions(&s, "Age of Discovery", Some("North America"))
            .await
            .unwrap();
        assert_eq!(q.questions.len(), 5);
        let ans = e
            .answer_question(&s, &q.questions[0], Some("North America"))
            .await
            .unwrap();
        assert_eq!(ans.record.topic, q.questions[0]);
        assert_eq!(ans.record.kind, GenerationKind::Explain);
    }

    #[tokio::test]
    async fn relationship_chain_edges() {
        let e = engine();
        let s = e.create_session();
        let out = e.generate_events(&s, aod()).await.unwrap();
        // Pick 4 out of order; edges must follow chronological order.
        let picks = [
            &out.events[6],
            &out.events[1],
            &out.events[4],
            &out.events[2],
        ];
        let ids: Vec<EventId> = picks.iter().map(|e| e.id.clone()).collect();
        let rel = e.generate_relationship(&s, &ids).await.unwrap();
        assert_eq!(rel.edges.len(), 3);
        let chain: Vec<(EventId, EventId)> = rel
            .edges
            .iter()
            .map(|e| (e.from_node.clone(), e.to_node.clone()))
            .collect();
        let by_year = [
            &out.events[1],
            &out.events[2],
            &out.events[4],
            &out.events[6],
        ];
        let expected: Vec<(EventId, EventId)> = by_year
            .windows(2)
            .map(|w| (w[0].id.clone(), w[1].id.clone()))
            .collect();
        assert_eq!(chain, expected);
        assert_eq!(rel.record.context, "North America");
        let err = e.generate_relationship(&s, &ids[..1]).await.unwrap_err();
        assert!(matches!(err, ServiceError::TooFewEvents(1)));
        let err = e
            .generate_relationship(&s, &[ids[0].clone(), EventId::from("ghost")])
            .await
            .unwrap_err();
        assert!(matches!(err, ServiceError::UnknownNode(_)));
    }

    #[tokio::test]
    async fn node_operations() {
        let e = engine();
        let s = e.create_session();
        let out = e.generate_events(&s, aod()).await.unwrap();
        let last = out.events.last().unwrap().id.clone();
        let before = e.get(&s).unwrap().scale.unwrap().max_year;
        e.delete_node(&s, &last).unwrap();
        assert!(e.get(&s).unwrap().scale.unwrap().max_year < before);

        let n = out.events[0].id.clone();
        e.move_node(&s, &n, 12.0, 34.0).unwrap();
        e.generate_events(
            &s,
            EventsRequest {
                topic: Some("Other".into()),
                ..Default::default()
            },
        )
        .await
        .unwrap();
        let p = &e.get(&s).unwrap().placements[&n];
        assert_eq!((p.x, p.y, p.pinned), (12.0, 34.0, true));

        let hub = out.events[1].id.clone();
        let others: Vec<EventId> = out.events[2..5].iter().map(|e| e.id.clone()).collect();
        for o in &others {
            e.generate_relationship(&s, &[hub.clone(), o.clone()])
                .await
                .unwrap();
        }
        let edges_before = e.get(&s).unwrap().edges.len();
        e.delete_node(&s, &hub).unwrap();
        assert_eq!(e.get(&s).unwrap().edges.len(), edges_before - 3);

        assert!(matches!(
            e.delete_node(&s, &EventId::from("ghost")),
            Err(ServiceError::UnknownNode(_))
        ));
        e.select(&s, &others).unwrap();
        assert_eq!(e.get(&s).unwrap().selection.len(), 3);
        assert!(validate_session(&e.get(&s).unwrap()).is_empty());
    }

    #[tokio::test]
    async fn view_operations() {
        let e = engine();
        let s = e.create_session();
        let out = e.generate_events(&s, aod()).await.unwrap();
        let snap = e.layout_snapshot(&s, 0.3).unwrap();
        assert!(snap.nodes.iter().all(|n| n.mode == RenderMode::Dot));

        let ids: Vec<EventId> = out.events[..3].iter().map(|e| e.id.clone()).collect();
        let rel = e.generate_relationship(&s, &ids).await.unwrap();
        let focus = e.focus_record(&s, &rel.record.id).unwrap();
        let full = focus
            .opacity
            .values()
            .filter(|o| **o == FULL_OPACITY)
            .count();
        assert_eq!(full, 3);
        assert_eq!(focus.opacity.len(), 8);

        let fe = e.focus_event(&s, &ids[0]).unwrap();
        assert_eq!(fe.viewport.zoom, 1.0);
        assert!(matches!(
            e.focus_event(&s, &EventId::from("ghost")),
            Err(ServiceError::UnknownNode(_))
        ));
        assert!(matches!(
            e.focus_record(&s, &RecordId::from("ghost")),
            Err(ServiceError::UnknownRecord(_))
        ));
        let ft = e.filter_type(&s, EventType::Politics).unwrap();
        assert!(ft.highlighted.iter().all(|id| out
            .events
            .iter()
            .any(|ev| &ev.id == id && ev.event_type == EventType::Politics)));
    }

    #[tokio::test]
    async fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let provider = Arc::new(MockProvider::builtin(MockMode::Demo));
        let cfg = EngineConfig {
            sessions_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let e = Engine::new(Arc::new(Gateway::new(provider)), cfg);
        let s = e.create_session();
        e.generate_events(&s, aod()).await.unwrap();
        let before = e.get(&s).unwrap();
        let path = e.save(&s).unwrap();
        assert!(path.ends_with(format!("{s}.json")));
        let (id, warnings) = e.load(&s).unwrap();
        assert_eq!(id, s);
        assert!(warnings.is_empty());
        assert_eq!(e.get(&s).unwrap(), before);
    }

    #[test]
    fn status_codes() {
        assert_eq!(ServiceError::Timeout(5).status_code(), 504);
        assert_eq!(ServiceError::Upstream("x".into()).status_code(), 502);
        assert_eq!(ServiceError::StaleSession("x".into()).status_code(), 409);
        assert_eq!(ServiceError::TooFewEvents(1).status_code(), 400);
        assert_eq!(
            ServiceError::from(GatewayError::Timeout(10)).status_code(),
            504
        );
    }
}
