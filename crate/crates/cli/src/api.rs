//! HTTP surface over [`Engine`]. Bodies are JSON objects whose field names
//! follow the session document.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use gentl_core::model::{EventId, EventType, RecordId, SessionId};
use gentl_core::service::{EventsRequest, ExplainRequest};
use gentl_core::store::{export_timeline, to_document};
use gentl_core::{Engine, ExportFormat, ServiceError};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

pub type AppState = Arc<Engine>;

/// JSON error body: `{"error": kind, "message": text}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "invalid_request",
            message: message.into(),
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let kind = match &e {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownNode(_) => "unknown_node",
            ServiceError::UnknownRecord(_) => "unknown_record",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::TooFewEvents(_) => "too_few_events",
            ServiceError::StaleSession(_) => "stale_session",
            ServiceError::MalformedResponse(_) => "malformed_response",
            ServiceError::Upstream(_) => "upstream_error",
            ServiceError::Timeout(_) => "timeout",
            ServiceError::BudgetExceeded(_) => "budget_exceeded",
            ServiceError::Store(_) => "store_error",
        };
        let status =
            StatusCode::from_u16(e.status_code()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        Self {
            status,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        // 422 is reserved for unparseable model output.
        Self::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(kind = self.kind, message = %self.message, "request failed");
        }
        let body = json!({ "error": self.kind, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    Ok(payload?.0)
}

fn to_value<T: serde::Serialize>(v: &T) -> Json<Value> {
    Json(serde_json::to_value(v).expect("response types serialize"))
}

/// Routes under `/sessions` plus `/healthz`; static assets, when given, are
/// served for every other path.
pub fn router(engine: AppState, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/events", post(events))
        .route("/sessions/{id}/explain", post(explain))
        .route("/sessions/{id}/questions", post(questions))
        .route("/sessions/{id}/answer", post(answer))
        .route("/sessions/{id}/relationship", post(relationship))
        .route(
            "/sessions/{id}/nodes/{nid}",
            patch(move_node).delete(delete_node),
        )
        .route("/sessions/{id}/select", post(select))
        .route("/sessions/{id}/layout", get(layout))
        .route("/sessions/{id}/focus", post(focus))
        .route("/sessions/{id}/filter", post(filter))
        .route("/sessions/{id}/records", get(records))
        .route("/sessions/{id}/save", post(save))
        .route("/sessions/{id}/export", get(export))
        .with_state(engine);
    let api = match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.layer(TraceLayer::new_for_http())
}

async fn healthz(State(engine): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "provider": engine.gateway().provider_name(),
        "images": engine.gateway().images_enabled(),
    }))
}

async fn create_session(State(engine): State<AppState>) -> (StatusCode, Json<Value>) {
    let id = engine.create_session();
    (StatusCode::CREATED, Json(json!({ "session_id": id })))
}

async fn list_sessions(State(engine): State<AppState>) -> Json<Value> {
    Json(json!({ "sessions": engine.session_ids() }))
}

async fn get_session(
    State(engine): State<AppState>,
    Path(id): Path<SessionId>,
) -> ApiResult<Json<Value>> {
    Ok(Json(to_document(&engine.get(&id)?)))
}

async fn events(
    State(engine): State<AppState>,
    Path(id): Path<SessionId>,
    payload: Result<Json<EventsRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let out = engine.generate_events(&id, body(payload)?).await?;
    Ok(to_value(&out))
}

async fn explain(
    State(engine): State<AppState>,
    Path(id): Path<SessionId>,
    payload: Result<Json<ExplainRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let out = engine.explain(&id, body(payload)?).await?;
    Ok(to_value(&out))
}

#[derive(Debug, Deserialize)]
struct QuestionsBody {
    topic: String,
    #[serde(default)]
    context: Option<String>,
}

async fn questions(
    State(engine): State<AppState>,
    Path(id): Path<SessionId>,
    payload: Result<Json<QuestionsBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = body(payload)?;
    let out = engine
        .questions(&id, &req.topic, req.context.as_deref())
        .await?;
    Ok(to_value(&out))
}

#[derive(Debug, Deserialize)]
struct AnswerBody {
    question: String,
    #[serde(default)]
    context: Option<String>,
}

async fn answer(
    State(engine): State<AppState>,
    Path(id): Path<SessionId>,
    payload: Result<Json<AnswerBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = body(payload)?;
    let out = engine
        .answer_question(&id, &req.question, req.context.as_deref())
        .await?;
    Ok(to_value(&out))
}

#[derive(Debug, Deserialize)]
struct NodeIdsBody {
    node_ids: Vec<EventId>,
}

async fn relationship(
    State(engine): State<AppState>,
    Path(id): Path<SessionId>,
    payload: Result<Json<NodeIdsBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = body(payload)?;
    let out = engine.generate_relationship(&id, &req.node_ids).await?;
    Ok(to_value(&out))
}

#[derive(Debug, Deserialize)]
struct MoveBody {
    x: f64,
    y: f64,
}

async fn move_node(
    State(engine): State<AppState>,
    Path((id, nid)): Path<(SessionId, EventId)>,
    payload: Result<Json<MoveBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = body(payload)?;
    engine.move_node(&id, &nid, req.x, req.y)?;
    let state = engine.get(&id)?;
    let placement = state
        .placements
        .get(&nid)
        .ok_or_else(|| ServiceError::UnknownNode(nid.clone()))?;
    Ok(to_value(placement))
}

async fn delete_node(
    State(engine): State<AppState>,
    Path((id, nid)): Path<(SessionId, EventId)>,
) -> ApiResult<Json<Value>> {
    Ok(to_value(&engine.delete_node(&id, &nid)?))
}

async fn select(
    State(engine): State<AppState>,
    Path(id): Path<SessionId>,
    payload: Result<Json<NodeIdsBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = body(payload)?;
    engine.select(&id, &req.node_ids)?;
    Ok(Json(json!({ "selection": engine.get(&id)?.selection })))
}

#[derive(Debug, Deserialize)]
struct ZoomQuery {
    #[serde(default = "unit_zoom")]
    zoom: f64,
}

fn unit_zoom() -> f64 {
    1.0
}

async fn layout(
    State(engine): State<AppState>,
    Path(id): Path<SessionId>,
    query: Result<Query<ZoomQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let zoom = query?.0.zoom;
    Ok(to_value(&engine.layout_snapshot(&id, zoom)?))
}

/// Exactly one of the two referents.
#[derive(Debug, Deserialize)]
struct FocusBody {
    #[serde(default)]
    record_id: Option<RecordId>,
    #[serde(default)]
    event_id: Option<EventId>,
}

async fn focus(
    State(engine): State<AppState>,
    Path(id): Path<SessionId>,
    payload: Result<Json<FocusBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let view = match body(payload)? {
        FocusBody {
            record_id: Some(r),
            event_id: None,
        } => engine.focus_record(&id, &r)?,
        FocusBody {
            record_id: None,
            event_id: Some(e),
        } => engine.focus_event(&id, &e)?,
        _ => {
            return Err(ApiError::bad_request(
                "exactly one of record_id or event_id is required",
            ))
        }
    };
    Ok(to_value(&view))
}

#[derive(Debug, Deserialize)]
struct FilterBody {
    event_type: String,
}

async fn filter(
    State(engine): State<AppState>,
    Path(id): Path<SessionId>,
    payload: Result<Json<FilterBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = body(payload)?;
    let t: EventType = req
        .event_type
        .parse()
        .map_err(|_| ApiError::bad_request(format!("unknown event type {:?}", req.event_type)))?;
    Ok(to_value(&engine.filter_type(&id, t)?))
}

async fn records(
    State(engine): State<AppState>,
    Path(id): Path<SessionId>,
) -> ApiResult<Json<Value>> {
    Ok(to_value(&engine.records(&id)?))
}

async fn save(State(engine): State<AppState>, Path(id): Path<SessionId>) -> ApiResult<Json<Value>> {
    let path = engine.save(&id)?;
    Ok(Json(json!({ "session_id": id, "path": path })))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    format: ExportFormat,
}

async fn export(
    State(engine): State<AppState>,
    Path(id): Path<SessionId>,
    query: Result<Query<ExportQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let format = query?.0.format;
    let text = export_timeline(&engine.get(&id)?, format);
    let mime = match format {
        ExportFormat::Outline => "text/plain; charset=utf-8",
        ExportFormat::Document => "text/markdown; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, mime)], text).into_response())
}
