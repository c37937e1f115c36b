use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use gentl_cli::router;
use gentl_core::gateway::FixtureStore;
use gentl_core::{Engine, EngineConfig, Gateway, MockMode, MockProvider};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_with(mode: MockMode, dir: &std::path::Path) -> Router {
    let provider = MockProvider::new(FixtureStore::builtin(), mode);
    let cfg = EngineConfig {
        sessions_dir: Some(dir.to_path_buf()),
        ..Default::default()
    };
    let engine = Engine::new(Arc::new(Gateway::new(Arc::new(provider))), cfg);
    router(Arc::new(engine), None)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = serde_json::from_slice(&bytes)
        .unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into_owned()));
    (status, value)
}

async fn seeded(app: &Router) -> (String, Value) {
    let (status, v) = call(app, Method::POST, "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = v["session_id"].as_str().unwrap().to_string();
    let (status, out) = call(
        app,
        Method::POST,
        &format!("/sessions/{id}/events"),
        Some(json!({"topic": "Age of Discovery", "context": "North America"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{out}");
    (id, out)
}

fn ids(out: &Value) -> Vec<String> {
    out["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["id"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn healthz_reports_ok() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Demo, dir.path());
    let (status, v) = call(&app, Method::GET, "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn new_session_is_empty_and_ids_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Demo, dir.path());
    let (_, a) = call(&app, Method::POST, "/sessions", None).await;
    let (_, b) = call(&app, Method::POST, "/sessions", None).await;
    assert_ne!(a["session_id"], b["session_id"]);
    let id = a["session_id"].as_str().unwrap();
    let (status, s) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["session_id"], id);
    assert_eq!(s["schema_version"], 1);
    assert!(s["events"].as_object().unwrap().is_empty());
}

#[tokio::test]
async fn events_flow_adds_nodes_and_relationship_record() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Demo, dir.path());
    let (id, out) = seeded(&app).await;
    assert_eq!(out["events"].as_array().unwrap().len(), 8);
    assert_eq!(out["record"]["kind"], "Events");
    assert_eq!(out["relationship"]["kind"], "Relationship");
    let (_, records) = call(&app, Method::GET, &format!("/sessions/{id}/records"), None).await;
    assert_eq!(records.as_array().unwrap().len(), 2);
    assert_eq!(records[0]["title"], "Age of Discovery — North America");
}

#[tokio::test]
async fn expansion_adds_provenance_edges() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Demo, dir.path());
    let (id, out) = seeded(&app).await;
    let source = &ids(&out)[0];
    let (status, exp) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/events"),
        Some(json!({"source_node": source})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{exp}");
    let n = exp["events"].as_array().unwrap().len();
    assert!(n > 0);
    let edges = exp["edges"].as_array().unwrap();
    assert_eq!(edges.len(), n);
    assert!(edges
        .iter()
        .all(|e| e["from_node"] == *source && e["kind"] == "provenance"));
}

#[tokio::test]
async fn explain_questions_and_answer() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Demo, dir.path());
    let (id, out) = seeded(&app).await;
    let node = &ids(&out)[2];
    let (status, ex) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/explain"),
        Some(json!({"node": node, "context": "North America"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{ex}");
    assert_eq!(ex["record"]["kind"], "Explain");
    let (_, s) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert!(s["events"][node]["short_summary"].is_string());

    let (status, q) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/questions"),
        Some(json!({"topic": "Age of Discovery", "context": "North America"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{q}");
    let questions = q["questions"].as_array().unwrap();
    assert_eq!(questions.len(), 5);

    let (status, a) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/answer"),
        Some(json!({"question": questions[0], "context": "North America"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{a}");
    assert_eq!(a["record"]["topic"], questions[0]);
}

#[tokio::test]
async fn relationship_over_selection_and_too_few() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Demo, dir.path());
    let (id, out) = seeded(&app).await;
    let ids = ids(&out);
    let (status, rel) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/relationship"),
        Some(json!({"node_ids": [ids[5], ids[1], ids[3], ids[0]]})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{rel}");
    assert_eq!(rel["edges"].as_array().unwrap().len(), 3);

    let (status, err) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/relationship"),
        Some(json!({"node_ids": [ids[0]]})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "too_few_events");
}

#[tokio::test]
async fn node_move_pins_and_delete_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Demo, dir.path());
    let (id, out) = seeded(&app).await;
    let ids = ids(&out);
    let (status, p) = call(
        &app,
        Method::PATCH,
        &format!("/sessions/{id}/nodes/{}", ids[0]),
        Some(json!({"x": 10.0, "y": 20.0})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{p}");
    assert_eq!(p["pinned"], true);
    assert_eq!(p["x"], 10.0);

    let (_, before) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    let last = ids.last().unwrap();
    let (status, removed) = call(
        &app,
        Method::DELETE,
        &format!("/sessions/{id}/nodes/{last}"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(removed["name"], "Founding of Jamestown");
    let (_, after) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert!(
        after["scale"]["max_year"].as_i64().unwrap()
            < before["scale"]["max_year"].as_i64().unwrap()
    );

    let (status, err) = call(
        &app,
        Method::DELETE,
        &format!("/sessions/{id}/nodes/{last}"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "unknown_node");
}

#[tokio::test]
async fn layout_modes_follow_zoom() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Demo, dir.path());
    let (id, _) = seeded(&app).await;
    let (status, low) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/layout?zoom=0.3"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!(low["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .all(|n| n["mode"] == "dot"));
    let (_, high) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/layout?zoom=1"),
        None,
    )
    .await;
    assert!(high["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .all(|n| n["mode"] == "full_node"));
    let (status, _) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/layout?zoom=0"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/layout?zoom=abc"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn focus_on_record_and_event() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Demo, dir.path());
    let (id, out) = seeded(&app).await;
    let record = out["record"]["id"].as_str().unwrap();
    let (status, view) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/focus"),
        Some(json!({"record_id": record})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{view}");
    assert_eq!(view["highlighted"].as_array().unwrap().len(), 8);

    let node = &ids(&out)[0];
    let (_, view) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/focus"),
        Some(json!({"event_id": node})),
    )
    .await;
    assert_eq!(view["viewport"]["zoom"], 1.0);
    assert_eq!(view["opacity"][node], 1.0);

    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/focus"),
        Some(json!({"event_id": "nope"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/focus"),
        Some(json!({})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn filter_by_type_highlights_matches() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Demo, dir.path());
    let (id, out) = seeded(&app).await;
    let politics = out["events"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["event_type"] == "Politics")
        .count();
    let (status, view) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/filter"),
        Some(json!({"event_type": "Politics"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{view}");
    assert_eq!(view["highlighted"].as_array().unwrap().len(), politics);
}

#[tokio::test]
async fn save_writes_session_file() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Demo, dir.path());
    let (id, _) = seeded(&app).await;
    let (status, v) = call(&app, Method::POST, &format!("/sessions/{id}/save"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let path = dir.path().join(format!("{id}.json"));
    assert!(path.exists());
    let loaded = gentl_core::load_session(&path).unwrap();
    let (_, live) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(gentl_core::store::to_document(&loaded.state), live);
}

#[tokio::test]
async fn export_outline_lists_events() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Demo, dir.path());
    let (id, _) = seeded(&app).await;
    let (status, v) = call(&app, Method::GET, &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    let text = v.as_str().unwrap();
    assert!(text.starts_with("Timeline\n"));
    assert!(text.contains("Founding of Jamestown"));
}

#[tokio::test]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(MockMode::Strict, dir.path());
    let (status, v) = call(&app, Method::GET, "/sessions/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_session");

    let (_, s) = call(&app, Method::POST, "/sessions", None).await;
    let id = s["session_id"].as_str().unwrap();
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/events"),
        Some(json!({"num_of_topics": "eight"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    // Strict mock: no fixture for this key is an upstream failure.
    let (status, v) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/events"),
        Some(json!({"topic": "Unknown", "context": "Nowhere"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY, "{v}");
    assert_eq!(v["error"], "upstream_error");
}
