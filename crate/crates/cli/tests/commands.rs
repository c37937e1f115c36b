use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use clap::Parser;
use gentl_cli::commands::{
    audit_report, build_engine, export, fixtures_init, Cli, Command, ExportArgs, FormatArg,
    ModeArg, ReportArgs, ServeArgs,
};
use gentl_core::audit::{save_labels, AuditCategory, AuditLabel, Verdict};
use gentl_core::gateway::FixtureStore;
use gentl_core::service::EventsRequest;
use gentl_core::GenerationKind;
use tower::ServiceExt;

fn serve_args(argv: &[&str]) -> ServeArgs {
    let mut full = vec!["gentl", "serve"];
    full.extend_from_slice(argv);
    match Cli::parse_from(full).command {
        Command::Serve(a) => a,
        other => panic!("parsed {other:?}"),
    }
}

async fn saved_session(dir: &std::path::Path, tags: &[&str]) -> PathBuf {
    let sessions = dir.join("sessions");
    let mut argv = vec!["--sessions", sessions.to_str().unwrap()];
    for t in tags {
        argv.extend(["--tag", t]);
    }
    let engine = build_engine(&serve_args(&argv)).unwrap();
    let id = engine.create_session();
    engine
        .generate_events(
            &id,
            EventsRequest {
                topic: Some("Age of Discovery".into()),
                context: Some("North America".into()),
                ..Default::default()
            },
        )
        .await
        .unwrap();
    engine.save(&id).unwrap()
}

#[test]
fn serve_flags_parse() {
    let a = serve_args(&[
        "--port",
        "9000",
        "--provider",
        "mock",
        "--fixtures",
        "fx",
        "--sessions",
        "s",
        "--images",
        "--tag",
        "study=s1",
    ]);
    assert_eq!(a.port, 9000);
    assert!(a.images);
    assert_eq!(a.fixtures, Some(PathBuf::from("fx")));
    assert_eq!(a.tags, vec![("study".to_string(), "s1".to_string())]);
    assert!(Cli::try_parse_from(["gentl", "serve", "--tag", "novalue"]).is_err());
    assert!(Cli::try_parse_from(["gentl", "serve", "--provider", "other"]).is_err());
}

#[test]
fn live_provider_requires_api_key() {
    let dir = tempfile::tempdir().unwrap();
    let sessions = dir.path().join("s");
    std::env::remove_var(gentl_core::gateway::API_KEY_ENV);
    let err = build_engine(&serve_args(&[
        "--provider",
        "live",
        "--sessions",
        sessions.to_str().unwrap(),
    ]))
    .unwrap_err();
    assert!(err.to_string().contains("GENTL_API_KEY"));
}

#[test]
fn fixtures_init_round_trips_through_load() {
    let dir = tempfile::tempdir().unwrap();
    let n = fixtures_init(dir.path()).unwrap();
    assert_eq!(n, FixtureStore::builtin().len());
    let loaded = FixtureStore::load_dir(dir.path()).unwrap();
    assert_eq!(loaded.len(), n);
}

#[tokio::test]
async fn export_writes_outline_and_document() {
    let dir = tempfile::tempdir().unwrap();
    let session = saved_session(dir.path(), &[]).await;
    let out = dir.path().join("timeline.txt");
    export(&ExportArgs {
        session: session.clone(),
        out: out.clone(),
        format: FormatArg::Outline,
    })
    .unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("Timeline\n"));
    assert_eq!(text.matches(" [").count(), 8);

    let md = dir.path().join("timeline.md");
    export(&ExportArgs {
        session,
        out: md.clone(),
        format: FormatArg::Document,
    })
    .unwrap();
    assert!(std::fs::read_to_string(md)
        .unwrap()
        .contains("Founding of Jamestown"));
}

#[tokio::test]
async fn audit_report_from_saved_session() {
    let dir = tempfile::tempdir().unwrap();
    let session = saved_session(dir.path(), &["study=s1"]).await;
    let state = gentl_core::load_session(&session).unwrap().state;
    let events = state
        .records
        .iter()
        .find(|r| r.kind == GenerationKind::Events)
        .unwrap();
    let labels: Vec<AuditLabel> = (0..8)
        .map(|i| AuditLabel {
            record_id: events.id.clone(),
            category: AuditCategory::EventOccurrence,
            item_index: Some(i),
            verdict: if i < 6 {
                Verdict::Correct
            } else {
                Verdict::Incorrect
            },
            note: None,
        })
        .collect();
    let labels_path = dir.path().join("labels.tsv");
    save_labels(&labels_path, &labels).unwrap();

    let mut args = ReportArgs {
        log: session,
        labels: labels_path,
        mode: ModeArg::Pooled,
        study_key: None,
        json: false,
    };
    let table = audit_report(&args).unwrap();
    assert!(table.contains("75.0"), "{table}");
    assert!(table.contains("n/a"), "{table}");

    args.mode = ModeArg::Macro;
    args.json = true;
    let doc: serde_json::Value = serde_json::from_str(&audit_report(&args).unwrap()).unwrap();
    assert_eq!(doc["mode"], "macro");
}

#[tokio::test]
async fn static_assets_served_at_root() {
    let dir = tempfile::tempdir().unwrap();
    let assets = dir.path().join("dist");
    std::fs::create_dir_all(&assets).unwrap();
    std::fs::write(assets.join("index.html"), "<html>timeline</html>").unwrap();
    let sessions = dir.path().join("s");
    let engine = build_engine(&serve_args(&["--sessions", sessions.to_str().unwrap()])).unwrap();
    let app = gentl_cli::router(Arc::new(engine), Some(assets));

    let resp = app
        .clone()
        .oneshot(Request::get("/").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(&bytes[..], b"<html>timeline</html>");

    let resp = app
        .oneshot(Request::get("/healthz").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}
