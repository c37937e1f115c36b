//! Command-line definitions and their implementations.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gentl_core::audit::{self, AuditError, AuditMode};
use gentl_core::gateway::{FixtureError, FixtureStore, LiveConfig, LiveProvider};
use gentl_core::store::{export_timeline, load_session};
use gentl_core::{
    Engine, EngineConfig, ExportFormat, Gateway, MockMode, MockProvider, Provider, StoreError,
};
use thiserror::Error;

use crate::api;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "gentl",
    version,
    about = "Generative timeline service and tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Render a saved session as text.
    Export(ExportArgs),
    /// Accuracy bookkeeping over generation logs.
    Audit {
        #[command(subcommand)]
        command: AuditCommand,
    },
    /// Bundled fixtures.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Mock,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MockModeArg {
    Strict,
    Demo,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, value_enum, default_value_t = ProviderKind::Mock)]
    pub provider: ProviderKind,
    /// Fixture directory; the bundled example fixtures are always available.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// How the mock answers prompts it has no fixture for.
    #[arg(long, value_enum, default_value_t = MockModeArg::Demo)]
    pub mock_mode: MockModeArg,
    #[arg(long, default_value = "sessions")]
    pub sessions: PathBuf,
    /// Issue an image prompt after each explanation.
    #[arg(long)]
    pub images: bool,
    /// Built web assets served at `/`.
    #[arg(long)]
    pub assets: Option<PathBuf>,
    #[arg(long, default_value = "https://api.openai.com/v1")]
    pub base_url: String,
    #[arg(long, default_value = "gpt-4o")]
    pub model: String,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// Maximum provider calls per session.
    #[arg(long)]
    pub budget: Option<u32>,
    /// `key=value` tag copied onto every record, e.g. `study=s1`.
    #[arg(long = "tag", value_parser = parse_tag)]
    pub tags: Vec<(String, String)>,
}

fn parse_tag(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(format!("expected key=value, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Outline,
    Document,
}

impl From<FormatArg> for ExportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Outline => ExportFormat::Outline,
            FormatArg::Document => ExportFormat::Document,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Outline)]
    pub format: FormatArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pooled,
    Macro,
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Per-category accuracy table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Session file, JSON array of records, or JSON lines.
    #[arg(long)]
    pub log: PathBuf,
    /// Tab-separated labels file.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Pooled)]
    pub mode: ModeArg,
    /// Record tag naming the study (macro mode).
    #[arg(long)]
    pub study_key: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum FixturesCommand {
    /// Write the bundled fixtures to a directory.
    Init { dir: PathBuf },
}

pub fn build_engine(args: &ServeArgs) -> Result<Engine, CliError> {
    let provider: Arc<dyn Provider> = match args.provider {
        ProviderKind::Mock => {
            let mut store = FixtureStore::builtin();
            if let Some(dir) = &args.fixtures {
                store.merge(FixtureStore::load_dir(dir)?);
            }
            let mode = match args.mock_mode {
                MockModeArg::Strict => MockMode::Strict,
                MockModeArg::Demo => MockMode::Demo,
            };
            Arc::new(MockProvider::new(store, mode))
        }
        ProviderKind::Live => {
            let cfg =
                LiveConfig::from_env(&args.base_url, &args.model).map_err(CliError::Config)?;
            Arc::new(LiveProvider::new(cfg))
        }
    };
    let mut gateway = Gateway::new(provider).with_images(args.images);
    if let Some(b) = args.budget {
        gateway = gateway.with_budget(b);
    }
    std::fs::create_dir_all(&args.sessions).map_err(|source| CliError::Io {
        path: args.sessions.clone(),
        source,
    })?;
    let mut config = EngineConfig {
        sessions_dir: Some(args.sessions.clone()),
        record_tags: args.tags.iter().cloned().collect::<BTreeMap<_, _>>(),
        ..Default::default()
    };
    if let Some(t) = args.timeout_ms {
        config.timeout_ms = t;
    }
    Ok(Engine::new(Arc::new(gateway), config))
}

pub async fn serve(args: ServeArgs) -> Result<(), CliError> {
    let engine = Arc::new(build_engine(&args)?);
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::Config(format!("bad listen address: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| CliError::Io {
            path: PathBuf::from(addr.to_string()),
            source,
        })?;
    tracing::info!(%addr, provider = ?args.provider, "listening");
    let app = api::router(engine, args.assets.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| CliError::Io {
            path: PathBuf::from(addr.to_string()),
            source,
        })
}

pub fn export(args: &ExportArgs) -> Result<(), CliError> {
    let loaded = load_session(&args.session)?;
    for w in &loaded.warnings {
        tracing::warn!("{w}");
    }
    let text = export_timeline(&loaded.state, args.format.into());
    write_file(&args.out, &text)
}

/// Returns the rendered report.
pub fn audit_report(args: &ReportArgs) -> Result<String, CliError> {
    let log = audit::load_log(&args.log)?;
    let labels = audit::load_labels(&args.labels)?;
    let mode = match args.mode {
        ModeArg::Pooled => AuditMode::Pooled,
        ModeArg::Macro => AuditMode::Macro,
    };
    let report = audit::audit_report(&log, &labels, mode, args.study_key.as_deref())?;
    Ok(if args.json {
        report.to_json()
    } else {
        report.to_table()
    })
}

pub fn fixtures_init(dir: &Path) -> Result<usize, CliError> {
    let store = FixtureStore::builtin();
    store.save_dir(dir)?;
    Ok(store.len())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub async fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Serve(args) => serve(args).await,
        Command::Export(args) => export(&args),
        Command::Audit {
            command: AuditCommand::Report(args),
        } => {
            println!("{}", audit_report(&args)?.trim_end());
            Ok(())
        }
        Command::Fixtures {
            command: FixturesCommand::Init { dir },
        } => {
            let n = fixtures_init(&dir)?;
            println!("wrote {n} fixtures to {}", dir.display());
            Ok(())
        }
    }
}
