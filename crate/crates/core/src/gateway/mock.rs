//! Deterministic fixture-backed provider.
//!
//! Fixtures live in a directory: `index.json` maps each fixture hash to its
//! readable key, `<hash>.txt` holds the response text verbatim and an
//! optional `<hash>.sources.json` holds citation sources.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CompletionRequest, PromptKey, Provider, ProviderError, ProviderResponse, SourceRef};
use crate::model::{EventDraft, EventType, GenerationKind, Year};
use crate::parse::serialize_events;
use crate::prompt::{DEFAULT_CONTEXT, DEFAULT_NUM_OF_TOPICS};

pub const INDEX_FILE: &str = "index.json";
/// First year of synthesized demo events.
pub const DEMO_BASE_YEAR: i64 = 1900;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid fixture file {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Fixture {
    pub text: String,
    pub sources: Vec<SourceRef>,
}

impl Fixture {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            sources: Vec::new(),
        }
    }

    pub fn with_sources(mut self, sources: Vec<SourceRef>) -> Self {
        self.sources = sources;
        self
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    hash: String,
    #[serde(flatten)]
    key: PromptKey,
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    version: u32,
    fixtures: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Default)]
pub struct FixtureStore {
    entries: BTreeMap<String, (PromptKey, Fixture)>,
}

const AOD_EVENTS: &str = include_str!("../../fixtures/age_of_discovery/events.json");
const AOD_EXPLAIN: &str = include_str!("../../fixtures/age_of_discovery/explain.txt");
const AOD_EXPLAIN_SOURCES: &str =
    include_str!("../../fixtures/age_of_discovery/explain.sources.json");
const AOD_QUESTIONS: &str = include_str!("../../fixtures/age_of_discovery/questions.txt");
const AOD_RELATIONSHIP: &str = include_str!("../../fixtures/age_of_discovery/relationship.txt");

/// Event names of the bundled "Age of Discovery" events fixture, in order.
pub const AGE_OF_DISCOVERY_EVENTS: [&str; 8] = [
    "Christopher Columbus' first voyage",
    "John Cabot's discovery of Newfoundland",
    "Vasco Núñez de Balboa discovers the Pacific Ocean",
    "Hernán Cortés conquers the Aztec Empire",
    "Francisco Pizarro conquers the Inca Empire",
    "Jacques Cartier's first voyage, discovering Canada",
    "Sir Walter Raleigh's expedition to Roanoke",
    "Founding of Jamestown",
];

impl FixtureStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// The worked "Age of Discovery" / "North America" example for every
    /// text prompt kind.
    pub fn builtin() -> Self {
        let topic = "Age of Discovery";
        let context = "North America";
        let sources: Vec<SourceRef> =
            serde_json::from_str(AOD_EXPLAIN_SOURCES).expect("bundled sources are valid");
        let mut store = Self::new();
        store.insert(
            PromptKey::new(GenerationKind::Events, topic, context),
            Fixture::text(AOD_EVENTS),
        );
        store.insert(
            PromptKey::new(GenerationKind::Explain, topic, context),
            Fixture::text(AOD_EXPLAIN).with_sources(sources),
        );
        store.insert(
            PromptKey::new(GenerationKind::Questions, topic, context),
            Fixture::text(AOD_QUESTIONS),
        );
        store.insert(
            PromptKey::new(GenerationKind::Relationship, topic, context).with_subevents(
                AGE_OF_DISCOVERY_EVENTS
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            ),
            Fixture::text(AOD_RELATIONSHIP),
        );
        store
    }

    pub fn insert(&mut self, key: PromptKey, fixture: Fixture) {
        let mut key = key;
        key.num_of_topics = None;
        self.entries.insert(key.fixture_hash(), (key, fixture));
    }

    pub fn get(&self, key: &PromptKey) -> Option<&Fixture> {
        self.entries.get(&key.fixture_hash()).map(|(_, f)| f)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn merge(&mut self, other: FixtureStore) {
        self.entries.extend(other.entries);
    }

    pub fn load_dir(dir: &Path) -> Result<Self, FixtureError> {
        let index_path = dir.join(INDEX_FILE);
        let index: Index =
            serde_json::from_str(&read(&index_path)?).map_err(|e| FixtureError::Invalid {
                path: index_path.clone(),
                message: e.to_string(),
            })?;
        let mut store = Self::new();
        for entry in index.fixtures {
            if entry.key.fixture_hash() != entry.hash {
                return Err(FixtureError::Invalid {
                    path: index_path,
                    message: format!("hash {} does not match its key", entry.hash),
                });
            }
            let text = read(&dir.join(format!("{}.txt", entry.hash)))?;
            let sources_path = dir.join(format!("{}.sources.json", entry.hash));
            let sources = if sources_path.exists() {
                serde_json::from_str(&read(&sources_path)?).map_err(|e| FixtureError::Invalid {
                    path: sources_path,
                    message: e.to_string(),
                })?
            } else {
                Vec::new()
            };
            store.insert(entry.key, Fixture { text, sources });
        }
        Ok(store)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), FixtureError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| FixtureError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut fixtures = Vec::new();
        for (hash, (key, fixture)) in &self.entries {
            let text_path = dir.join(format!("{hash}.txt"));
            fs::write(&text_path, &fixture.text).map_err(io(&text_path))?;
            if !fixture.sources.is_empty() {
                let p = dir.join(format!("{hash}.sources.json"));
                let json = serde_json::to_string_pretty(&fixture.sources).expect("serializable");
                fs::write(&p, json).map_err(io(&p))?;
            }
            fixtures.push(IndexEntry {
                hash: hash.clone(),
                key: key.clone(),
            });
        }
        let index_path = dir.join(INDEX_FILE);
        let json = serde_json::to_string_pretty(&Index {
            version: 1,
            fixtures,
        })
        .expect("serializable");
        fs::write(&index_path, json).map_err(io(&index_path))
    }
}

fn read(path: &Path) -> Result<String, FixtureError> {
    fs::read_to_string(path).map_err(|source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    /// Unknown keys fail with "no fixture".
    Strict,
    /// Unknown keys get a synthesized, deterministic response.
    Demo,
}

#[derive(Debug, Clone)]
pub struct MockProvider {
    store: FixtureStore,
    mode: MockMode,
    search: bool,
    latency: Option<Duration>,
}

impl MockProvider {
    pub fn new(store: FixtureStore, mode: MockMode) -> Self {
        Self {
            store,
            mode,
            search: true,
            latency: None,
        }
    }

    pub fn builtin(mode: MockMode) -> Self {
        Self::new(FixtureStore::builtin(), mode)
    }

    /// Whether the mock advertises search (citations).
    pub fn with_search(mut self, search: bool) -> Self {
        self.search = search;
        self
    }

    /// Artificial delay per call, for exercising concurrency.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }

    async fn lookup(&self, req: &CompletionRequest) -> Result<Fixture, ProviderError> {
        if let Some(d) = self.latency {
            tokio::time::sleep(d).await;
        }
        if let Some(f) = self.store.get(&req.key) {
            return Ok(f.clone());
        }
        match self.mode {
            MockMode::Strict => Err(ProviderError::NoFixture(format!(
                "{} '{}' / '{}' ({})",
                req.key.kind,
                req.key.topic,
                req.key.context,
                req.key.fixture_hash()
            ))),
            MockMode::Demo => Ok(Fixture::text(demo_response(&req.key))),
        }
    }
}

#[async_trait]
impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn supports_search(&self) -> bool {
        self.search
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<ProviderResponse, ProviderError> {
        let f = self.lookup(req).await?;
        Ok(ProviderResponse {
            text: f.text,
            sources: Vec::new(),
        })
    }

    async fn search(&self, req: &CompletionRequest) -> Result<ProviderResponse, ProviderError> {
        if !self.search {
            return Err(ProviderError::SearchUnavailable);
        }
        let f = self.lookup(req).await?;
        Ok(ProviderResponse {
            text: f.text,
            sources: f.sources,
        })
    }
}

/// Deterministic stand-in response for a key with no fixture.
pub fn demo_response(key: &PromptKey) -> String {
    let topic = key.topic.trim();
    let context = match key.context.trim() {
        "" => DEFAULT_CONTEXT,
        c => c,
    };
    match key.kind {
        GenerationKind::Events => {
            let n = key.num_of_topics.unwrap_or(DEFAULT_NUM_OF_TOPICS).max(1);
            let drafts: Vec<EventDraft> = (1..=n)
                .map(|k| EventDraft {
                    name: format!("{topic} — event {k}"),
                    year: Year::new(DEMO_BASE_YEAR + k as i64 - 1).expect("in range"),
                    event_type: EventType::Other,
                })
                .collect();
            serialize_events(&drafts)
        }
        GenerationKind::Explain => format!(
            "{topic} is described here within the broader context of {context}. \
             This placeholder text was produced without a language model. \
             Configure a live provider to generate a real explanation."
        ),
        GenerationKind::Questions => [
            format!("What is {topic}?"),
            format!("Why does {topic} matter for {context}?"),
            format!("Who were the key figures in {topic}?"),
            format!("When did {topic} take place?"),
            format!("How did {topic} change {context}?"),
        ]
        .join(", "),
        GenerationKind::Relationship => {
            let mut text = format!("These events shape {topic} within {context}.");
            for name in &key.subevents {
                text.push_str(&format!(
                    " The ={}@{}= contributes to it.",
                    name.trim(),
                    name.trim()
                ));
            }
            text
        }
        GenerationKind::Image => format!("mock://image/{}", key.fixture_hash()),
    }
}
