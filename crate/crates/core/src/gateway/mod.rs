//! Provider abstraction for text (and optional image) generation.
//!
//! [`Gateway`] wraps a [`Provider`] with per-attempt timeouts, retry with
//! exponential backoff on transport failures, an optional per-session
//! request budget, latency measurement and citation anchoring.

mod live;
mod mock;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Anchor, Citation, GenerationKind, SessionId};

pub use live::{LiveConfig, LiveProvider, API_KEY_ENV};
pub use mock::{
    demo_response, Fixture, FixtureError, FixtureStore, MockMode, MockProvider,
    AGE_OF_DISCOVERY_EVENTS, DEMO_BASE_YEAR, INDEX_FILE,
};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_TIMEOUT_MS: u64 = 60_000;
pub const MIN_TIMEOUT_MS: u64 = 1_000;

/// Identity of a generation for fixture lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptKey {
    pub kind: GenerationKind,
    pub topic: String,
    pub context: String,
    #[serde(default)]
    pub subevents: Vec<String>,
    /// Only used to size synthesized demo payloads; not part of the hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_of_topics: Option<u32>,
}

impl PromptKey {
    pub fn new(kind: GenerationKind, topic: &str, context: &str) -> Self {
        Self {
            kind,
            topic: topic.trim().to_string(),
            context: context.trim().to_string(),
            subevents: Vec::new(),
            num_of_topics: None,
        }
    }

    pub fn with_subevents(mut self, subevents: Vec<String>) -> Self {
        self.subevents = subevents;
        self
    }

    /// Stable 16-hex-digit digest of (kind, topic, context, subevents).
    pub fn fixture_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.as_str().as_bytes());
        h.update([0x1f]);
        h.update(self.topic.as_bytes());
        h.update([0x1f]);
        h.update(self.context.as_bytes());
        for s in &self.subevents {
            h.update([0x1e]);
            h.update(s.trim().as_bytes());
        }
        h.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub kind: GenerationKind,
    pub temperature: f64,
    pub timeout_ms: u64,
    pub key: PromptKey,
    /// Budget accounting bucket.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionId>,
}

impl CompletionRequest {
    pub fn new(prompt: String, key: PromptKey) -> Self {
        Self {
            prompt,
            kind: key.kind,
            temperature: DEFAULT_TEMPERATURE,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            key,
            session: None,
        }
    }

    pub fn for_session(mut self, session: SessionId) -> Self {
        self.session = Some(session);
        self
    }
}

/// Source metadata as a provider reports it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub title: String,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProviderResponse {
    pub text: String,
    pub sources: Vec<SourceRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("upstream returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no fixture for {0}")]
    NoFixture(String),
    #[error("search is not available from this provider")]
    SearchUnavailable,
    #[error("malformed provider payload: {0}")]
    BadPayload(String),
}

impl ProviderError {
    fn retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[async_trait]
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn supports_search(&self) -> bool {
        false
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<ProviderResponse, ProviderError>;

    /// Completion grounded in web search, returning source metadata.
    async fn search(&self, _req: &CompletionRequest) -> Result<ProviderResponse, ProviderError> {
        Err(ProviderError::SearchUnavailable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub citations: Vec<Citation>,
    pub latency_ms: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("upstream error: {message}")]
    Upstream {
        status: Option<u16>,
        message: String,
    },
    #[error("request budget of {limit} exhausted for this session")]
    BudgetExceeded { limit: u32 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("image generation is disabled")]
    ImagesDisabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

enum Failure {
    Timeout,
    Provider(ProviderError),
}

impl Failure {
    fn into_gateway_error(self, timeout_ms: u64) -> GatewayError {
        match self {
            Failure::Timeout => GatewayError::Timeout(timeout_ms),
            Failure::Provider(err) => GatewayError::Upstream {
                status: match &err {
                    ProviderError::Status { status, .. } => Some(*status),
                    _ => None,
                },
                message: err.to_string(),
            },
        }
    }
}

/// Typical latencies observed for live generations, in ms. Informational.
pub fn latency_envelope(kind: GenerationKind) -> (u64, u64) {
    match kind {
        GenerationKind::Events | GenerationKind::Image => (8_000, 10_000),
        GenerationKind::Explain | GenerationKind::Relationship | GenerationKind::Questions => {
            (2_000, 4_000)
        }
    }
}

pub struct Gateway {
    provider: Arc<dyn Provider>,
    retry: RetryPolicy,
    budget: Option<u32>,
    images_enabled: bool,
    usage: Mutex<HashMap<SessionId, u32>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.name())
            .field("retry", &self.retry)
            .field("budget", &self.budget)
            .field("images_enabled", &self.images_enabled)
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self {
            provider,
            retry: RetryPolicy::default(),
            budget: None,
            images_enabled: false,
            usage: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Caps the number of completions a single session may request.
    pub fn with_budget(mut self, per_session: u32) -> Self {
        self.budget = Some(per_session);
        self
    }

    pub fn with_images(mut self, enabled: bool) -> Self {
        self.images_enabled = enabled;
        self
    }

    pub fn images_enabled(&self) -> bool {
        self.images_enabled
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub async fn complete(
        &self,
        req: &CompletionRequest,
    ) -> Result<CompletionResult, GatewayError> {
        self.precheck(req)?;
        let started = Instant::now();
        let resp = self
            .with_retries(req, false)
            .await
            .map_err(|f| f.into_gateway_error(req.timeout_ms))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        self.report_latency(req.kind, latency_ms);
        Ok(CompletionResult {
            text: resp.text,
            citations: Vec::new(),
            latency_ms,
            warnings: Vec::new(),
        })
    }

    /// Like [`Gateway::complete`] but asks the provider for sources. Falls
    /// back to a plain completion (no citations, one warning) when search is
    /// unavailable.
    pub async fn complete_with_citations(
        &self,
        req: &CompletionRequest,
    ) -> Result<CompletionResult, GatewayError> {
        self.precheck(req)?;
        let started = Instant::now();
        let mut warnings = Vec::new();
        let searched = if self.provider.supports_search() {
            match self.with_retries(req, true).await {
                Err(Failure::Provider(ProviderError::SearchUnavailable)) => None,
                other => Some(other.map_err(|f| f.into_gateway_error(req.timeout_ms))?),
            }
        } else {
            None
        };
        let resp = match searched {
            Some(r) => r,
            None => {
                warnings.push(format!(
                    "provider '{}' cannot search; no citations available",
                    self.provider.name()
                ));
                self.with_retries(req, false)
                    .await
                    .map_err(|f| f.into_gateway_error(req.timeout_ms))?
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        self.report_latency(req.kind, latency_ms);
        let citations = anchor_citations(&resp.text, resp.sources, &mut warnings);
        Ok(CompletionResult {
            text: resp.text,
            citations,
            latency_ms,
            warnings,
        })
    }

    fn precheck(&self, req: &CompletionRequest) -> Result<(), GatewayError> {
        if req.timeout_ms < MIN_TIMEOUT_MS {
            return Err(GatewayError::InvalidRequest(format!(
                "timeout_ms must be at least {MIN_TIMEOUT_MS}"
            )));
        }
        if req.kind == GenerationKind::Image && !self.images_enabled {
            return Err(GatewayError::ImagesDisabled);
        }
        if let (Some(limit), Some(session)) = (self.budget, &req.session) {
            let mut usage = self.usage.lock();
            let used = usage.entry(session.clone()).or_default();
            if *used >= limit {
                return Err(GatewayError::BudgetExceeded { limit });
            }
            *used += 1;
        }
        Ok(())
    }

    async fn with_retries(
        &self,
        req: &CompletionRequest,
        search: bool,
    ) -> Result<ProviderResponse, Failure> {
        let timeout = Duration::from_millis(req.timeout_ms);
        let mut attempt = 0;
        loop {
            let call = async {
                if search {
                    self.provider.search(req).await
                } else {
                    self.provider.complete(req).await
                }
            };
            let err = match tokio::time::timeout(timeout, call).await {
                Err(_) => return Err(Failure::Timeout),
                Ok(Ok(resp)) => return Ok(resp),
                Ok(Err(e)) => e,
            };
            if !(err.retryable() && attempt < self.retry.max_retries) {
                return Err(Failure::Provider(err));
            }
            let delay = self.retry.delay_for(attempt);
            tracing::warn!(attempt, ?delay, error = %err, "retrying completion");
            tokio::time::sleep(delay).await;
            attempt += 1;
        }
    }

    fn report_latency(&self, kind: GenerationKind, latency_ms: u64) {
        let (lo, hi) = latency_envelope(kind);
        tracing::info!(
            provider = self.provider.name(),
            kind = kind.as_str(),
            latency_ms,
            envelope_ms = %format!("{lo}-{hi}"),
            within = latency_ms <= hi,
            "completion finished"
        );
    }
}

/// Turns provider sources into citations. Offsets that fall outside the
/// text are dropped with a warning.
pub fn anchor_citations(
    text: &str,
    sources: Vec<SourceRef>,
    warnings: &mut Vec<String>,
) -> Vec<Citation> {
    let len = text.chars().count();
    sources
        .into_iter()
        .map(|s| {
            let anchor = match (s.start, s.end) {
                (Some(start), Some(end)) if start <= end && end <= len => {
                    Some(Anchor { start, end })
                }
                (Some(start), Some(end)) => {
                    warnings.push(format!(
                        "citation '{}' anchor [{start}, {end}) outside text of {len} characters dropped",
                        s.title
                    ));
                    None
                }
                _ => None,
            };
            Citation {
                title: s.title,
                url: s.url,
                anchor,
            }
        })
        .collect()
}
