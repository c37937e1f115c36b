//! HTTPS provider for chat-completion style endpoints.
//!
//! Plain completions use `POST {base}/chat/completions`. Cited completions
//! use `POST {base}/responses` with the web search tool, whose
//! `url_citation` annotations carry title, url and character offsets.
//! Images use `POST {base}/images/generations` and return a URL.

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{CompletionRequest, Provider, ProviderError, ProviderResponse, SourceRef};
use crate::model::GenerationKind;

pub const API_KEY_ENV: &str = "GENTL_API_KEY";
const BODY_EXCERPT_CHARS: usize = 300;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveConfig {
    pub base_url: String,
    pub model: String,
    pub image_model: String,
    pub api_key: String,
    pub search: bool,
}

impl LiveConfig {
    /// Reads the API key from `GENTL_API_KEY`.
    pub fn from_env(base_url: &str, model: &str) -> Result<Self, String> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| format!("{API_KEY_ENV} must be set for the live provider"))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            image_model: "dall-e-3".to_string(),
            api_key,
            search: true,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LiveProvider {
    cfg: LiveConfig,
    http: reqwest::Client,
}

impl LiveProvider {
    pub fn new(cfg: LiveConfig) -> Self {
        Self {
            cfg,
            http: reqwest::Client::new(),
        }
    }

    async fn post(&self, path: &str, body: Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{path}", self.cfg.base_url.trim_end_matches('/'));
        let resp = self
            .http
            .post(&url)
            .bearer_auth(&self.cfg.api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Status {
                status: status.as_u16(),
                body: text.chars().take(BODY_EXCERPT_CHARS).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::BadPayload(e.to_string()))
    }

    async fn image(&self, req: &CompletionRequest) -> Result<ProviderResponse, ProviderError> {
        let v = self
            .post(
                "images/generations",
                json!({ "model": self.cfg.image_model, "prompt": req.prompt, "n": 1 }),
            )
            .await?;
        let url = v
            .pointer("/data/0/url")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::BadPayload("no image url in response".into()))?;
        Ok(ProviderResponse {
            text: url.to_string(),
            sources: Vec::new(),
        })
    }
}

#[async_trait]
impl Provider for LiveProvider {
    fn name(&self) -> &str {
        "live"
    }

    fn supports_search(&self) -> bool {
        self.cfg.search
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<ProviderResponse, ProviderError> {
        if req.kind == GenerationKind::Image {
            return self.image(req).await;
        }
        let v = self
            .post(
                "chat/completions",
                json!({
                    "model": self.cfg.model,
                    "temperature": req.temperature,
                    "messages": [{ "role": "user", "content": req.prompt }],
                }),
            )
            .await?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::BadPayload("no message content in response".into()))?;
        Ok(ProviderResponse {
            text: text.to_string(),
            sources: Vec::new(),
        })
    }

    async fn search(&self, req: &CompletionRequest) -> Result<ProviderResponse, ProviderError> {
        if !self.cfg.search {
            return Err(ProviderError::SearchUnavailable);
        }
        let v = self
            .post(
                "responses",
                json!({
                    "model": self.cfg.model,
                    "temperature": req.temperature,
                    "input": req.prompt,
                    "tools": [{ "type": "web_search_preview" }],
                }),
            )
            .await?;
        parse_responses_output(&v)
    }
}

/// Collects output text and `url_citation` annotations from a responses
/// payload. Offsets of later text parts are shifted by the characters
/// that precede them.
fn parse_responses_output(v: &Value) -> Result<ProviderResponse, ProviderError> {
    let items = v
        .get("output")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::BadPayload("missing output array".into()))?;
    let mut text = String::new();
    let mut sources = Vec::new();
    for part in items
        .iter()
        .filter(|i| i.get("type").and_then(Value::as_str) == Some("message"))
        .filter_map(|i| i.get("content").and_then(Value::as_array))
        .flatten()
        .filter(|c| c.get("type").and_then(Value::as_str) == Some("output_text"))
    {
        let offset = text.chars().count();
        text.push_str(part.get("text").and_then(Value::as_str).unwrap_or_default());
        let annotations = part.get("annotations").and_then(Value::as_array);
        for a in annotations.into_iter().flatten() {
            if a.get("type").and_then(Value::as_str) != Some("url_citation") {
                continue;
            }
            let Some(url) = a.get("url").and_then(Value::as_str) else {
                continue;
            };
            let idx = |k: &str| {
                a.get(k)
                    .and_then(Value::as_u64)
                    .map(|n| n as usize + offset)
            };
            sources.push(SourceRef {
                title: a
                    .get("title")
                    .and_then(Value::as_str)
                    .unwrap_or(url)
                    .to_string(),
                url: url.to_string(),
                start: idx("start_index"),
                end: idx("end_index"),
            });
        }
    }
    if text.is_empty() {
        return Err(ProviderError::BadPayload("no output text".into()));
    }
    Ok(ProviderResponse { text, sources })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn responses_payload() {
        let v = json!({
            "output": [
                { "type": "web_search_call", "status": "completed" },
                { "type": "message", "content": [
                    { "type": "output_text", "text": "First claim. ", "annotations": [
                        { "type": "url_citation", "start_index": 0, "end_index": 12,
                          "url": "https://a.example", "title": "A" }
                    ]},
                    { "type": "output_text", "text": "Second.", "annotations": [
                        { "type": "url_citation", "start_index": 0, "end_index": 7,
                          "url": "https://b.example" }
                    ]}
                ]}
            ]
        });
        let r = parse_responses_output(&v).unwrap();
        assert_eq!(r.text, "First claim. Second.");
        assert_eq!(r.sources.len(), 2);
        assert_eq!((r.sources[1].start, r.sources[1].end), (Some(13), Some(20)));
        assert_eq!(r.sources[1].title, "https://b.example");
    }

    #[test]
    fn responses_payload_without_text() {
        assert!(parse_responses_output(&json!({ "output": [] })).is_err());
        assert!(parse_responses_output(&json!({})).is_err());
    }
}
