use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatRequest, ChatResponse, ModelSpec, TokenCounts};

/// How a provider speaks HTTP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireDialect {
    /// `POST {base}/chat/completions` with `messages`, answered by `choices[0].message.content`.
    OpenaiChat,
    /// `POST {base}` with `{"prompt": ...}`, answered by `{"response": ...}`.
    PromptResponse,
    /// In-process deterministic responder; no network.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub name: String,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub auth_env_var: Option<String>,
    pub wire_dialect: WireDialect,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth another attempt: 408/429/5xx, timeouts, connection failures.
    Retryable(String),
    Fatal(String),
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn send(&self, request: &ChatRequest, spec: &ModelSpec) -> Result<ChatResponse, BackendError>;

    /// Offline backends never touch the network, so replay mode may call
    /// them on a cassette miss.
    fn is_offline(&self) -> bool {
        false
    }
}

/// Backend built from a closure, for scripted tests and embedding.
pub struct FnBackend<F> {
    f: F,
    offline: bool,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f, offline: true }
    }

    /// Treat the closure as if it were a remote service.
    pub fn online(f: F) -> Self {
        Self { f, offline: false }
    }
}

#[async_trait]
impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync,
{
    async fn send(&self, request: &ChatRequest, _spec: &ModelSpec) -> Result<ChatResponse, BackendError> {
        let text = (self.f)(request)?;
        Ok(ChatResponse::text_only(text))
    }

    fn is_offline(&self) -> bool {
        self.offline
    }
}

pub(crate) struct HttpBackend {
    client: reqwest::Client,
    profile: ProviderProfile,
}

impl HttpBackend {
    pub(crate) fn new(profile: ProviderProfile) -> Self {
        Self { client: reqwest::Client::new(), profile }
    }

    fn body(&self, request: &ChatRequest, spec: &ModelSpec) -> (String, Value) {
        let base = self.profile.base_url.trim_end_matches('/');
        match self.profile.wire_dialect {
            WireDialect::OpenaiChat => (
                format!("{base}/chat/completions"),
                json!({
                    "model": spec.model_name,
                    "messages": [
                        {"role": "system", "content": request.system},
                        {"role": "user", "content": request.user},
                    ],
                    "temperature": spec.temperature,
                    "max_tokens": spec.max_tokens,
                }),
            ),
            _ => (
                base.to_string(),
                json!({
                    "model": spec.model_name,
                    "prompt": format!("{}\n\n{}", request.system, request.user),
                    "temperature": spec.temperature,
                    "max_tokens": spec.max_tokens,
                }),
            ),
        }
    }

    fn decode(&self, v: &Value) -> Result<(String, String, TokenCounts), BackendError> {
        let bad = || BackendError::Fatal("unexpected response shape".into());
        match self.profile.wire_dialect {
            WireDialect::OpenaiChat => {
                let choice = v.get("choices").and_then(|c| c.get(0)).ok_or_else(bad)?;
                let text = choice.pointer("/message/content").and_then(Value::as_str).ok_or_else(bad)?;
                let finish = choice.get("finish_reason").and_then(Value::as_str).unwrap_or("stop");
                let tokens = TokenCounts {
                    prompt: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
                    completion: v.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
                };
                Ok((text.to_string(), finish.to_string(), tokens))
            }
            _ => {
                let text = v.get("response").and_then(Value::as_str).ok_or_else(bad)?;
                Ok((text.to_string(), "stop".to_string(), TokenCounts::default()))
            }
        }
    }
}

pub(crate) fn is_retryable_status(status: u16) -> bool {
    matches!(status, 408 | 429 | 500..=599)
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn send(&self, request: &ChatRequest, spec: &ModelSpec) -> Result<ChatResponse, BackendError> {
        let (url, body) = self.body(request, spec);
        let mut req = self.client.post(&url).timeout(Duration::from_secs(spec.timeout_s)).json(&body);
        if let Some(var) = &self.profile.auth_env_var {
            let key = std::env::var(var)
                .map_err(|_| BackendError::Fatal(format!("credentials: {var} is not set")))?;
            req = req.bearer_auth(key);
        }
        let started = Instant::now();
        let resp = req.send().await.map_err(|e| BackendError::Retryable(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        if !resp.status().is_success() {
            let msg = format!("{url}: HTTP {status}");
            return Err(if is_retryable_status(status) {
                BackendError::Retryable(msg)
            } else {
                BackendError::Fatal(msg)
            });
        }
        let v: Value = resp.json().await.map_err(|e| BackendError::Retryable(format!("{url}: {e}")))?;
        let (text, finish_reason, token_counts) = self.decode(&v)?;
        Ok(ChatResponse {
            text,
            finish_reason,
            latency_ms: started.elapsed().as_millis() as u64,
            token_counts,
        })
    }
}
