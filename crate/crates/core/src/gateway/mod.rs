//! Provider-agnostic chat completion with retries, bounded concurrency and
//! record/replay cassettes.

mod backend;
mod cassette;
mod mock;

pub use backend::{BackendError, ChatBackend, FnBackend, ProviderProfile, WireDialect};
pub use cassette::Cassette;
pub use mock::MockBackend;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::canonical::canonical_hash;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("llm unavailable: {reason}")]
    Unavailable { reason: String },
    #[error("cassette miss for request {hash}")]
    CassetteMiss { hash: String },
    #[error("unknown model spec {0}")]
    UnknownModel(String),
    #[error("unknown provider {0}")]
    UnknownProvider(String),
    #[error("provider {0} already registered")]
    DuplicateProvider(String),
    #[error("corrupt cassette at line {line}: {reason}")]
    CorruptCassette { line: usize, reason: String },
    #[error("cassette io: {0}")]
    Io(String),
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub spec_id: String,
    pub provider: String,
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    /// Last date covered by the model's training data, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_cutoff: Option<NaiveDate>,
}

impl ModelSpec {
    pub fn new(spec_id: impl Into<String>, provider: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            spec_id: spec_id.into(),
            provider: provider.into(),
            model_name: model_name.into(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_s: default_timeout(),
            knowledge_cutoff: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub spec_id: String,
}

impl ChatRequest {
    /// Hex SHA-256 over the canonical (sorted-key) serialization.
    pub fn hash(&self) -> String {
        canonical_hash(self).expect("request serializes")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: String,
    pub latency_ms: u64,
    pub token_counts: TokenCounts,
}

impl ChatResponse {
    pub fn text_only(text: impl Into<String>) -> Self {
        Self { text: text.into(), finish_reason: "stop".into(), latency_ms: 0, token_counts: TokenCounts::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request: ChatRequest,
    pub response: ChatResponse,
    pub request_hash: String,
}

/// A finished call and how it was served.
#[derive(Debug, Clone)]
pub struct Completion {
    pub exchange: ChatExchange,
    pub attempts: u32,
    pub replayed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    /// Call providers and record every exchange.
    Live,
    /// Serve from the cassette; a miss is an error unless the provider is offline.
    Replay,
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1` (1-based `attempt`): 1x, 2x, 4x base.
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

pub const DEFAULT_MAX_CONCURRENCY: usize = 4;

pub struct Gateway {
    mode: GatewayMode,
    retry: RetryPolicy,
    providers: RwLock<HashMap<String, Arc<dyn ChatBackend>>>,
    models: RwLock<HashMap<String, ModelSpec>>,
    cassette: Mutex<Cassette>,
    permits: Semaphore,
}

impl Gateway {
    pub fn new(mode: GatewayMode) -> Self {
        Self::with_limits(mode, DEFAULT_MAX_CONCURRENCY, RetryPolicy::default())
    }

    pub fn with_limits(mode: GatewayMode, max_concurrency: usize, retry: RetryPolicy) -> Self {
        Self {
            mode,
            retry,
            providers: RwLock::new(HashMap::new()),
            models: RwLock::new(HashMap::new()),
            cassette: Mutex::new(Cassette::default()),
            permits: Semaphore::new(max_concurrency.max(1)),
        }
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn register_provider(&self, profile: ProviderProfile) -> Result<(), LlmError> {
        let name = profile.name.clone();
        let backend: Arc<dyn ChatBackend> = match profile.wire_dialect {
            WireDialect::Mock => Arc::new(MockBackend),
            _ => Arc::new(backend::HttpBackend::new(profile)),
        };
        self.register_backend(name, backend)
    }

    pub fn register_backend(&self, name: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Result<(), LlmError> {
        let name = name.into();
        let mut providers = self.providers.write().expect("providers lock");
        if providers.contains_key(&name) {
            return Err(LlmError::DuplicateProvider(name));
        }
        providers.insert(name, backend);
        Ok(())
    }

    /// Register (or replace) a model spec.
    pub fn register_model(&self, spec: ModelSpec) {
        self.models.write().expect("models lock").insert(spec.spec_id.clone(), spec);
    }

    pub fn model(&self, spec_id: &str) -> Result<ModelSpec, LlmError> {
        self.models
            .read()
            .expect("models lock")
            .get(spec_id)
            .cloned()
            .ok_or_else(|| LlmError::UnknownModel(spec_id.to_string()))
    }

    pub fn models(&self) -> Vec<ModelSpec> {
        let mut v: Vec<ModelSpec> = self.models.read().expect("models lock").values().cloned().collect();
        v.sort_by(|a, b| a.spec_id.cmp(&b.spec_id));
        v
    }

    fn backend(&self, provider: &str) -> Result<Arc<dyn ChatBackend>, LlmError> {
        self.providers
            .read()
            .expect("providers lock")
            .get(provider)
            .cloned()
            .ok_or_else(|| LlmError::UnknownProvider(provider.to_string()))
    }

    pub async fn complete(&self, system: &str, user: &str, spec_id: &str) -> Result<Completion, LlmError> {
        let spec = self.model(spec_id)?;
        let request = ChatRequest { system: system.into(), user: user.into(), spec_id: spec_id.into() };
        let hash = request.hash();
        let backend = self.backend(&spec.provider)?;

        if self.mode == GatewayMode::Replay {
            if let Some(ex) = self.cassette.lock().expect("cassette lock").get(&hash) {
                return Ok(Completion { exchange: ex.clone(), attempts: 0, replayed: true });
            }
            if !backend.is_offline() {
                tracing::error!(%hash, spec_id, "cassette miss in replay mode");
                return Err(LlmError::CassetteMiss { hash });
            }
        }

        let _permit = self.permits.acquire().await.expect("semaphore closed");
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            match backend.send(&request, &spec).await {
                Ok(r) => break r,
                Err(BackendError::Retryable(reason)) if attempt < self.retry.max_attempts => {
                    let wait = self.retry.delay(attempt);
                    tracing::warn!(attempt, ?wait, %reason, "retrying llm call");
                    tokio::time::sleep(wait).await;
                }
                Err(BackendError::Retryable(reason)) | Err(BackendError::Fatal(reason)) => {
                    tracing::error!(attempt, %reason, spec_id, "llm call failed");
                    return Err(LlmError::Unavailable { reason });
                }
            }
        };
        tracing::debug!(attempts = attempt, spec_id, "llm call completed");
        let exchange = ChatExchange { request, response, request_hash: hash };
        self.cassette.lock().expect("cassette lock").insert(exchange.clone());
        Ok(Completion { exchange, attempts: attempt, replayed: false })
    }

    pub fn cassette_len(&self) -> usize {
        self.cassette.lock().expect("cassette lock").len()
    }

    pub fn cassette_import(&self, path: &Path) -> Result<usize, LlmError> {
        self.cassette.lock().expect("cassette lock").import(path)
    }

    /// Export the exchanges in `hashes` (or all of them) to `path`.
    pub fn cassette_export(&self, path: &Path, hashes: Option<&BTreeSet<String>>) -> Result<usize, LlmError> {
        self.cassette.lock().expect("cassette lock").export(path, hashes)
    }
}
