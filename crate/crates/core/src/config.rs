//! Data directory layout and `config.json`.
//!
//! ```text
//! <data_dir>/
//!   config.json
//!   datasets/<name>/{bars,news,fundamentals,insiders}.jsonl
//!   prompts/<role>.v<N>.txt
//!   funds/<fund_id>/events.jsonl
//!   runs/<run_id>.json
//!   cassettes/<run_id>.jsonl
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::PromptLibrary;
use crate::arena::{Arena, ArenaError, FundRequest};
use crate::gateway::{Gateway, GatewayMode, ModelSpec, ProviderProfile, RetryPolicy, WireDialect};
use crate::market::{
    load_dataset, sample_dataset, write_dataset, FactSource, LiveFeed, MarketClock, MarketStore, ReplaySource,
    SampleSpec,
};
use crate::portfolio::ExecutionPolicy;

pub const CONFIG_FILE: &str = "config.json";
pub const SAMPLE_DATASET: &str = "datasets/sample";
pub const MOCK_PROVIDER: &str = "mock";
pub const MOCK_MODEL: &str = "mock-1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Arena(#[from] ArenaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay_ms: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveFeedConfig {
    pub base_url: String,
    #[serde(default)]
    pub auth_env_var: Option<String>,
    /// Where fetched facts are written as a replayable dataset.
    #[serde(default)]
    pub snapshot_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArenaConfig {
    pub mode: GatewayMode,
    /// Fixture dataset directory, relative to the data dir.
    pub dataset: Option<PathBuf>,
    pub clock: MarketClock,
    pub providers: Vec<ProviderProfile>,
    pub models: Vec<ModelSpec>,
    pub max_concurrency: usize,
    pub retry: RetryConfig,
    pub live_feed: Option<LiveFeedConfig>,
    pub rank_key: String,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Replay,
            dataset: Some(PathBuf::from(SAMPLE_DATASET)),
            clock: MarketClock::default(),
            providers: vec![ProviderProfile {
                name: MOCK_PROVIDER.into(),
                base_url: String::new(),
                auth_env_var: None,
                wire_dialect: WireDialect::Mock,
            }],
            models: vec![ModelSpec::new(MOCK_MODEL, MOCK_PROVIDER, "scripted")],
            max_concurrency: crate::gateway::DEFAULT_MAX_CONCURRENCY,
            retry: RetryConfig::default(),
            live_feed: None,
            rank_key: "sharpe".into(),
        }
    }
}

/// `ARENA_LLM_KEY_<PROFILE>`, with the profile name upper-cased and other
/// characters mapped to `_`.
pub fn credential_var(profile: &str) -> String {
    let suffix: String =
        profile.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' }).collect();
    format!("ARENA_LLM_KEY_{suffix}")
}

impl ArenaConfig {
    pub fn load(data_dir: &Path) -> Result<Self, ConfigError> {
        let path = data_dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| ConfigError::BadConfig(format!("{}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| ConfigError::BadConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, data_dir: &Path) -> Result<(), ConfigError> {
        fs::create_dir_all(data_dir)?;
        let text = serde_json::to_string_pretty(self).map_err(|e| ConfigError::BadConfig(e.to_string()))?;
        fs::write(data_dir.join(CONFIG_FILE), text + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::BadConfig(m));
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be positive".into());
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be positive".into());
        }
        if self.clock.decision_utc < self.clock.close_utc {
            return bad("clock.decision_utc must not be before clock.close_utc".into());
        }
        for m in &self.models {
            if !self.providers.iter().any(|p| p.name == m.provider) {
                return bad(format!("model {} names unknown provider {}", m.spec_id, m.provider));
            }
        }
        if !crate::metrics::METRIC_NAMES.contains(&self.rank_key.as_str()) {
            return bad(format!("unknown rank_key {}", self.rank_key));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { max_attempts: self.retry.max_attempts, base_delay: Duration::from_millis(self.retry.base_delay_ms) }
    }
}

/// Components an arena is built from, exposed so tests can swap pieces.
pub struct ArenaParts {
    pub market: Arc<MarketStore>,
    pub source: Arc<dyn FactSource>,
    pub gateway: Arc<Gateway>,
    pub prompts: Arc<PromptLibrary>,
}

/// Build the market store, gateway and prompt library that `cfg`
/// describes. Cassettes found under `cassettes/` are loaded.
pub fn build_parts(data_dir: &Path, cfg: &ArenaConfig) -> Result<ArenaParts, ConfigError> {
    let market = Arc::new(MarketStore::new(cfg.clock));
    if let Some(rel) = &cfg.dataset {
        let dir = data_dir.join(rel);
        let facts = load_dataset(&dir, &cfg.clock).map_err(|e| ConfigError::BadConfig(format!("dataset: {e}")))?;
        market.ingest_records("fixture", facts).map_err(|e| ConfigError::BadConfig(format!("dataset: {e}")))?;
    }

    let gateway = Gateway::with_limits(cfg.mode, cfg.max_concurrency, cfg.retry_policy());
    for p in &cfg.providers {
        let mut p = p.clone();
        if p.wire_dialect != WireDialect::Mock && p.auth_env_var.is_none() {
            p.auth_env_var = Some(credential_var(&p.name));
        }
        gateway.register_provider(p).map_err(|e| ConfigError::BadConfig(e.to_string()))?;
    }
    for m in &cfg.models {
        gateway.register_model(m.clone());
    }
    let cassettes = data_dir.join("cassettes");
    if cassettes.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(&cassettes)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|x| x.to_str()) == Some("jsonl"))
            .collect();
        paths.sort();
        for p in paths {
            let n = gateway.cassette_import(&p).map_err(|e| ConfigError::BadConfig(e.to_string()))?;
            tracing::debug!(path = %p.display(), exchanges = n, "cassette loaded");
        }
    }

    let prompts =
        PromptLibrary::load_dir(&data_dir.join("prompts")).map_err(|e| ConfigError::BadConfig(e.to_string()))?;

    let source: Arc<dyn FactSource> = match (&cfg.live_feed, cfg.mode) {
        (Some(feed), GatewayMode::Live) => {
            let mut f = LiveFeed::new(feed.base_url.clone());
            if let Some(v) = &feed.auth_env_var {
                f = f.with_auth_env(v.clone());
            }
            if let Some(d) = &feed.snapshot_dir {
                f = f.with_snapshot_dir(data_dir.join(d));
            }
            Arc::new(f)
        }
        _ => Arc::new(ReplaySource),
    };
    Ok(ArenaParts { market, source, gateway: Arc::new(gateway), prompts: Arc::new(prompts) })
}

/// Open the arena in `data_dir` using its `config.json`.
pub fn open_arena(data_dir: &Path, cfg: &ArenaConfig) -> Result<Arena, ConfigError> {
    let parts = build_parts(data_dir, cfg)?;
    Ok(Arena::open(data_dir, parts.market, parts.source, parts.gateway, parts.prompts)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitSummary {
    pub config_written: bool,
    pub dataset: PathBuf,
    pub facts: usize,
    pub first_day: Option<NaiveDate>,
    pub last_day: Option<NaiveDate>,
}

/// Scaffold a data directory with a config, the sample dataset and the
/// builtin prompt templates. An existing config is kept.
pub fn init_data_dir(data_dir: &Path, spec: &SampleSpec) -> Result<InitSummary, ConfigError> {
    fs::create_dir_all(data_dir)?;
    let config_path = data_dir.join(CONFIG_FILE);
    let config_written = !config_path.exists();
    let cfg = if config_written {
        let cfg = ArenaConfig::default();
        cfg.save(data_dir)?;
        cfg
    } else {
        ArenaConfig::load(data_dir)?
    };
    let facts = sample_dataset(spec, &cfg.clock);
    let dataset = data_dir.join(SAMPLE_DATASET);
    write_dataset(&dataset, &facts).map_err(|e| ConfigError::BadConfig(e.to_string()))?;
    PromptLibrary::write_builtin(&data_dir.join("prompts")).map_err(|e| ConfigError::BadConfig(e.to_string()))?;
    for sub in ["funds", "runs", "cassettes"] {
        fs::create_dir_all(data_dir.join(sub))?;
    }
    let mut days: Vec<NaiveDate> = facts
        .iter()
        .filter_map(|f| match f {
            crate::market::Fact::Bar(b) => Some(b.date),
            _ => None,
        })
        .collect();
    days.sort();
    Ok(InitSummary {
        config_written,
        dataset,
        facts: facts.len(),
        first_day: days.first().copied(),
        last_day: days.last().copied(),
    })
}

/// A headless run: one fund replayed over a date range.
///
/// ```json
/// {
///   "fund": {"name": "demo", "model_spec": "mock-1", "stock_pool": ["AAPL"], "initial_cash": "100000"},
///   "model_spec": null,
///   "from": "2025-01-02",
///   "to": "2025-01-15",
///   "execution_policy": "CLOSE",
///   "allow_contaminated": false
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub fund: FundRequest,
    /// Registered before the fund is created, replacing a spec with the
    /// same id.
    #[serde(default)]
    pub model_spec: Option<ModelSpec>,
    pub from: NaiveDate,
    pub to: NaiveDate,
    #[serde(default)]
    pub execution_policy: Option<ExecutionPolicy>,
    #[serde(default)]
    pub allow_contaminated: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ConfigError::BadConfig(format!("{}: {e}", path.display())))
    }

    /// The fund request with the run-level policy applied.
    pub fn fund_request(&self) -> FundRequest {
        let mut req = self.fund.clone();
        if let Some(p) = self.execution_policy {
            req.config.execution_policy = p;
        }
        req
    }
}
