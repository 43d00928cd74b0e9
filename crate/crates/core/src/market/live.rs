use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::Value;

use super::{
    AsOf, DatasetFiles, Fact, FundamentalSnapshot, InsiderTransaction, MarketClock, MarketDataError,
    MarketStore, NewsItem, PriceBar, Ticker,
};

/// Where facts come from before they are queried out of the store.
#[async_trait]
pub trait FactSource: Send + Sync {
    /// Bring the store up to date for `tickers` as of `as_of`.
    async fn refresh(
        &self,
        store: &MarketStore,
        tickers: &[Ticker],
        as_of: &AsOf,
    ) -> Result<(), MarketDataError>;

    fn is_live(&self) -> bool;
}

/// Offline mode: the store already holds the whole fixture.
pub struct ReplaySource;

#[async_trait]
impl FactSource for ReplaySource {
    async fn refresh(&self, _: &MarketStore, _: &[Ticker], _: &AsOf) -> Result<(), MarketDataError> {
        Ok(())
    }

    fn is_live(&self) -> bool {
        false
    }
}

/// HTTP feed serving `GET {base}/{bars|news|fundamentals|insiders}?ticker=&as_of=`,
/// each answering a JSON array of records. Everything received is
/// snapshotted into a replay dataset directory when one is configured.
pub struct LiveFeed {
    client: reqwest::Client,
    base_url: String,
    auth_env_var: Option<String>,
    snapshot_dir: Option<PathBuf>,
    snapshot_lock: Mutex<()>,
}

impl LiveFeed {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("http client"),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            auth_env_var: None,
            snapshot_dir: None,
            snapshot_lock: Mutex::new(()),
        }
    }

    pub fn with_auth_env(mut self, var: impl Into<String>) -> Self {
        self.auth_env_var = Some(var.into());
        self
    }

    pub fn with_snapshot_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.snapshot_dir = Some(dir.into());
        self
    }

    async fn fetch(&self, kind: &str, ticker: &Ticker, as_of: &AsOf) -> Result<Vec<Value>, MarketDataError> {
        let url = format!("{}/{kind}", self.base_url);
        let mut req = self
            .client
            .get(&url)
            .query(&[("ticker", ticker.as_str()), ("as_of", &as_of.instant.to_rfc3339())]);
        if let Some(var) = &self.auth_env_var {
            let key = std::env::var(var)
                .map_err(|_| MarketDataError::ProviderUnavailable(format!("credentials: {var} not set")))?;
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| MarketDataError::ProviderUnavailable(format!("{url}: {e}")))?;
        if !resp.status().is_success() {
            return Err(MarketDataError::ProviderUnavailable(format!("{url}: HTTP {}", resp.status())));
        }
        resp.json::<Vec<Value>>()
            .await
            .map_err(|e| MarketDataError::ProviderUnavailable(format!("{url}: bad body: {e}")))
    }

    fn snapshot(&self, facts: &[Fact]) -> Result<(), MarketDataError> {
        let Some(dir) = &self.snapshot_dir else { return Ok(()) };
        let _guard = self.snapshot_lock.lock().expect("snapshot lock");
        std::fs::create_dir_all(dir).map_err(|e| MarketDataError::Io(e.to_string()))?;
        for fact in facts {
            let (name, line) = match fact {
                Fact::Bar(v) => (DatasetFiles::BARS, crate::canonical::to_canonical_string(v)),
                Fact::News(v) => (DatasetFiles::NEWS, crate::canonical::to_canonical_string(v)),
                Fact::Fundamental(v) => (DatasetFiles::FUNDAMENTALS, crate::canonical::to_canonical_string(v)),
                Fact::Insider(v) => (DatasetFiles::INSIDERS, crate::canonical::to_canonical_string(v)),
            };
            let line = line.map_err(|e| MarketDataError::Io(e.to_string()))?;
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(name))
                .map_err(|e| MarketDataError::Io(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| MarketDataError::Io(e.to_string()))?;
        }
        Ok(())
    }
}

fn decode<T: serde::de::DeserializeOwned>(kind: &str, v: Value) -> Result<T, MarketDataError> {
    serde_json::from_value(v)
        .map_err(|e| MarketDataError::ProviderUnavailable(format!("{kind}: malformed record: {e}")))
}

fn stamp_bar(mut v: Value, clock: &MarketClock) -> Value {
    if v.get("available_at").is_none() {
        if let Some(date) = v.get("date").and_then(Value::as_str).and_then(|s| s.parse().ok()) {
            if let Some(obj) = v.as_object_mut() {
                obj.insert("available_at".into(), serde_json::to_value(clock.close_of(date)).unwrap());
            }
        }
    }
    v
}

#[async_trait]
impl FactSource for LiveFeed {
    async fn refresh(
        &self,
        store: &MarketStore,
        tickers: &[Ticker],
        as_of: &AsOf,
    ) -> Result<(), MarketDataError> {
        for t in tickers {
            let mut facts = Vec::new();
            for v in self.fetch("bars", t, as_of).await? {
                facts.push(Fact::Bar(decode::<PriceBar>("bars", stamp_bar(v, store.clock()))?));
            }
            for v in self.fetch("news", t, as_of).await? {
                facts.push(Fact::News(decode::<NewsItem>("news", v)?));
            }
            for v in self.fetch("fundamentals", t, as_of).await? {
                facts.push(Fact::Fundamental(decode::<FundamentalSnapshot>("fundamentals", v)?));
            }
            for v in self.fetch("insiders", t, as_of).await? {
                facts.push(Fact::Insider(decode::<InsiderTransaction>("insiders", v)?));
            }
            store.ingest_records("live", facts.clone())?;
            self.snapshot(&facts)?;
        }
        Ok(())
    }

    fn is_live(&self) -> bool {
        true
    }
}
