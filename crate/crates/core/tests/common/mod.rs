#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use arena_core::agents::PromptLibrary;
use arena_core::arena::{Arena, FundRequest};
use arena_core::gateway::{BackendError, ChatBackend, ChatRequest, FnBackend, Gateway, GatewayMode, MockBackend, ModelSpec, RetryPolicy};
use arena_core::market::{sample_dataset, Fact, FactSource, MarketClock, MarketStore, ReplaySource, SampleSpec, Ticker};
use arena_core::portfolio::{FundConfig, FundId};
use chrono::NaiveDate;
use rust_decimal::Decimal;

pub const MODEL: &str = "m1";

pub fn tickers(names: &[&str]) -> Vec<Ticker> {
    names.iter().map(|s| Ticker::new(*s).unwrap()).collect()
}

pub fn spec(names: &[&str], days: usize) -> SampleSpec {
    SampleSpec { tickers: tickers(names), trading_days: days, ..SampleSpec::default() }
}

pub fn facts(names: &[&str], days: usize) -> Vec<Fact> {
    sample_dataset(&spec(names, days), &MarketClock::default())
}

pub fn store(facts: Vec<Fact>) -> Arc<MarketStore> {
    let s = MarketStore::new(MarketClock::default());
    s.ingest_records("test", facts).unwrap();
    Arc::new(s)
}

pub fn gateway(mode: GatewayMode, backend: Arc<dyn ChatBackend>, cutoff: Option<NaiveDate>) -> Arc<Gateway> {
    let g = Gateway::with_limits(mode, 4, RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(1) });
    g.register_backend("p", backend).unwrap();
    let mut m = ModelSpec::new(MODEL, "p", "scripted");
    m.knowledge_cutoff = cutoff;
    g.register_model(m);
    Arc::new(g)
}

pub fn mock_gateway() -> Arc<Gateway> {
    gateway(GatewayMode::Live, Arc::new(MockBackend), None)
}

/// Scripted model: planner covers the pool, analysts are neutral, and the
/// manager answers with `manager(user_prompt)`.
pub fn scripted(manager: impl Fn(&str) -> String + Send + Sync + 'static) -> Arc<dyn ChatBackend> {
    Arc::new(FnBackend::new(move |r: &ChatRequest| -> Result<String, BackendError> {
        if r.system.starts_with("ROLE: manager") {
            return Ok(manager(&r.user));
        }
        Ok(MockBackend::respond(r))
    }))
}

pub fn arena_with(dir: &Path, market: Arc<MarketStore>, gateway: Arc<Gateway>) -> Arena {
    arena_with_source(dir, market, gateway, Arc::new(ReplaySource))
}

pub fn arena_with_source(
    dir: &Path,
    market: Arc<MarketStore>,
    gateway: Arc<Gateway>,
    source: Arc<dyn FactSource>,
) -> Arena {
    Arena::open(dir, market, source, gateway, Arc::new(PromptLibrary::builtin())).unwrap()
}

pub fn fund_request(names: &[&str], cash: i64) -> FundRequest {
    FundRequest {
        name: "test fund".into(),
        model_spec: MODEL.into(),
        stock_pool: names.iter().map(|s| s.to_string()).collect(),
        initial_cash: Decimal::from(cash),
        config: FundConfig::default(),
        fund_id: None,
        inception: None,
    }
}

pub fn create(arena: &Arena, names: &[&str], cash: i64) -> FundId {
    arena.create_fund(&fund_request(names, cash)).unwrap().fund.fund_id
}

pub fn days(arena: &Arena) -> Vec<NaiveDate> {
    arena.market().trading_days()
}
