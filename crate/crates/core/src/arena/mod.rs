//! The trading arena: funds, cycles, replays and live runs.
//!
//! A cycle for one fund and one trading day gathers gated market context,
//! runs planner, analysts and manager, executes the decisions and marks the
//! fund. All of its events are appended in one write, so a cycle is either
//! complete in the log or recorded as failed with nothing applied.

pub mod record;
pub mod runs;
pub mod schedule;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Days, NaiveDate, Utc};
use futures::future::join_all;
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    Action, AgentPipeline, AnalystContext, AnalystKind, ManagerContext, PlannerContext,
};
use crate::canonical::canonical_hash;
use crate::events::{
    CycleTimings, EventBody, EventFilter, EventPage, EventStore, EventStoreError, FundState,
};
use crate::gateway::{Gateway, LlmError};
use crate::market::{
    audit_leakage, AsOf, FactSource, MarketClock, MarketDataError, MarketStore, PriceBar, Ticker,
};
use crate::metrics::{compute_metrics, leaderboard, LeaderboardRow, MetricsError, MetricsReport};
use crate::portfolio::{
    append_memory, execute_decision, mark_to_market, ExecutionPolicy, Fund, FundConfig, FundId,
    MemoryEntry, PendingOrder, PortfolioError,
};

pub use record::{cycle_records, CycleRecord};
pub use runs::{apply_command, ArenaRun, DateRange, RunCommand, RunMode, RunRegistry, RunStatus};
pub use schedule::{due_dates, TickOutcome};

/// Bars handed to the technical analyst.
pub const BAR_LOOKBACK: usize = 60;
pub const NEWS_WINDOW_DAYS: u32 = 7;
pub const INSIDER_WINDOW_DAYS: u32 = 90;
/// Backoff for deferred live cycles: doubling from the base, capped.
pub const LIVE_RETRY_BASE: std::time::Duration = std::time::Duration::from_secs(1);
pub const LIVE_RETRY_MAX: std::time::Duration = std::time::Duration::from_secs(300);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArenaError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("fund {0} already exists")]
    FundExists(FundId),
    #[error("unknown fund {0}")]
    UnknownFund(String),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("{0} is not a trading day")]
    NotTradingDay(NaiveDate),
    #[error("cycle for {got} is not after the last completed cycle {last}")]
    OutOfOrder { last: NaiveDate, got: NaiveDate },
    #[error("fund {0} is busy with another cycle")]
    FundBusy(FundId),
    #[error("dataset gap on {date}: {detail}")]
    DatasetGap { date: NaiveDate, detail: String },
    #[error("model knowledge cutoff {cutoff} is not before replay start {start}")]
    CutoffViolation { cutoff: NaiveDate, start: NaiveDate },
    #[error("illegal transition: {command} while {from}")]
    IllegalTransition { from: RunStatus, command: RunCommand },
    #[error("cycle {trading_date} failed ({code}): {cause}")]
    CycleFailed { trading_date: NaiveDate, code: String, cause: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Market(#[from] MarketDataError),
    #[error(transparent)]
    Store(EventStoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<EventStoreError> for ArenaError {
    fn from(e: EventStoreError) -> Self {
        match e {
            EventStoreError::UnknownFund(id) => ArenaError::UnknownFund(id),
            other => ArenaError::Store(other),
        }
    }
}

impl From<PortfolioError> for ArenaError {
    fn from(e: PortfolioError) -> Self {
        ArenaError::Validation(e.to_string())
    }
}

/// Every code an operator can see.
pub const ERROR_CODES: [&str; 24] = [
    "VALIDATION_FAILED",
    "FUND_EXISTS",
    "UNKNOWN_FUND",
    "UNKNOWN_RUN",
    "UNKNOWN_TICKER",
    "UNKNOWN_MODEL",
    "UNKNOWN_PROVIDER",
    "UNKNOWN_METRIC",
    "NOT_TRADING_DAY",
    "OUT_OF_ORDER",
    "FUND_BUSY",
    "DATASET_GAP",
    "CUTOFF_VIOLATION",
    "ILLEGAL_TRANSITION",
    "LLM_UNAVAILABLE",
    "CASSETTE_MISS",
    "MISSING_PRICE",
    "LEAKAGE_DETECTED",
    "PROVIDER_UNAVAILABLE",
    "SEQ_CONFLICT",
    "STORAGE_FAILURE",
    "CORRUPT_LOG",
    "BAD_CONFIG",
    "NOT_FOUND",
];

fn llm_code(e: &LlmError) -> &'static str {
    match e {
        LlmError::CassetteMiss { .. } => "CASSETTE_MISS",
        LlmError::UnknownModel(_) => "UNKNOWN_MODEL",
        LlmError::UnknownProvider(_) => "UNKNOWN_PROVIDER",
        LlmError::DuplicateProvider(_) | LlmError::CorruptCassette { .. } => "BAD_CONFIG",
        LlmError::Io(_) => "STORAGE_FAILURE",
        LlmError::Unavailable { .. } => "LLM_UNAVAILABLE",
    }
}

fn market_code(e: &MarketDataError) -> &'static str {
    match e {
        MarketDataError::UnknownTicker(_) => "UNKNOWN_TICKER",
        MarketDataError::ProviderUnavailable(_) => "PROVIDER_UNAVAILABLE",
        MarketDataError::Io(_) => "STORAGE_FAILURE",
        _ => "VALIDATION_FAILED",
    }
}

impl ArenaError {
    pub fn code(&self) -> &str {
        match self {
            ArenaError::Validation(_) => "VALIDATION_FAILED",
            ArenaError::FundExists(_) => "FUND_EXISTS",
            ArenaError::UnknownFund(_) => "UNKNOWN_FUND",
            ArenaError::UnknownRun(_) => "UNKNOWN_RUN",
            ArenaError::NotTradingDay(_) => "NOT_TRADING_DAY",
            ArenaError::OutOfOrder { .. } => "OUT_OF_ORDER",
            ArenaError::FundBusy(_) => "FUND_BUSY",
            ArenaError::DatasetGap { .. } => "DATASET_GAP",
            ArenaError::CutoffViolation { .. } => "CUTOFF_VIOLATION",
            ArenaError::IllegalTransition { .. } => "ILLEGAL_TRANSITION",
            ArenaError::CycleFailed { code, .. } => code,
            ArenaError::Llm(e) => llm_code(e),
            ArenaError::Market(e) => market_code(e),
            ArenaError::Store(e) => match e {
                EventStoreError::SeqConflict { .. } => "SEQ_CONFLICT",
                EventStoreError::StorageFailure(_) => "STORAGE_FAILURE",
                EventStoreError::CorruptLog { .. } => "CORRUPT_LOG",
                EventStoreError::UnknownFund(_) => "UNKNOWN_FUND",
                EventStoreError::InvalidFilter(_) => "VALIDATION_FAILED",
            },
            ArenaError::Metrics(e) => match e {
                MetricsError::UnknownMetric(_) => "UNKNOWN_METRIC",
                MetricsError::InvalidSeries(_) => "VALIDATION_FAILED",
            },
        }
    }
}

/// Why a cycle stopped before completing.
struct CycleAbort {
    code: &'static str,
    cause: String,
}

impl From<LlmError> for CycleAbort {
    fn from(e: LlmError) -> Self {
        Self { code: llm_code(&e), cause: e.to_string() }
    }
}

impl From<PortfolioError> for CycleAbort {
    fn from(e: PortfolioError) -> Self {
        let code = match e {
            PortfolioError::MissingPrice(_) | PortfolioError::InvalidPrice(_) => "MISSING_PRICE",
            _ => "VALIDATION_FAILED",
        };
        Self { code, cause: e.to_string() }
    }
}

impl From<MarketDataError> for CycleAbort {
    fn from(e: MarketDataError) -> Self {
        let code = match e {
            MarketDataError::UnknownTicker(_) => "MISSING_PRICE",
            _ => market_code(&e),
        };
        Self { code, cause: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundRequest {
    pub name: String,
    pub model_spec: String,
    pub stock_pool: Vec<String>,
    pub initial_cash: Decimal,
    #[serde(default)]
    pub config: FundConfig,
    /// Explicit id; otherwise derived from the request body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fund_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inception: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundSummary {
    pub fund_id: FundId,
    pub name: String,
    pub model_spec_id: String,
    pub stock_pool: Vec<Ticker>,
    pub cash: Decimal,
    pub nav: Decimal,
    pub cumulative_return: Option<f64>,
    pub status: String,
    pub last_cycle: Option<NaiveDate>,
    pub cycles: usize,
    pub contaminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run: ArenaRun,
    pub records: Vec<CycleRecord>,
    pub error: Option<ArenaError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub events: usize,
    pub exchanges: usize,
    pub missing_exchanges: usize,
}

pub struct Arena {
    data_dir: PathBuf,
    clock: MarketClock,
    market: Arc<MarketStore>,
    source: Arc<dyn FactSource>,
    gateway: Arc<Gateway>,
    pipeline: AgentPipeline,
    events: EventStore,
    runs: RunRegistry,
    locks: Mutex<HashMap<FundId, Arc<tokio::sync::Mutex<()>>>>,
}

fn sum_latency<'a>(calls: impl IntoIterator<Item = &'a crate::agents::LlmCallRef>) -> u64 {
    calls.into_iter().map(|c| c.latency_ms).sum()
}

impl Arena {
    /// Open the arena over `data_dir`. Event logs with a torn tail are
    /// truncated to their last whole append.
    pub fn open(
        data_dir: &Path,
        market: Arc<MarketStore>,
        source: Arc<dyn FactSource>,
        gateway: Arc<Gateway>,
        prompts: Arc<crate::agents::PromptLibrary>,
    ) -> Result<Self, ArenaError> {
        let events = EventStore::open(data_dir)?;
        for id in events.fund_ids()? {
            events.repair(&id)?;
        }
        let runs = RunRegistry::open(&data_dir.join("runs"))?;
        let clock = *market.clock();
        Ok(Self {
            data_dir: data_dir.to_path_buf(),
            clock,
            market,
            source,
            pipeline: AgentPipeline::new(gateway.clone(), prompts),
            gateway,
            events,
            runs,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn clock(&self) -> &MarketClock {
        &self.clock
    }

    pub fn market(&self) -> &Arc<MarketStore> {
        &self.market
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn events(&self) -> &EventStore {
        &self.events
    }

    pub fn runs(&self) -> &RunRegistry {
        &self.runs
    }

    fn lock_for(&self, fund_id: &FundId) -> Arc<tokio::sync::Mutex<()>> {
        self.locks.lock().unwrap().entry(fund_id.clone()).or_default().clone()
    }

    fn try_lock(&self, fund_id: &FundId) -> Result<tokio::sync::OwnedMutexGuard<()>, ArenaError> {
        self.lock_for(fund_id).try_lock_owned().map_err(|_| ArenaError::FundBusy(fund_id.clone()))
    }

    /// Default inception: the decision point before the first dataset day
    /// when replaying, the current instant when live.
    fn default_inception(&self) -> AsOf {
        if self.source.is_live() {
            let now = Utc::now();
            return AsOf { instant: now, trading_date: now.date_naive() };
        }
        let first = self.market.trading_days().first().copied().unwrap_or(NaiveDate::MIN);
        self.clock.decision_point(first.pred_opt().unwrap_or(first))
    }

    pub fn create_fund(&self, req: &FundRequest) -> Result<FundState, ArenaError> {
        if req.name.trim().is_empty() {
            return Err(ArenaError::Validation("name must not be empty".into()));
        }
        if req.stock_pool.is_empty() {
            return Err(ArenaError::Validation("stock_pool must not be empty".into()));
        }
        if req.initial_cash <= Decimal::ZERO {
            return Err(ArenaError::Validation("initial_cash must be positive".into()));
        }
        let mut pool = BTreeSet::new();
        for s in &req.stock_pool {
            let t = Ticker::new(s.clone()).map_err(|e| ArenaError::Validation(e.to_string()))?;
            if !self.source.is_live() && !self.market.contains_ticker(&t) {
                return Err(ArenaError::Market(MarketDataError::UnknownTicker(t)));
            }
            if !pool.insert(t) {
                return Err(ArenaError::Validation(format!("duplicate ticker {s}")));
            }
        }
        let model = self.gateway.model(&req.model_spec)?;
        let fund_id = match &req.fund_id {
            Some(id) => FundId::new(id.clone()),
            None => {
                let hash = canonical_hash(req).map_err(|e| ArenaError::Validation(e.to_string()))?;
                FundId::new(format!("fund-{}", &hash[..12]))
            }
        };
        if !fund_id.is_valid() {
            return Err(ArenaError::Validation(format!("invalid fund id {fund_id}")));
        }
        let inception = match req.inception {
            Some(d) => self.clock.decision_point(d),
            None => self.default_inception(),
        };
        let fund = Fund::new(
            fund_id.clone(),
            req.name.clone(),
            req.model_spec.clone(),
            pool,
            req.initial_cash,
            inception,
            req.config.clone(),
        )?;
        let _guard = self.try_lock(&fund_id)?;
        if self.events.exists(&fund_id) {
            return Err(ArenaError::FundExists(fund_id));
        }
        self.events.append_bodies(
            &fund_id,
            inception.instant,
            vec![EventBody::FundCreated { fund, model_spec: Some(model) }],
        )?;
        tracing::info!(fund = %fund_id, "fund created");
        Ok(self.events.fold_fund(&fund_id)?)
    }

    pub fn fund(&self, fund_id: &FundId) -> Result<FundState, ArenaError> {
        Ok(self.events.fold_fund(fund_id)?)
    }

    pub fn fund_ids(&self) -> Result<Vec<FundId>, ArenaError> {
        Ok(self.events.fund_ids()?)
    }

    pub fn summary(&self, state: &FundState) -> FundSummary {
        let fund = &state.fund;
        let nav = state.last_nav().unwrap_or(fund.cash);
        let cum = match (state.nav.points().first(), state.nav.points().last()) {
            (Some((_, a)), Some((_, b))) => (b / a - Decimal::ONE).to_f64(),
            _ => None,
        };
        let status = self
            .runs
            .list()
            .into_iter()
            .rev()
            .find(|r| r.fund_id == fund.fund_id && !r.status.is_terminal())
            .map_or_else(|| "IDLE".to_string(), |r| r.status.to_string());
        FundSummary {
            fund_id: fund.fund_id.clone(),
            name: fund.name.clone(),
            model_spec_id: fund.model_spec_id.clone(),
            stock_pool: fund.stock_pool.iter().cloned().collect(),
            cash: fund.cash,
            nav,
            cumulative_return: cum,
            status,
            last_cycle: fund.last_cycle,
            cycles: state.nav.len(),
            contaminated: state.contaminated,
        }
    }

    pub fn metrics(&self, fund_id: &FundId) -> Result<MetricsReport<f64>, ArenaError> {
        let st = self.fund(fund_id)?;
        Ok(compute_metrics(&st.nav, &st.fills, 0.0))
    }

    pub fn leaderboard(&self, rank_key: &str) -> Result<Vec<LeaderboardRow<f64>>, ArenaError> {
        let mut reports = BTreeMap::new();
        for id in self.fund_ids()? {
            reports.insert(id.to_string(), self.metrics(&id)?);
        }
        Ok(leaderboard(&reports, rank_key)?)
    }

    pub fn query_events(&self, fund_id: &FundId, filter: &EventFilter) -> Result<EventPage, ArenaError> {
        Ok(self.events.query(fund_id, filter)?)
    }

    pub fn cycle_records(&self, fund_id: &FundId) -> Result<Vec<CycleRecord>, ArenaError> {
        Ok(cycle_records(&self.events.read_all(fund_id)?))
    }

    /// Run one trading day for one fund.
    pub async fn run_cycle(
        &self,
        fund_id: &FundId,
        date: NaiveDate,
        run_id: Option<&str>,
    ) -> Result<CycleRecord, ArenaError> {
        let _guard = self.try_lock(fund_id)?;
        self.run_cycle_locked(fund_id, date, run_id).await
    }

    async fn run_cycle_locked(
        &self,
        fund_id: &FundId,
        date: NaiveDate,
        run_id: Option<&str>,
    ) -> Result<CycleRecord, ArenaError> {
        let state = self.fund(fund_id)?;
        if let Some(last) = state.fund.last_cycle {
            if date <= last {
                return Err(ArenaError::OutOfOrder { last, got: date });
            }
        }
        let as_of = self.clock.decision_point(date);
        if self.source.is_live() {
            let pool: Vec<Ticker> = state.fund.stock_pool.iter().cloned().collect();
            self.source.refresh(&self.market, &pool, &as_of).await?;
        }
        if !self.market.is_trading_day(date) {
            return Err(ArenaError::NotTradingDay(date));
        }
        let started = EventBody::CycleStarted { trading_date: date, as_of, run_id: run_id.map(str::to_string) };
        match self.cycle_bodies(&state, as_of).await {
            Ok((mut bodies, after)) => {
                bodies.insert(0, started);
                let events = self.events.append_bodies(fund_id, as_of.instant, bodies)?;
                if cfg!(debug_assertions) {
                    let folded = self.fund(fund_id)?.fund;
                    assert_eq!(folded, after, "folded log diverged from executed state");
                }
                tracing::info!(fund = %fund_id, %date, "cycle completed");
                Ok(CycleRecord::from_events(&events).expect("a completed cycle projects to a record"))
            }
            Err(abort) => {
                tracing::error!(fund = %fund_id, %date, code = abort.code, cause = %abort.cause, "cycle failed");
                let failed =
                    EventBody::CycleFailed { trading_date: date, code: abort.code.to_string(), cause: abort.cause.clone() };
                self.events.append_bodies(fund_id, as_of.instant, vec![started, failed])?;
                Err(ArenaError::CycleFailed { trading_date: date, code: abort.code.to_string(), cause: abort.cause })
            }
        }
    }

    /// The events of one cycle after `CycleStarted`, computed without
    /// touching the log.
    async fn cycle_bodies(&self, state: &FundState, as_of: AsOf) -> Result<(Vec<EventBody>, Fund), CycleAbort> {
        let date = as_of.trading_date;
        let spec_id = state.fund.model_spec_id.as_str();
        let mut fund = state.fund.clone();
        let mut bodies = Vec::new();

        // Phase 1: gated context.
        let mut bars: BTreeMap<Ticker, Vec<PriceBar>> = BTreeMap::new();
        let mut opens = BTreeMap::new();
        let mut closes = BTreeMap::new();
        for t in &fund.stock_pool {
            let b = self.market.get_price_bars(t, BAR_LOOKBACK, &as_of)?;
            let today = b.last().filter(|bar| bar.date == date).ok_or_else(|| CycleAbort {
                code: "MISSING_PRICE",
                cause: format!("no bar for {t} on {date}"),
            })?;
            opens.insert(t.clone(), today.open);
            closes.insert(t.clone(), today.close);
            bars.insert(t.clone(), b);
        }

        for order in std::mem::take(&mut fund.pending_orders) {
            let t = &order.decision.ticker;
            let exec = execute_decision(&fund, &order.decision, opens[t], &opens, as_of)?;
            fund = exec.fund;
            if let Some(fill) = exec.fill {
                bodies.push(EventBody::OrderFilled { trading_date: date, decided_on: order.decided_on, fill });
            }
            if let Some(skip) = exec.skip {
                bodies.push(EventBody::OrderSkipped { trading_date: date, decided_on: order.decided_on, skip });
            }
        }

        let pre_trade = mark_to_market(&fund, &closes, as_of)?;
        let last_return = match state.nav.points() {
            [.., (_, a), (_, b)] => (b / a - Decimal::ONE).to_f64(),
            _ => None,
        };

        // Phase 2: plan, then analysts.
        let plan = self
            .pipeline
            .plan(
                &PlannerContext {
                    trading_date: date,
                    stock_pool: &fund.stock_pool,
                    positions: &fund.positions,
                    memory: &fund.memory,
                    nav: pre_trade.nav,
                    last_return,
                },
                spec_id,
            )
            .await?;
        let plan_ms = sum_latency(&plan.calls);
        bodies.push(EventBody::PlanMade {
            trading_date: date,
            plan: plan.plan.clone(),
            fallback: plan.fallback,
            llm_calls: plan.calls.clone(),
            notes: plan.notes.clone(),
        });

        let mut jobs: Vec<(Ticker, AnalystContext)> = Vec::new();
        for (t, kinds) in &plan.plan.assignments {
            for kind in kinds {
                let ctx = match kind {
                    AnalystKind::Technical => AnalystContext::technical(bars[t].clone()),
                    AnalystKind::Fundamental => {
                        AnalystContext::Fundamental { snapshot: self.market.get_fundamentals(t, &as_of)? }
                    }
                    AnalystKind::Insider => AnalystContext::Insider {
                        transactions: self.market.get_insider_transactions(t, INSIDER_WINDOW_DAYS, &as_of)?,
                    },
                    AnalystKind::Media => {
                        AnalystContext::Media { news: self.market.get_news(t, NEWS_WINDOW_DAYS, &as_of)? }
                    }
                };
                jobs.push((t.clone(), ctx));
            }
        }
        let facts: Vec<_> = jobs.iter().flat_map(|(_, c)| c.facts()).collect();
        let leaks = audit_leakage(&as_of, &facts);
        if let Some(v) = leaks.first() {
            return Err(CycleAbort {
                code: "LEAKAGE_DETECTED",
                cause: format!("{} available at {} after {}", v.fact, v.available_at, as_of.instant),
            });
        }
        let outcomes =
            join_all(jobs.iter().map(|(t, ctx)| self.pipeline.run_analyst(t, date, ctx, spec_id))).await;
        let mut signals = Vec::new();
        let mut analyze_ms = 0;
        for out in outcomes {
            let out = out?;
            analyze_ms += sum_latency(&out.calls);
            signals.push(out.signal.clone());
            bodies.push(EventBody::SignalEmitted {
                trading_date: date,
                signal: out.signal,
                fallback: out.fallback,
                llm_calls: out.calls,
                notes: out.notes,
            });
        }

        // Phase 3: decide, execute, mark, remember.
        let tickers: Vec<&Ticker> = plan.plan.assignments.keys().collect();
        let per_ticker: Vec<Vec<_>> =
            tickers.iter().map(|t| signals.iter().filter(|s| &&s.ticker == t).cloned().collect()).collect();
        let contexts: Vec<ManagerContext> = tickers
            .iter()
            .map(|t| ManagerContext {
                ticker: t,
                trading_date: date,
                position: fund.positions.get(*t),
                cash: fund.cash,
                nav: pre_trade.nav,
                close: closes[*t],
                max_position_weight: fund.config.max_position_weight,
                memory: &fund.memory,
            })
            .collect();
        let decided =
            join_all(contexts.iter().zip(&per_ticker).map(|(ctx, sigs)| self.pipeline.manage(sigs, ctx, spec_id)))
                .await;
        drop(contexts);
        let mut decisions = Vec::new();
        let mut decide_ms = 0;
        for out in decided {
            let out = out?;
            decide_ms += sum_latency(&out.calls);
            decisions.push(out.decision.clone());
            bodies.push(EventBody::DecisionMade {
                trading_date: date,
                decision: out.decision,
                fallback: out.fallback,
                sized_by_fallback: out.sized_by_fallback,
                llm_calls: out.calls,
                notes: out.notes,
            });
        }

        let mut fill_notes = Vec::new();
        let mut pending = Vec::new();
        for d in &decisions {
            match fund.config.execution_policy {
                ExecutionPolicy::Close => {
                    let exec = execute_decision(&fund, d, closes[&d.ticker], &closes, as_of)?;
                    fund = exec.fund;
                    if let Some(fill) = exec.fill {
                        fill_notes.push(format!("{:?} {} {} @ {}", fill.action, fill.quantity, fill.ticker, fill.price));
                        bodies.push(EventBody::OrderFilled { trading_date: date, decided_on: date, fill });
                    }
                    if let Some(skip) = exec.skip {
                        bodies.push(EventBody::OrderSkipped { trading_date: date, decided_on: date, skip });
                    }
                }
                ExecutionPolicy::NextOpen if d.action != Action::Hold => {
                    pending.push(PendingOrder { decided_on: date, decision: d.clone() });
                }
                ExecutionPolicy::NextOpen => {}
            }
        }

        let snapshot = mark_to_market(&fund, &closes, as_of)?;
        bodies.push(EventBody::NavMarked { trading_date: date, closes: closes.clone(), snapshot: snapshot.clone() });

        let entry = MemoryEntry {
            trading_date: date,
            actions: decisions.iter().map(|d| (d.ticker.clone(), d.action)).collect(),
            fills: fill_notes,
            nav: snapshot.nav,
            rationale: plan.plan.rationale.chars().take(200).collect(),
        };
        let mut fund = append_memory(&fund, entry.clone())?;
        fund.pending_orders = pending.clone();
        fund.last_cycle = Some(date);
        bodies.push(EventBody::MemoryAppended { trading_date: date, entry });
        bodies.push(EventBody::CycleCompleted {
            trading_date: date,
            timings: CycleTimings { plan_ms, analyze_ms, decide_ms, total_ms: plan_ms + analyze_ms + decide_ms },
            pending_orders: pending,
        });
        Ok((bodies, fund))
    }

    fn control_event(&self, run: &ArenaRun, command: &str, detail: String) -> Result<(), ArenaError> {
        let ts = match (run.clock, run.date_range) {
            (Some(c), _) => c.instant,
            (None, Some(r)) => self.clock.decision_point(r.from).instant,
            (None, None) => self.fund(&run.fund_id)?.fund.inception.instant,
        };
        self.events.append_bodies(
            &run.fund_id,
            ts,
            vec![EventBody::RunControl {
                run_id: run.run_id.clone(),
                command: command.to_string(),
                status: run.status.to_string(),
                contaminated: run.contaminated,
                detail,
            }],
        )?;
        Ok(())
    }

    /// Validate a replay and register its run without starting it.
    pub fn prepare_replay(
        &self,
        fund_id: &FundId,
        from: NaiveDate,
        to: NaiveDate,
        allow_contaminated: bool,
    ) -> Result<ArenaRun, ArenaError> {
        let state = self.fund(fund_id)?;
        if from > to {
            return Err(ArenaError::Validation(format!("from {from} is after to {to}")));
        }
        let model = self.gateway.model(&state.fund.model_spec_id)?;
        let mut contaminated = false;
        if let Some(cutoff) = model.knowledge_cutoff {
            if cutoff >= from {
                if !allow_contaminated {
                    return Err(ArenaError::CutoffViolation { cutoff, start: from });
                }
                tracing::warn!(fund = %fund_id, %cutoff, %from, "replaying inside the model's training window");
                contaminated = true;
            }
        }
        let days = self.replay_days(&state.fund, from, to)?;
        if let Some(last) = state.fund.last_cycle {
            if from <= last {
                return Err(ArenaError::OutOfOrder { last, got: from });
            }
        }
        let run = self.runs.create(
            fund_id.clone(),
            RunMode::Replay,
            Some(DateRange { from, to }),
            contaminated,
            Some(days.len()),
        )?;
        let detail = if contaminated {
            format!(
                "CONTAMINATED: knowledge cutoff {} is not before replay start {from}",
                model.knowledge_cutoff.expect("contaminated implies a cutoff")
            )
        } else {
            String::new()
        };
        self.control_event(&run, "START", detail)?;
        Ok(run)
    }

    /// Trading days in `[from, to]`, each with a bar for every pool ticker.
    fn replay_days(&self, fund: &Fund, from: NaiveDate, to: NaiveDate) -> Result<Vec<NaiveDate>, ArenaError> {
        let calendar = self.market.trading_days();
        let (Some(first), Some(last)) = (calendar.first(), calendar.last()) else {
            return Err(ArenaError::DatasetGap { date: from, detail: "dataset is empty".into() });
        };
        if from < *first {
            return Err(ArenaError::DatasetGap { date: from, detail: format!("dataset starts on {first}") });
        }
        if to > *last {
            return Err(ArenaError::DatasetGap { date: to, detail: format!("dataset ends on {last}") });
        }
        let days: Vec<NaiveDate> = calendar.into_iter().filter(|d| (from..=to).contains(d)).collect();
        if days.is_empty() {
            return Err(ArenaError::DatasetGap { date: from, detail: "no trading days in range".into() });
        }
        for d in &days {
            for t in &fund.stock_pool {
                if !self.market.has_bar(t, *d) {
                    return Err(ArenaError::DatasetGap { date: *d, detail: format!("no bar for {t}") });
                }
            }
        }
        Ok(days)
    }

    /// Drive a prepared replay to its end, stopping at the first failed
    /// cycle. Pause and abort are honoured between cycles.
    pub async fn execute_replay(&self, run_id: &str) -> Result<RunOutcome, ArenaError> {
        let run = self.runs.get(run_id)?;
        let range = run.date_range.ok_or_else(|| ArenaError::Validation(format!("{run_id} is not a replay")))?;
        let _guard = match self.try_lock(&run.fund_id) {
            Ok(g) => g,
            Err(e) => {
                self.runs.update(run_id, |r| {
                    r.status = RunStatus::Failed;
                    r.cause = Some(e.to_string());
                })?;
                return Err(e);
            }
        };
        if run.status == RunStatus::Created {
            self.runs.update(run_id, |r| r.status = RunStatus::Running)?;
        }
        let fund = self.fund(&run.fund_id)?.fund;
        let days = self.replay_days(&fund, range.from, range.to)?;
        let mut records = Vec::new();
        let mut error = None;
        for d in days {
            let current = self.runs.wait_unpaused(run_id).await?;
            if current.status.is_terminal() {
                break;
            }
            match self.run_cycle_locked(&run.fund_id, d, Some(run_id)).await {
                Ok(rec) => {
                    let as_of = rec.as_of;
                    records.push(rec);
                    self.runs.update(run_id, |r| {
                        r.clock = Some(as_of);
                        r.cycles_completed += 1;
                    })?;
                }
                Err(e) => {
                    self.runs.update(run_id, |r| {
                        r.clock = Some(self.clock.decision_point(d));
                        r.status = RunStatus::Failed;
                        r.cause = Some(e.to_string());
                    })?;
                    error = Some(e);
                    break;
                }
            }
        }
        let run = self.runs.update(run_id, |r| {
            if r.status == RunStatus::Running {
                r.status = RunStatus::Completed;
            }
        })?;
        self.control_event(&run, "END", run.cause.clone().unwrap_or_default())?;
        self.export_run_cassette(run_id, &records)?;
        tracing::info!(run = run_id, status = %run.status, cycles = records.len(), "replay finished");
        Ok(RunOutcome { run, records, error })
    }

    pub async fn run_replay(
        &self,
        fund_id: &FundId,
        from: NaiveDate,
        to: NaiveDate,
        allow_contaminated: bool,
    ) -> Result<RunOutcome, ArenaError> {
        let run = self.prepare_replay(fund_id, from, to, allow_contaminated)?;
        self.execute_replay(&run.run_id).await
    }

    /// Register a one-day run after checking that the date can run.
    pub fn prepare_cycle(&self, fund_id: &FundId, date: NaiveDate) -> Result<ArenaRun, ArenaError> {
        let state = self.fund(fund_id)?;
        if let Some(last) = state.fund.last_cycle {
            if date <= last {
                return Err(ArenaError::OutOfOrder { last, got: date });
            }
        }
        let mode = if self.source.is_live() { RunMode::Live } else { RunMode::Replay };
        if mode == RunMode::Replay && !self.market.is_trading_day(date) {
            return Err(ArenaError::NotTradingDay(date));
        }
        self.runs.create(fund_id.clone(), mode, Some(DateRange { from: date, to: date }), false, Some(1))
    }

    /// Run the single cycle of a run made by [`Arena::prepare_cycle`].
    pub async fn execute_cycle(&self, run_id: &str) -> Result<RunOutcome, ArenaError> {
        let run = self.runs.get(run_id)?;
        let date = match run.date_range {
            Some(r) if r.from == r.to => r.from,
            _ => return Err(ArenaError::Validation(format!("{run_id} is not a single-cycle run"))),
        };
        if run.status.is_terminal() {
            return Ok(RunOutcome { run, records: Vec::new(), error: None });
        }
        self.runs.update(run_id, |r| r.status = RunStatus::Running)?;
        let result = self.run_cycle(&run.fund_id, date, Some(run_id)).await;
        let (records, error) = match result {
            Ok(rec) => (vec![rec], None),
            Err(e) => (Vec::new(), Some(e)),
        };
        let run = self.runs.update(run_id, |r| {
            r.clock = Some(self.clock.decision_point(date));
            match &error {
                None => {
                    r.cycles_completed = 1;
                    if r.status == RunStatus::Running {
                        r.status = RunStatus::Completed;
                    }
                }
                Some(e) => {
                    r.status = RunStatus::Failed;
                    r.cause = Some(e.to_string());
                }
            }
        })?;
        self.export_run_cassette(run_id, &records)?;
        Ok(RunOutcome { run, records, error })
    }

    fn export_run_cassette(&self, run_id: &str, records: &[CycleRecord]) -> Result<(), ArenaError> {
        let hashes: BTreeSet<String> = records.iter().flat_map(|r| r.llm_call_ids.iter().cloned()).collect();
        if hashes.is_empty() {
            return Ok(());
        }
        let dir = self.data_dir.join("cassettes");
        std::fs::create_dir_all(&dir).map_err(|e| ArenaError::Store(EventStoreError::StorageFailure(e.to_string())))?;
        self.gateway.cassette_export(&dir.join(format!("{run_id}.jsonl")), Some(&hashes))?;
        Ok(())
    }

    /// Apply an operator command and note it in the fund's log.
    pub fn control(&self, run_id: &str, command: RunCommand) -> Result<ArenaRun, ArenaError> {
        let run = self.runs.command(run_id, command)?;
        self.control_event(&run, command.as_str(), run.cause.clone().unwrap_or_default())?;
        tracing::info!(run = run_id, %command, status = %run.status, "run control");
        Ok(run)
    }

    /// Copy a fund's log and the exchanges it references into `out`.
    pub fn export_fund(&self, fund_id: &FundId, out: &Path) -> Result<ExportSummary, ArenaError> {
        let io = |e: std::io::Error| ArenaError::Store(EventStoreError::StorageFailure(e.to_string()));
        let events = self.events.read_all(fund_id)?;
        std::fs::create_dir_all(out).map_err(io)?;
        std::fs::copy(self.events.log_path(fund_id), out.join("events.jsonl")).map_err(io)?;
        let mut hashes = BTreeSet::new();
        for ev in &events {
            match &ev.body {
                EventBody::PlanMade { llm_calls, .. }
                | EventBody::SignalEmitted { llm_calls, .. }
                | EventBody::DecisionMade { llm_calls, .. } => {
                    hashes.extend(llm_calls.iter().map(|c| c.request_hash.clone()));
                }
                _ => {}
            }
        }
        let exchanges = self.gateway.cassette_export(&out.join("cassette.jsonl"), Some(&hashes))?;
        Ok(ExportSummary { events: events.len(), exchanges, missing_exchanges: hashes.len() - exchanges })
    }

    /// Register a live run for a fund and mark it running.
    pub fn start_live(&self, fund_id: &FundId) -> Result<ArenaRun, ArenaError> {
        self.fund(fund_id)?;
        let run = self.runs.create(fund_id.clone(), RunMode::Live, None, false, None)?;
        let run = self.runs.update(&run.run_id, |r| r.status = RunStatus::Running)?;
        self.control_event(&run, "START", String::new())?;
        Ok(run)
    }

    /// Run every cycle that is due for a live run at `now`, in date order.
    pub async fn live_tick(&self, run_id: &str, now: DateTime<Utc>) -> Result<TickOutcome, ArenaError> {
        let mut outcome = TickOutcome::default();
        let run = self.runs.get(run_id)?;
        if run.status != RunStatus::Running {
            return Ok(outcome);
        }
        let _guard = self.try_lock(&run.fund_id)?;
        let state = self.fund(&run.fund_id)?;
        let mut since = state.fund.inception.trading_date;
        since = since.max(state.fund.last_cycle.unwrap_or(since));
        if let Some(c) = run.clock {
            since = since.max(c.trading_date);
        }
        for d in due_dates(since, now, &self.clock) {
            if self.runs.get(run_id)?.status != RunStatus::Running {
                break;
            }
            match self.run_cycle_locked(&run.fund_id, d, Some(run_id)).await {
                Ok(rec) => {
                    self.runs.update(run_id, |r| {
                        r.clock = Some(rec.as_of);
                        r.cycles_completed += 1;
                    })?;
                    outcome.ran.push(d);
                }
                Err(ArenaError::NotTradingDay(_)) => {
                    self.runs.update(run_id, |r| r.clock = Some(self.clock.decision_point(d)))?;
                    outcome.skipped.push(d);
                }
                Err(e @ (ArenaError::Market(_) | ArenaError::CycleFailed { .. })) => {
                    tracing::warn!(run = run_id, date = %d, error = %e, "cycle deferred");
                    outcome.deferred = Some((d, e.to_string()));
                    break;
                }
                Err(e) => {
                    self.runs.update(run_id, |r| {
                        r.status = RunStatus::Failed;
                        r.cause = Some(e.to_string());
                    })?;
                    return Err(e);
                }
            }
        }
        Ok(outcome)
    }

    /// Drive a live run until it stops, checking for due cycles after each
    /// decision point. Deferred cycles back off and retry the same date.
    pub async fn drive_live(self: Arc<Self>, run_id: String) {
        let mut attempt = 0u32;
        loop {
            let wait = match self.live_tick(&run_id, Utc::now()).await {
                Ok(out) if out.deferred.is_some() => {
                    attempt += 1;
                    LIVE_RETRY_BASE.saturating_mul(1 << (attempt - 1).min(8)).min(LIVE_RETRY_MAX)
                }
                Ok(_) => {
                    attempt = 0;
                    let now = Utc::now();
                    let next = self.clock.decision_point(now.date_naive() + Days::new(1)).instant;
                    (next - now).to_std().unwrap_or_default()
                }
                Err(e) => {
                    tracing::error!(run = %run_id, error = %e, "live run stopped");
                    return;
                }
            };
            match self.runs.get(&run_id) {
                Ok(r) if r.status.is_terminal() => return,
                Err(_) => return,
                _ => {}
            }
            tokio::select! {
                _ = tokio::time::sleep(wait) => {}
                _ = self.runs.changed() => {}
            }
        }
    }
}
