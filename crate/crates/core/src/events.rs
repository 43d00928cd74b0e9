//! Append-only per-fund event log, `funds/<fund_id>/events.jsonl`.
//!
//! One canonical JSON event per line. An append is a single write followed
//! by fsync; a failed write is rolled back by truncation, so a log always
//! ends at a whole append.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use chrono::{DateTime, NaiveDate, Utc};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AnalystSignal, LlmCallRef, ManagerDecision, PlannerPlan};
use crate::canonical::to_canonical_string;
use crate::gateway::ModelSpec;
use crate::market::{AsOf, Ticker};
use crate::metrics::NavSeries;
use crate::portfolio::{append_memory, Fund, FundId, MemoryEntry, NavSnapshot, PendingOrder, SkippedDecision, TradeFill};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventStoreError {
    #[error("sequence conflict: expected {expected}, got {got}")]
    SeqConflict { expected: u64, got: u64 },
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("unknown fund {0}")]
    UnknownFund(String),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
}

fn storage(e: impl fmt::Display) -> EventStoreError {
    EventStoreError::StorageFailure(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventType {
    FundCreated,
    CycleStarted,
    PlanMade,
    SignalEmitted,
    DecisionMade,
    OrderFilled,
    OrderSkipped,
    NavMarked,
    MemoryAppended,
    CycleCompleted,
    CycleFailed,
    RunControl,
}

impl EventType {
    pub const ALL: [EventType; 12] = [
        EventType::FundCreated,
        EventType::CycleStarted,
        EventType::PlanMade,
        EventType::SignalEmitted,
        EventType::DecisionMade,
        EventType::OrderFilled,
        EventType::OrderSkipped,
        EventType::NavMarked,
        EventType::MemoryAppended,
        EventType::CycleCompleted,
        EventType::CycleFailed,
        EventType::RunControl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::FundCreated => "FundCreated",
            EventType::CycleStarted => "CycleStarted",
            EventType::PlanMade => "PlanMade",
            EventType::SignalEmitted => "SignalEmitted",
            EventType::DecisionMade => "DecisionMade",
            EventType::OrderFilled => "OrderFilled",
            EventType::OrderSkipped => "OrderSkipped",
            EventType::NavMarked => "NavMarked",
            EventType::MemoryAppended => "MemoryAppended",
            EventType::CycleCompleted => "CycleCompleted",
            EventType::CycleFailed => "CycleFailed",
            EventType::RunControl => "RunControl",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventType {
    type Err = EventStoreError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| EventStoreError::InvalidFilter(format!("unknown event type {s:?}")))
    }
}

/// Wall-clock-free cycle timings: sums of recorded model latencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CycleTimings {
    pub plan_ms: u64,
    pub analyze_ms: u64,
    pub decide_ms: u64,
    pub total_ms: u64,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum EventBody {
    FundCreated {
        fund: Fund,
        model_spec: Option<ModelSpec>,
    },
    CycleStarted {
        trading_date: NaiveDate,
        as_of: AsOf,
        run_id: Option<String>,
    },
    PlanMade {
        trading_date: NaiveDate,
        plan: PlannerPlan,
        fallback: bool,
        llm_calls: Vec<LlmCallRef>,
        notes: Vec<String>,
    },
    SignalEmitted {
        trading_date: NaiveDate,
        signal: AnalystSignal,
        fallback: bool,
        llm_calls: Vec<LlmCallRef>,
        notes: Vec<String>,
    },
    DecisionMade {
        trading_date: NaiveDate,
        decision: ManagerDecision,
        fallback: bool,
        sized_by_fallback: bool,
        llm_calls: Vec<LlmCallRef>,
        notes: Vec<String>,
    },
    OrderFilled {
        trading_date: NaiveDate,
        decided_on: NaiveDate,
        fill: TradeFill,
    },
    OrderSkipped {
        trading_date: NaiveDate,
        decided_on: NaiveDate,
        skip: SkippedDecision,
    },
    NavMarked {
        trading_date: NaiveDate,
        closes: BTreeMap<Ticker, Decimal>,
        snapshot: NavSnapshot,
    },
    MemoryAppended {
        trading_date: NaiveDate,
        entry: MemoryEntry,
    },
    CycleCompleted {
        trading_date: NaiveDate,
        timings: CycleTimings,
        /// Orders waiting for the next open after this cycle.
        pending_orders: Vec<PendingOrder>,
    },
    CycleFailed {
        trading_date: NaiveDate,
        code: String,
        cause: String,
    },
    RunControl {
        run_id: String,
        command: String,
        status: String,
        contaminated: bool,
        detail: String,
    },
}

impl EventBody {
    pub fn event_type(&self) -> EventType {
        match self {
            EventBody::FundCreated { .. } => EventType::FundCreated,
            EventBody::CycleStarted { .. } => EventType::CycleStarted,
            EventBody::PlanMade { .. } => EventType::PlanMade,
            EventBody::SignalEmitted { .. } => EventType::SignalEmitted,
            EventBody::DecisionMade { .. } => EventType::DecisionMade,
            EventBody::OrderFilled { .. } => EventType::OrderFilled,
            EventBody::OrderSkipped { .. } => EventType::OrderSkipped,
            EventBody::NavMarked { .. } => EventType::NavMarked,
            EventBody::MemoryAppended { .. } => EventType::MemoryAppended,
            EventBody::CycleCompleted { .. } => EventType::CycleCompleted,
            EventBody::CycleFailed { .. } => EventType::CycleFailed,
            EventBody::RunControl { .. } => EventType::RunControl,
        }
    }

    pub fn trading_date(&self) -> Option<NaiveDate> {
        match self {
            EventBody::FundCreated { fund, .. } => Some(fund.inception.trading_date),
            EventBody::CycleStarted { trading_date, .. }
            | EventBody::PlanMade { trading_date, .. }
            | EventBody::SignalEmitted { trading_date, .. }
            | EventBody::DecisionMade { trading_date, .. }
            | EventBody::OrderFilled { trading_date, .. }
            | EventBody::OrderSkipped { trading_date, .. }
            | EventBody::NavMarked { trading_date, .. }
            | EventBody::MemoryAppended { trading_date, .. }
            | EventBody::CycleCompleted { trading_date, .. }
            | EventBody::CycleFailed { trading_date, .. } => Some(*trading_date),
            EventBody::RunControl { .. } => None,
        }
    }

    pub fn ticker(&self) -> Option<&Ticker> {
        match self {
            EventBody::SignalEmitted { signal, .. } => Some(&signal.ticker),
            EventBody::DecisionMade { decision, .. } => Some(&decision.ticker),
            EventBody::OrderFilled { fill, .. } => Some(&fill.ticker),
            EventBody::OrderSkipped { skip, .. } => Some(&skip.ticker),
            _ => None,
        }
    }

    /// A log may only end after one of these.
    pub fn is_boundary(&self) -> bool {
        matches!(
            self,
            EventBody::FundCreated { .. }
                | EventBody::CycleCompleted { .. }
                | EventBody::CycleFailed { .. }
                | EventBody::RunControl { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArenaEvent {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

impl ArenaEvent {
    pub fn new(seq: u64, ts: DateTime<Utc>, body: EventBody) -> Self {
        Self { seq, ts, body }
    }

    pub fn event_type(&self) -> EventType {
        self.body.event_type()
    }

    pub fn date(&self) -> NaiveDate {
        self.body.trading_date().unwrap_or_else(|| self.ts.date_naive())
    }

    pub fn to_line(&self) -> String {
        to_canonical_string(self).expect("events serialize")
    }
}

/// Stamp bodies with consecutive sequence numbers starting at `first`.
pub fn sequence(first: u64, ts: DateTime<Utc>, bodies: Vec<EventBody>) -> Vec<ArenaEvent> {
    bodies.into_iter().enumerate().map(|(i, b)| ArenaEvent::new(first + i as u64, ts, b)).collect()
}

/// A fund rebuilt from its log.
#[derive(Debug, Clone, PartialEq)]
pub struct FundState {
    pub fund: Fund,
    pub model_spec: Option<ModelSpec>,
    pub nav: NavSeries,
    pub fills: Vec<TradeFill>,
    pub last_seq: u64,
    pub failed_cycles: Vec<(NaiveDate, String)>,
    pub contaminated: bool,
}

impl FundState {
    pub fn last_nav(&self) -> Option<Decimal> {
        self.nav.points().last().map(|(_, n)| *n)
    }
}

fn corrupt(seq: u64, reason: impl Into<String>) -> EventStoreError {
    EventStoreError::CorruptLog { seq, reason: reason.into() }
}

/// Left fold over a complete log. Cycle events are staged and applied only
/// when their `CycleCompleted` arrives.
pub fn fold_events(events: &[ArenaEvent]) -> Result<FundState, EventStoreError> {
    let mut iter = events.iter();
    let first = iter.next().ok_or_else(|| corrupt(1, "empty log"))?;
    if first.seq != 1 {
        return Err(corrupt(first.seq, "log does not start at seq 1"));
    }
    let EventBody::FundCreated { fund, model_spec } = &first.body else {
        return Err(corrupt(1, "first event is not FundCreated"));
    };
    let mut state = FundState {
        fund: fund.clone(),
        model_spec: model_spec.clone(),
        nav: NavSeries::default(),
        fills: Vec::new(),
        last_seq: 1,
        failed_cycles: Vec::new(),
        contaminated: false,
    };
    let mut open: Option<(NaiveDate, Vec<&ArenaEvent>)> = None;
    for ev in iter {
        if ev.seq != state.last_seq + 1 {
            return Err(corrupt(ev.seq, format!("expected seq {}", state.last_seq + 1)));
        }
        state.last_seq = ev.seq;
        match (&ev.body, &mut open) {
            (EventBody::CycleStarted { trading_date, .. }, None) => {
                if state.fund.last_cycle.is_some_and(|d| *trading_date <= d) {
                    return Err(corrupt(ev.seq, "cycle date does not move forward"));
                }
                open = Some((*trading_date, Vec::new()));
            }
            (EventBody::CycleStarted { .. }, Some(_)) => return Err(corrupt(ev.seq, "nested CycleStarted")),
            (EventBody::CycleFailed { trading_date, cause, .. }, Some((d, _))) => {
                if trading_date != d {
                    return Err(corrupt(ev.seq, "CycleFailed date mismatch"));
                }
                state.failed_cycles.push((*trading_date, cause.clone()));
                open = None;
            }
            (EventBody::CycleCompleted { trading_date, pending_orders, .. }, Some((d, staged))) => {
                if trading_date != d {
                    return Err(corrupt(ev.seq, "CycleCompleted date mismatch"));
                }
                let mut fund = state.fund.clone();
                let mut nav = state.nav.clone();
                let mut fills = Vec::new();
                for s in staged.iter() {
                    match &s.body {
                        EventBody::OrderFilled { fill, .. } => {
                            if !fund.stock_pool.contains(&fill.ticker) {
                                return Err(corrupt(s.seq, "fill outside stock pool"));
                            }
                            if fill.action == crate::portfolio::Side::Sell && fund.held(&fill.ticker) < fill.quantity {
                                return Err(corrupt(s.seq, "sell exceeds holding"));
                            }
                            fund.apply_fill(fill);
                            fills.push(fill.clone());
                        }
                        EventBody::NavMarked { trading_date, snapshot, .. } => {
                            nav.push(*trading_date, snapshot.nav).map_err(|e| corrupt(s.seq, e.to_string()))?;
                        }
                        EventBody::MemoryAppended { entry, .. } => {
                            fund = append_memory(&fund, entry.clone()).map_err(|e| corrupt(s.seq, e.to_string()))?;
                        }
                        _ => {}
                    }
                }
                fund.pending_orders = pending_orders.clone();
                fund.last_cycle = Some(*trading_date);
                state.fund = fund;
                state.nav = nav;
                state.fills.extend(fills);
                open = None;
            }
            (EventBody::CycleCompleted { .. } | EventBody::CycleFailed { .. }, None) => {
                return Err(corrupt(ev.seq, "cycle end without CycleStarted"));
            }
            (EventBody::FundCreated { .. }, _) => return Err(corrupt(ev.seq, "duplicate FundCreated")),
            (EventBody::RunControl { contaminated, .. }, None) => {
                state.contaminated |= *contaminated;
            }
            (EventBody::RunControl { .. }, Some(_)) => return Err(corrupt(ev.seq, "RunControl inside a cycle")),
            (_, Some((_, staged))) => staged.push(ev),
            (_, None) => return Err(corrupt(ev.seq, format!("{} outside a cycle", ev.event_type()))),
        }
    }
    if open.is_some() {
        return Err(corrupt(state.last_seq + 1, "log ends inside a cycle"));
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventFilter {
    pub types: Option<BTreeSet<EventType>>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub ticker: Option<Ticker>,
    pub limit: Option<usize>,
    pub offset: usize,
}

impl EventFilter {
    pub fn matches(&self, ev: &ArenaEvent) -> bool {
        if self.types.as_ref().is_some_and(|t| !t.contains(&ev.event_type())) {
            return false;
        }
        let d = ev.date();
        if self.from.is_some_and(|f| d < f) || self.to.is_some_and(|t| d > t) {
            return false;
        }
        match &self.ticker {
            Some(t) => ev.body.ticker() == Some(t),
            None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPage {
    pub events: Vec<ArenaEvent>,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
}

pub const DEFAULT_PAGE_LIMIT: usize = 100;
pub const MAX_PAGE_LIMIT: usize = 10_000;

/// One-shot write fault for crash tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteFault {
    /// Bytes actually written before the failure.
    pub after_bytes: usize,
    /// Leave the partial bytes in place, as a process crash would.
    pub torn: bool,
}

pub struct EventStore {
    root: PathBuf,
    /// Last seq per fund; guards all appends.
    index: Mutex<HashMap<String, u64>>,
    fault: Mutex<Option<WriteFault>>,
}

impl EventStore {
    pub fn open(data_dir: &Path) -> Result<Self, EventStoreError> {
        let root = data_dir.join("funds");
        fs::create_dir_all(&root).map_err(storage)?;
        Ok(Self { root, index: Mutex::new(HashMap::new()), fault: Mutex::new(None) })
    }

    pub fn log_path(&self, fund_id: &FundId) -> PathBuf {
        self.root.join(fund_id.as_str()).join("events.jsonl")
    }

    pub fn exists(&self, fund_id: &FundId) -> bool {
        fund_id.is_valid() && self.log_path(fund_id).exists()
    }

    pub fn fund_ids(&self) -> Result<Vec<FundId>, EventStoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(storage)? {
            let entry = entry.map_err(storage)?;
            if entry.path().join("events.jsonl").exists() {
                if let Some(name) = entry.file_name().to_str() {
                    out.push(FundId::new(name));
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn inject_fault(&self, fault: WriteFault) {
        *self.fault.lock().unwrap() = Some(fault);
    }

    /// Read every whole line. A line that fails to parse is reported at
    /// the seq it should have carried.
    pub fn read_all(&self, fund_id: &FundId) -> Result<Vec<ArenaEvent>, EventStoreError> {
        if !fund_id.is_valid() {
            return Err(EventStoreError::UnknownFund(fund_id.to_string()));
        }
        let path = self.log_path(fund_id);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(EventStoreError::UnknownFund(fund_id.to_string()))
            }
            Err(e) => return Err(storage(e)),
        };
        let mut out: Vec<ArenaEvent> = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(storage)?;
            let expected = out.last().map_or(1, |e| e.seq + 1);
            if line.is_empty() {
                return Err(corrupt(expected, "empty line"));
            }
            let ev: ArenaEvent =
                serde_json::from_str(&line).map_err(|e| corrupt(expected, format!("unparseable line: {e}")))?;
            out.push(ev);
        }
        Ok(out)
    }

    fn last_seq_locked(&self, index: &mut HashMap<String, u64>, fund_id: &FundId) -> Result<u64, EventStoreError> {
        if let Some(s) = index.get(fund_id.as_str()) {
            return Ok(*s);
        }
        let last = if self.exists(fund_id) {
            self.read_all(fund_id)?.last().map_or(0, |e| e.seq)
        } else {
            0
        };
        index.insert(fund_id.to_string(), last);
        Ok(last)
    }

    pub fn last_seq(&self, fund_id: &FundId) -> Result<u64, EventStoreError> {
        let mut index = self.index.lock().unwrap();
        self.last_seq_locked(&mut index, fund_id)
    }

    /// Durably append `events`; all or nothing. Returns the new last seq.
    pub fn append(&self, fund_id: &FundId, events: &[ArenaEvent]) -> Result<u64, EventStoreError> {
        let mut index = self.index.lock().unwrap();
        self.append_locked(&mut index, fund_id, events)
    }

    /// Number `bodies` after the current tail and append them as one unit.
    pub fn append_bodies(
        &self,
        fund_id: &FundId,
        ts: DateTime<Utc>,
        bodies: Vec<EventBody>,
    ) -> Result<Vec<ArenaEvent>, EventStoreError> {
        let mut index = self.index.lock().unwrap();
        let last = self.last_seq_locked(&mut index, fund_id)?;
        let events = sequence(last + 1, ts, bodies);
        self.append_locked(&mut index, fund_id, &events)?;
        Ok(events)
    }

    fn append_locked(
        &self,
        index: &mut HashMap<String, u64>,
        fund_id: &FundId,
        events: &[ArenaEvent],
    ) -> Result<u64, EventStoreError> {
        if !fund_id.is_valid() {
            return Err(EventStoreError::UnknownFund(fund_id.to_string()));
        }
        let last = self.last_seq_locked(index, fund_id)?;
        let Some(first) = events.first() else { return Ok(last) };
        if last == 0 && !matches!(first.body, EventBody::FundCreated { .. }) {
            return Err(EventStoreError::UnknownFund(fund_id.to_string()));
        }
        for (i, ev) in events.iter().enumerate() {
            let expected = last + 1 + i as u64;
            if ev.seq != expected {
                return Err(EventStoreError::SeqConflict { expected, got: ev.seq });
            }
        }
        let mut buf = String::new();
        for ev in events {
            buf.push_str(&ev.to_line());
            buf.push('\n');
        }
        let path = self.log_path(fund_id);
        fs::create_dir_all(path.parent().expect("log has a parent")).map_err(storage)?;
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(storage)?;
        let start_len = file.metadata().map_err(storage)?.len();
        let fault = self.fault.lock().unwrap().take();
        let result = match fault {
            Some(f) => {
                let n = f.after_bytes.min(buf.len());
                let _ = file.write_all(&buf.as_bytes()[..n]);
                let _ = file.sync_data();
                if f.torn {
                    // The process "died" here: no rollback.
                    index.remove(fund_id.as_str());
                    return Err(storage("injected write failure"));
                }
                Err(storage("injected write failure"))
            }
            None => file.write_all(buf.as_bytes()).and_then(|_| file.sync_data()).map_err(storage),
        };
        if let Err(e) = result {
            file.set_len(start_len).map_err(storage)?;
            let _ = file.sync_data();
            return Err(e);
        }
        let new_last = last + events.len() as u64;
        index.insert(fund_id.to_string(), new_last);
        Ok(new_last)
    }

    pub fn fold_fund(&self, fund_id: &FundId) -> Result<FundState, EventStoreError> {
        fold_events(&self.read_all(fund_id)?)
    }

    pub fn query(&self, fund_id: &FundId, filter: &EventFilter) -> Result<EventPage, EventStoreError> {
        let limit = filter.limit.unwrap_or(DEFAULT_PAGE_LIMIT);
        if limit == 0 || limit > MAX_PAGE_LIMIT {
            return Err(EventStoreError::InvalidFilter(format!("limit must be in 1..={MAX_PAGE_LIMIT}")));
        }
        if let (Some(f), Some(t)) = (filter.from, filter.to) {
            if f > t {
                return Err(EventStoreError::InvalidFilter("from is after to".into()));
            }
        }
        let matching: Vec<ArenaEvent> = self.read_all(fund_id)?.into_iter().filter(|e| filter.matches(e)).collect();
        let total = matching.len();
        let events = matching.into_iter().skip(filter.offset).take(limit).collect();
        Ok(EventPage { events, total, offset: filter.offset, limit })
    }

    /// Truncate the log after its last whole append. Returns bytes removed.
    pub fn repair(&self, fund_id: &FundId) -> Result<u64, EventStoreError> {
        let mut index = self.index.lock().unwrap();
        let path = self.log_path(fund_id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(EventStoreError::UnknownFund(fund_id.to_string()))
            }
            Err(e) => return Err(storage(e)),
        };
        let mut keep = 0usize;
        let mut pos = 0usize;
        let mut expected = 1u64;
        while let Some(nl) = bytes[pos..].iter().position(|b| *b == b'\n') {
            let line = &bytes[pos..pos + nl];
            let Ok(ev) = serde_json::from_slice::<ArenaEvent>(line) else { break };
            if ev.seq != expected {
                break;
            }
            expected += 1;
            pos += nl + 1;
            if ev.body.is_boundary() {
                keep = pos;
            }
        }
        let removed = (bytes.len() - keep) as u64;
        if removed > 0 {
            tracing::warn!(fund = %fund_id, removed, "truncating event log to last complete append");
            let file = OpenOptions::new().write(true).open(&path).map_err(storage)?;
            file.set_len(keep as u64).map_err(storage)?;
            file.sync_data().map_err(storage)?;
        }
        index.remove(fund_id.as_str());
        Ok(removed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketClock;
    use crate::portfolio::FundConfig;
    use rust_decimal_macros::dec;

    fn date(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2025, 1, d).unwrap()
    }

    fn fund() -> Fund {
        let pool = [Ticker::new("AAPL").unwrap()].into_iter().collect();
        let inception = MarketClock::default().decision_point(date(2));
        Fund::new(FundId::new("f1"), "one", "mock", pool, dec!(1000), inception, FundConfig::default()).unwrap()
    }

    fn created() -> ArenaEvent {
        let f = fund();
        ArenaEvent::new(1, f.inception.instant, EventBody::FundCreated { fund: f, model_spec: None })
    }

    fn failed_cycle(first: u64, d: u32) -> Vec<ArenaEvent> {
        let as_of = MarketClock::default().decision_point(date(d));
        sequence(
            first,
            as_of.instant,
            vec![
                EventBody::CycleStarted { trading_date: date(d), as_of, run_id: None },
                EventBody::CycleFailed { trading_date: date(d), code: "X".into(), cause: "boom".into() },
            ],
        )
    }

    #[test]
    fn append_and_fold_creation() {
        let dir = tempfile::tempdir().unwrap();
        let store = EventStore::open(dir.path()).unwrap();
        let id = FundId::new("f1");
        assert_eq!(store.append(&id, &[created()]).unwrap(), 1);
        let st = store.fold_fund(&id).unwrap();
        assert_eq!(st.fund, fund());
        assert!(st.nav.is_empty());
    }

    #[test]
    fn seq_conflict_leaves_log() {
        let dir = tempfile::tempdir().unwrap();
        let store = EventStore::open(dir.path()).unwrap();
        let id = FundId::new("f1");
        store.append(&id, &[created()]).unwrap();
        let before = fs::read(store.log_path(&id)).unwrap();
        let err = store.append(&id, &failed_cycle(5, 3)).unwrap_err();
        assert_eq!(err, EventStoreError::SeqConflict { expected: 2, got: 5 });
        assert_eq!(fs::read(store.log_path(&id)).unwrap(), before);
        assert_eq!(store.append(&id, &[]).unwrap(), 1);
    }

    #[test]
    fn line_format_is_canonical() {
        let line = created().to_line();
        assert!(line.starts_with("{\"payload\":"));
        assert!(!line.contains(": "));
        let back: ArenaEvent = serde_json::from_str(&line).unwrap();
        assert_eq!(back, created());
    }

    #[test]
    fn unknown_fund() {
        let dir = tempfile::tempdir().unwrap();
        let store = EventStore::open(dir.path()).unwrap();
        let err = store.query(&FundId::new("nope"), &EventFilter::default()).unwrap_err();
        assert_eq!(err, EventStoreError::UnknownFund("nope".into()));
    }

    #[test]
    fn rolled_back_fault() {
        let dir = tempfile::tempdir().unwrap();
        let store = EventStore::open(dir.path()).unwrap();
        let id = FundId::new("f1");
        store.append(&id, &[created()]).unwrap();
        store.inject_fault(WriteFault { after_bytes: 40, torn: false });
        assert!(store.append(&id, &failed_cycle(2, 3)).is_err());
        assert_eq!(store.fold_fund(&id).unwrap().last_seq, 1);
        assert_eq!(store.append(&id, &failed_cycle(2, 3)).unwrap(), 3);
    }

    #[test]
    fn torn_write_is_corrupt_until_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let store = EventStore::open(dir.path()).unwrap();
        let id = FundId::new("f1");
        store.append(&id, &[created()]).unwrap();
        store.inject_fault(WriteFault { after_bytes: 40, torn: true });
        assert!(store.append(&id, &failed_cycle(2, 3)).is_err());
        let err = store.fold_fund(&id).unwrap_err();
        assert!(matches!(err, EventStoreError::CorruptLog { seq: 2, .. }), "{err:?}");
        assert!(store.repair(&id).unwrap() > 0);
        assert_eq!(store.fold_fund(&id).unwrap().fund, fund());
        assert_eq!(store.last_seq(&id).unwrap(), 1);
    }

    #[test]
    fn unterminated_cycle_is_corrupt() {
        let mut evs = vec![created()];
        evs.extend(failed_cycle(2, 3).into_iter().take(1));
        assert!(matches!(fold_events(&evs), Err(EventStoreError::CorruptLog { .. })));
    }

    #[test]
    fn query_filters_and_pages() {
        let dir = tempfile::tempdir().unwrap();
        let store = EventStore::open(dir.path()).unwrap();
        let id = FundId::new("f1");
        store.append(&id, &[created()]).unwrap();
        store.append(&id, &failed_cycle(2, 3)).unwrap();
        store.append(&id, &failed_cycle(4, 6)).unwrap();
        let all = store.query(&id, &EventFilter::default()).unwrap();
        assert_eq!(all.total, 5);
        let f = EventFilter {
            types: Some([EventType::CycleFailed].into_iter().collect()),
            from: Some(date(4)),
            ..Default::default()
        };
        let page = store.query(&id, &f).unwrap();
        assert_eq!(page.total, 1);
        assert_eq!(page.events[0].seq, 5);
        let paged = store.query(&id, &EventFilter { limit: Some(2), offset: 2, ..Default::default() }).unwrap();
        assert_eq!(paged.events.iter().map(|e| e.seq).collect::<Vec<_>>(), [3, 4]);
        let st = store.fold_fund(&id).unwrap();
        assert_eq!(st.failed_cycles.len(), 2);
        assert_eq!(st.fund.last_cycle, None);
    }

    #[test]
    fn event_type_round_trip() {
        for t in EventType::ALL {
            assert_eq!(t.as_str().parse::<EventType>().unwrap(), t);
        }
        assert!("Nope".parse::<EventType>().is_err());
    }
}
