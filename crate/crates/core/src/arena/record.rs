use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::agents::{render_report, AnalystSignal, DecisionReport, ManagerDecision, PlannerPlan};
use crate::events::{ArenaEvent, CycleTimings, EventBody};
use crate::market::AsOf;
use crate::portfolio::{NavSnapshot, SkippedDecision, TradeFill};

/// One completed trading day, projected from its events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub trading_date: NaiveDate,
    pub as_of: AsOf,
    pub plan: PlannerPlan,
    pub signals: Vec<AnalystSignal>,
    pub decisions: Vec<ManagerDecision>,
    pub fills: Vec<TradeFill>,
    pub skips: Vec<SkippedDecision>,
    pub nav_snapshot: NavSnapshot,
    pub timings: CycleTimings,
    pub llm_call_ids: Vec<String>,
    pub report: DecisionReport,
}

impl CycleRecord {
    /// Build from the events of one cycle, `CycleStarted` through
    /// `CycleCompleted`. `None` for anything else, including failed cycles.
    pub fn from_events(events: &[ArenaEvent]) -> Option<Self> {
        let (first, last) = (events.first()?, events.last()?);
        let EventBody::CycleStarted { trading_date, as_of, .. } = &first.body else { return None };
        let EventBody::CycleCompleted { timings, .. } = &last.body else { return None };
        let mut plan = None;
        let mut signals = Vec::new();
        let mut decisions = Vec::new();
        let mut fills = Vec::new();
        let mut skips = Vec::new();
        let mut nav = None;
        let mut calls = Vec::new();
        for ev in &events[1..events.len() - 1] {
            match &ev.body {
                EventBody::PlanMade { plan: p, llm_calls, .. } => {
                    plan = Some(p.clone());
                    calls.extend(llm_calls.iter().map(|c| c.request_hash.clone()));
                }
                EventBody::SignalEmitted { signal, llm_calls, .. } => {
                    signals.push(signal.clone());
                    calls.extend(llm_calls.iter().map(|c| c.request_hash.clone()));
                }
                EventBody::DecisionMade { decision, llm_calls, .. } => {
                    decisions.push(decision.clone());
                    calls.extend(llm_calls.iter().map(|c| c.request_hash.clone()));
                }
                EventBody::OrderFilled { fill, .. } => fills.push(fill.clone()),
                EventBody::OrderSkipped { skip, .. } => skips.push(skip.clone()),
                EventBody::NavMarked { snapshot, .. } => nav = Some(snapshot.clone()),
                _ => {}
            }
        }
        let plan = plan?;
        let report = render_report(*trading_date, &plan, &signals, &decisions, &fills, &skips);
        Some(Self {
            trading_date: *trading_date,
            as_of: *as_of,
            plan,
            signals,
            decisions,
            fills,
            skips,
            nav_snapshot: nav?,
            timings: *timings,
            llm_call_ids: calls,
            report,
        })
    }
}

/// Every completed cycle in a fund log, in order.
pub fn cycle_records(events: &[ArenaEvent]) -> Vec<CycleRecord> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ev) in events.iter().enumerate() {
        match ev.body {
            EventBody::CycleStarted { .. } => start = Some(i),
            EventBody::CycleCompleted { .. } => {
                if let Some(s) = start.take() {
                    out.extend(CycleRecord::from_events(&events[s..=i]));
                }
            }
            EventBody::CycleFailed { .. } => start = None,
            _ => {}
        }
    }
    out
}
