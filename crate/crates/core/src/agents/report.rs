use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{AnalystSignal, ManagerDecision, PlannerPlan};
use crate::market::Ticker;
use crate::portfolio::{SkippedDecision, TradeFill};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickerReport {
    pub ticker: Ticker,
    pub plan_rationale: String,
    pub signals: Vec<AnalystSignal>,
    pub decision: Option<ManagerDecision>,
    pub fill: Option<TradeFill>,
    pub skip_reason: Option<String>,
}

/// Everything the agents said and did on one trading day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub trading_date: NaiveDate,
    pub no_action_day: bool,
    pub tickers: Vec<TickerReport>,
}

pub fn render_report(
    trading_date: NaiveDate,
    plan: &PlannerPlan,
    signals: &[AnalystSignal],
    decisions: &[ManagerDecision],
    fills: &[TradeFill],
    skips: &[SkippedDecision],
) -> DecisionReport {
    let mut rows: BTreeMap<Ticker, TickerReport> = BTreeMap::new();
    let row = |rows: &mut BTreeMap<Ticker, TickerReport>, t: &Ticker| {
        rows.entry(t.clone())
            .or_insert_with(|| TickerReport {
                ticker: t.clone(),
                plan_rationale: plan.rationale.clone(),
                signals: Vec::new(),
                decision: None,
                fill: None,
                skip_reason: None,
            })
            .ticker
            .clone()
    };
    for t in plan.assignments.keys() {
        row(&mut rows, t);
    }
    for s in signals {
        let k = row(&mut rows, &s.ticker);
        rows.get_mut(&k).unwrap().signals.push(s.clone());
    }
    for d in decisions {
        let k = row(&mut rows, &d.ticker);
        rows.get_mut(&k).unwrap().decision = Some(d.clone());
    }
    for f in fills {
        let k = row(&mut rows, &f.ticker);
        rows.get_mut(&k).unwrap().fill = Some(f.clone());
    }
    for s in skips {
        let k = row(&mut rows, &s.ticker);
        rows.get_mut(&k).unwrap().skip_reason = Some(s.reason.clone());
    }
    DecisionReport { trading_date, no_action_day: plan.assignments.is_empty(), tickers: rows.into_values().collect() }
}
