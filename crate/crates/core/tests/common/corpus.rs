//! Replays the malformed model output corpus through the agent pipeline.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use arena_core::agents::{
    Action, AgentPipeline, AnalystContext, ManagerContext, PlannerContext, PlannerPlan, PromptLibrary, Stance,
};
use arena_core::gateway::{ChatRequest, FnBackend, Gateway, GatewayMode, ModelSpec, RetryPolicy};
use arena_core::market::Ticker;
use arena_core::portfolio::TradingMemory;
use chrono::NaiveDate;
use rust_decimal::Decimal;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
pub struct Case {
    pub id: String,
    pub schema: String,
    pub first: String,
    pub repair: Option<String>,
    /// `repaired`, `reasked` or `fallback`.
    pub expect: String,
    pub value: String,
}

pub fn corpus_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/malformed_outputs.jsonl")
}

pub fn load(path: &std::path::Path) -> Vec<Case> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: String,
    pub ok: bool,
    pub detail: String,
}

fn pipeline(case: &Case) -> AgentPipeline {
    let n = AtomicUsize::new(0);
    let (first, repair) = (case.first.clone(), case.repair.clone());
    let backend = FnBackend::new(move |_: &ChatRequest| {
        Ok(if n.fetch_add(1, Ordering::SeqCst) == 0 { first.clone() } else { repair.clone().unwrap_or(first.clone()) })
    });
    let g = Gateway::with_limits(GatewayMode::Live, 1, RetryPolicy { max_attempts: 1, base_delay: Duration::ZERO });
    g.register_backend("p", Arc::new(backend)).unwrap();
    g.register_model(ModelSpec::new("m", "p", "corpus"));
    AgentPipeline::new(Arc::new(g), Arc::new(PromptLibrary::builtin()))
}

/// What the pipeline did with one case: `(fallback, calls, notes, value)`.
async fn outcome(case: &Case) -> (bool, usize, Vec<String>, String) {
    let p = pipeline(case);
    let date = NaiveDate::from_ymd_opt(2025, 1, 2).unwrap();
    let aapl = Ticker::new("AAPL").unwrap();
    let memory = TradingMemory::new(5);
    match case.schema.as_str() {
        "SIGNAL" => {
            let o = p.run_analyst(&aapl, date, &AnalystContext::Media { news: vec![] }, "m").await.unwrap();
            let v = serde_json::to_value(o.signal.stance).unwrap().as_str().unwrap().to_string();
            if o.fallback {
                assert_eq!((o.signal.stance, o.signal.confidence), (Stance::Neutral, 0.0));
            }
            assert!((0.0..=1.0).contains(&o.signal.confidence));
            (o.fallback, o.calls.len(), o.notes, v)
        }
        "DECISION" => {
            let ctx = ManagerContext {
                ticker: &aapl,
                trading_date: date,
                position: None,
                cash: Decimal::from(10_000),
                nav: Decimal::from(10_000),
                close: Decimal::from(100),
                max_position_weight: Decimal::new(2, 1),
                memory: &memory,
            };
            let o = p.manage(&[], &ctx, "m").await.unwrap();
            if o.fallback {
                assert_eq!(o.decision.action, Action::Hold);
            }
            assert!((0.0..=1.0).contains(&o.decision.confidence));
            let v = serde_json::to_value(o.decision.action).unwrap().as_str().unwrap().to_string();
            (o.fallback, o.calls.len(), o.notes, v)
        }
        "PLAN" => {
            let pool: BTreeSet<Ticker> = [aapl.clone(), Ticker::new("MSFT").unwrap()].into_iter().collect();
            let ctx = PlannerContext {
                trading_date: date,
                stock_pool: &pool,
                positions: &BTreeMap::new(),
                memory: &memory,
                nav: Decimal::from(10_000),
                last_return: None,
            };
            let o = p.plan(&ctx, "m").await.unwrap();
            let v = if o.plan == PlannerPlan::full_coverage(&pool, &o.plan.rationale) {
                "ALL".to_string()
            } else {
                o.plan.assignments.keys().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
            };
            (o.fallback, o.calls.len(), o.notes, v)
        }
        other => panic!("unknown schema {other}"),
    }
}

pub async fn check(case: &Case) -> Verdict {
    let (fallback, calls, notes, value) = outcome(case).await;
    let (want_fallback, want_calls) = match case.expect.as_str() {
        "repaired" => (false, 1),
        "reasked" => (false, 2),
        "fallback" => (true, 2),
        other => panic!("unknown expectation {other}"),
    };
    let ok = fallback == want_fallback && calls == want_calls && value == case.value && !notes.is_empty();
    Verdict {
        id: case.id.clone(),
        ok,
        detail: format!("fallback={fallback} calls={calls} value={value} reason={:?}", notes.first()),
    }
}
