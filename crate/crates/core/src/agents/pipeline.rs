use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::protocol::{parse_structured, ParseFailure, Parsed, Payload, SchemaId};
use super::prompts::{PromptLibrary, PromptTemplate};
use super::{Action, AnalystKind, AnalystSignal, ManagerDecision, PlannerPlan, Stance};
use crate::gateway::{Gateway, LlmError};
use crate::indicators::{indicators_for_bars, IndicatorSet};
use crate::market::{Fact, FundamentalSnapshot, InsiderTransaction, NewsItem, PriceBar, Ticker};
use crate::portfolio::{Position, TradingMemory};

/// Reference to one model call, as stored in the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmCallRef {
    pub request_hash: String,
    pub template_id: String,
    /// Latency recorded with the exchange, not wall time of this run.
    pub latency_ms: u64,
}

pub struct PlannerContext<'a> {
    pub trading_date: chrono::NaiveDate,
    pub stock_pool: &'a BTreeSet<Ticker>,
    pub positions: &'a BTreeMap<Ticker, Position>,
    pub memory: &'a TradingMemory,
    pub nav: Decimal,
    pub last_return: Option<f64>,
}

/// The data one analyst is allowed to see. Each kind gets only its own
/// class of facts.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalystContext {
    Technical { bars: Vec<PriceBar>, indicators: IndicatorSet<f64> },
    Fundamental { snapshot: Option<FundamentalSnapshot> },
    Insider { transactions: Vec<InsiderTransaction> },
    Media { news: Vec<NewsItem> },
}

impl AnalystContext {
    pub fn technical(bars: Vec<PriceBar>) -> Self {
        let indicators = indicators_for_bars(&bars);
        AnalystContext::Technical { bars, indicators }
    }

    pub fn kind(&self) -> AnalystKind {
        match self {
            AnalystContext::Technical { .. } => AnalystKind::Technical,
            AnalystContext::Fundamental { .. } => AnalystKind::Fundamental,
            AnalystContext::Insider { .. } => AnalystKind::Insider,
            AnalystContext::Media { .. } => AnalystKind::Media,
        }
    }

    /// Every market fact embedded in this context.
    pub fn facts(&self) -> Vec<Fact> {
        match self {
            AnalystContext::Technical { bars, .. } => bars.iter().cloned().map(Fact::Bar).collect(),
            AnalystContext::Fundamental { snapshot } => snapshot.iter().cloned().map(Fact::Fundamental).collect(),
            AnalystContext::Insider { transactions } => transactions.iter().cloned().map(Fact::Insider).collect(),
            AnalystContext::Media { news } => news.iter().cloned().map(Fact::News).collect(),
        }
    }
}

pub struct ManagerContext<'a> {
    pub ticker: &'a Ticker,
    pub trading_date: chrono::NaiveDate,
    pub position: Option<&'a Position>,
    pub cash: Decimal,
    pub nav: Decimal,
    pub close: Decimal,
    pub max_position_weight: Decimal,
    pub memory: &'a TradingMemory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub plan: PlannerPlan,
    pub fallback: bool,
    pub calls: Vec<LlmCallRef>,
    /// Repairs applied and fallback reasons.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalystOutcome {
    pub signal: AnalystSignal,
    pub fallback: bool,
    pub calls: Vec<LlmCallRef>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManagerOutcome {
    pub decision: ManagerDecision,
    pub fallback: bool,
    /// Quantity came from confidence-scaled sizing rather than the model.
    pub sized_by_fallback: bool,
    pub calls: Vec<LlmCallRef>,
    pub notes: Vec<String>,
}

fn to_decimal(x: f64) -> Decimal {
    // Shortest round-trip text keeps e.g. 0.7 exact.
    Decimal::from_str(&x.to_string()).unwrap_or(Decimal::ZERO)
}

/// Confidence-scaled order size used when the manager leaves quantity out.
///
/// BUY: `floor(confidence * max_position_weight * nav / close)`.
/// SELL: `floor(confidence * held)`.
pub fn fallback_quantity(
    action: Action,
    confidence: f64,
    max_position_weight: Decimal,
    nav: Decimal,
    close: Decimal,
    held: u64,
) -> Option<u64> {
    let c = to_decimal(confidence.clamp(0.0, 1.0));
    match action {
        Action::Hold => None,
        Action::Buy if close <= Decimal::ZERO => Some(0),
        Action::Buy => (c * max_position_weight * nav / close).floor().to_u64().or(Some(0)),
        Action::Sell => (c * Decimal::from(held)).floor().to_u64().or(Some(0)),
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

fn memory_lines(memory: &TradingMemory) -> String {
    if memory.entries.is_empty() {
        return "(none)".to_string();
    }
    let mut s = String::new();
    for e in &memory.entries {
        let actions: Vec<String> = e.actions.iter().map(|(t, a)| format!("{t}:{a}")).collect();
        let _ = writeln!(
            s,
            "{} nav={} actions=[{}] fills=[{}] note={}",
            e.trading_date,
            e.nav,
            actions.join(","),
            e.fills.join("; "),
            e.rationale
        );
    }
    s.trim_end().to_string()
}

pub struct AgentPipeline {
    gateway: Arc<Gateway>,
    prompts: Arc<PromptLibrary>,
}

impl AgentPipeline {
    pub fn new(gateway: Arc<Gateway>, prompts: Arc<PromptLibrary>) -> Self {
        Self { gateway, prompts }
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    /// One call, one parse, and at most one repair request.
    async fn ask(
        &self,
        template: &PromptTemplate,
        mut vars: BTreeMap<&str, String>,
        schema: SchemaId,
        spec_id: &str,
        calls: &mut Vec<LlmCallRef>,
        notes: &mut Vec<String>,
    ) -> Result<Result<Parsed, ParseFailure>, LlmError> {
        vars.insert("schema", schema.describe().to_string());
        let (system, user) = template
            .render(&vars)
            .map_err(|e| LlmError::Unavailable { reason: format!("prompt: {e}") })?;
        let first = self.gateway.complete(&system, &user, spec_id).await?;
        calls.push(LlmCallRef {
            request_hash: first.exchange.request_hash.clone(),
            template_id: template.id.clone(),
            latency_ms: first.exchange.response.latency_ms,
        });
        let failure = match parse_structured(&first.exchange.response.text, schema) {
            Ok(p) => {
                notes.extend(p.repairs.iter().cloned());
                return Ok(Ok(p));
            }
            Err(f) => f,
        };
        tracing::warn!(template = %template.id, reason = %failure, "unparseable reply, requesting repair");
        notes.push(format!("parse failure: {failure}"));
        let repair_user = format!(
            "{user}\n\nYour previous reply could not be parsed ({failure}). Reply with a single JSON object matching:\n{}\n\nPrevious reply:\n{}",
            schema.describe(),
            first.exchange.response.text
        );
        let second = self.gateway.complete(&system, &repair_user, spec_id).await?;
        calls.push(LlmCallRef {
            request_hash: second.exchange.request_hash.clone(),
            template_id: template.id.clone(),
            latency_ms: second.exchange.response.latency_ms,
        });
        let out = parse_structured(&second.exchange.response.text, schema);
        match &out {
            Ok(p) => notes.extend(p.repairs.iter().cloned()),
            Err(f) => notes.push(format!("parse failure after repair: {f}")),
        }
        Ok(out)
    }

    pub async fn plan(&self, ctx: &PlannerContext<'_>, spec_id: &str) -> Result<PlanOutcome, LlmError> {
        let template = self.prompts.get("planner").map_err(|e| LlmError::Unavailable { reason: e.to_string() })?;
        let pool: Vec<&str> = ctx.stock_pool.iter().map(Ticker::as_str).collect();
        let positions = if ctx.positions.is_empty() {
            "(none)".to_string()
        } else {
            ctx.positions
                .values()
                .map(|p| format!("{} qty={} avg_cost={}", p.ticker, p.quantity, p.avg_cost))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let vars: BTreeMap<&str, String> = [
            ("trading_date", ctx.trading_date.to_string()),
            ("stock_pool", pool.join(", ")),
            ("nav", ctx.nav.to_string()),
            ("last_return", fmt_opt(ctx.last_return)),
            ("positions", positions),
            ("memory", memory_lines(ctx.memory)),
        ]
        .into_iter()
        .collect();

        let mut calls = Vec::new();
        let mut notes = Vec::new();
        let parsed = self.ask(template, vars, SchemaId::Plan, spec_id, &mut calls, &mut notes).await?;
        match parsed {
            Ok(Parsed { payload: Payload::Plan { assignments, rationale }, .. }) => {
                let mut plan = PlannerPlan { assignments: BTreeMap::new(), rationale };
                for (sym, kinds) in assignments {
                    match Ticker::new(sym.clone()) {
                        Ok(t) if ctx.stock_pool.contains(&t) => {
                            plan.assignments.insert(t, kinds);
                        }
                        _ => notes.push(format!("dropped {sym:?}: not in stock pool")),
                    }
                }
                Ok(PlanOutcome { plan, fallback: false, calls, notes })
            }
            Ok(_) => unreachable!("plan schema yields plan payload"),
            Err(f) => {
                notes.push(format!("FallbackPlan: {f}"));
                tracing::warn!(reason = %f, "planner fell back to full coverage");
                let plan = PlannerPlan::full_coverage(ctx.stock_pool, "fallback: every ticker, every analyst");
                Ok(PlanOutcome { plan, fallback: true, calls, notes })
            }
        }
    }

    pub async fn run_analyst(
        &self,
        ticker: &Ticker,
        trading_date: chrono::NaiveDate,
        ctx: &AnalystContext,
        spec_id: &str,
    ) -> Result<AnalystOutcome, LlmError> {
        let kind = ctx.kind();
        let role = format!("analyst_{}", kind.as_str().to_ascii_lowercase());
        let template = self.prompts.get(&role).map_err(|e| LlmError::Unavailable { reason: e.to_string() })?;
        let mut vars: BTreeMap<&str, String> =
            [("ticker", ticker.to_string()), ("trading_date", trading_date.to_string())].into_iter().collect();
        match ctx {
            AnalystContext::Technical { bars, indicators } => {
                let lines: Vec<String> = bars
                    .iter()
                    .rev()
                    .take(20)
                    .rev()
                    .map(|b| format!("{} {} {} {} {} {}", b.date, b.open, b.high, b.low, b.close, b.volume))
                    .collect();
                vars.insert("bars", if lines.is_empty() { "(no bars available)".into() } else { lines.join("\n") });
                let i = indicators;
                vars.insert(
                    "indicators",
                    format!(
                        "sma_20={}\nema_12={}\nema_26={}\nmacd={}\nmacd_signal={}\nrsi_14={}\nreturn_5d={}\nreturn_20d={}\nvolatility_20d={}",
                        fmt_opt(i.sma_20),
                        fmt_opt(i.ema_12),
                        fmt_opt(i.ema_26),
                        fmt_opt(i.macd),
                        fmt_opt(i.macd_signal),
                        fmt_opt(i.rsi_14),
                        fmt_opt(i.return_5d),
                        fmt_opt(i.return_20d),
                        fmt_opt(i.volatility_20d)
                    ),
                );
            }
            AnalystContext::Fundamental { snapshot } => {
                let text = match snapshot {
                    None => "no filings available".to_string(),
                    Some(s) => {
                        let mut t = format!("report_period={} filed_at={}", s.report_period, s.filed_at.to_rfc3339());
                        for (k, v) in &s.figures {
                            let _ = write!(t, "\n{k}={v}");
                        }
                        t
                    }
                };
                vars.insert("fundamentals", text);
            }
            AnalystContext::Insider { transactions } => {
                let text = if transactions.is_empty() {
                    "no insider filings available".to_string()
                } else {
                    transactions
                        .iter()
                        .map(|i| {
                            format!(
                                "{} {} {:?} shares={} price={}",
                                i.filed_at.to_rfc3339(),
                                i.insider_role,
                                i.direction,
                                i.shares,
                                i.price
                            )
                        })
                        .collect::<Vec<_>>()
                        .join("\n")
                };
                vars.insert("insiders", text);
            }
            AnalystContext::Media { news } => {
                let text = if news.is_empty() {
                    "no news available".to_string()
                } else {
                    news.iter()
                        .map(|n| format!("{} [{}] {}\n  {}", n.published_at.to_rfc3339(), n.source, n.headline, n.body))
                        .collect::<Vec<_>>()
                        .join("\n")
                };
                vars.insert("news", text);
            }
        }

        let mut calls = Vec::new();
        let mut notes = Vec::new();
        let parsed = self.ask(template, vars, SchemaId::Signal, spec_id, &mut calls, &mut notes).await?;
        let (signal, fallback) = match parsed {
            Ok(Parsed { payload: Payload::Signal { stance, confidence, rationale, key_evidence }, .. }) => (
                AnalystSignal { kind, ticker: ticker.clone(), stance, confidence, rationale, key_evidence },
                false,
            ),
            Ok(_) => unreachable!("signal schema yields signal payload"),
            Err(_) => (
                AnalystSignal {
                    kind,
                    ticker: ticker.clone(),
                    stance: Stance::Neutral,
                    confidence: 0.0,
                    rationale: "parse-failure".to_string(),
                    key_evidence: Vec::new(),
                },
                true,
            ),
        };
        Ok(AnalystOutcome { signal, fallback, calls, notes })
    }

    pub async fn manage(
        &self,
        signals: &[AnalystSignal],
        ctx: &ManagerContext<'_>,
        spec_id: &str,
    ) -> Result<ManagerOutcome, LlmError> {
        debug_assert!(signals.iter().all(|s| &s.ticker == ctx.ticker));
        let template = self.prompts.get("manager").map_err(|e| LlmError::Unavailable { reason: e.to_string() })?;
        let held = ctx.position.map_or(0, |p| p.quantity);
        let signal_lines = if signals.is_empty() {
            "(no signals)".to_string()
        } else {
            signals
                .iter()
                .map(|s| {
                    let stance = serde_json::to_value(s.stance).unwrap();
                    format!(
                        "SIGNAL {} {} {:.2} | {}",
                        s.kind,
                        stance.as_str().unwrap_or("NEUTRAL"),
                        s.confidence,
                        s.rationale.replace('\n', " ")
                    )
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        let vars: BTreeMap<&str, String> = [
            ("ticker", ctx.ticker.to_string()),
            ("trading_date", ctx.trading_date.to_string()),
            ("close", ctx.close.to_string()),
            ("held", held.to_string()),
            ("avg_cost", ctx.position.map_or_else(|| "n/a".to_string(), |p| p.avg_cost.to_string())),
            ("cash", ctx.cash.to_string()),
            ("nav", ctx.nav.to_string()),
            ("max_position_weight", ctx.max_position_weight.to_string()),
            ("signals", signal_lines),
            ("memory", memory_lines(ctx.memory)),
        ]
        .into_iter()
        .collect();

        let mut calls = Vec::new();
        let mut notes = Vec::new();
        let parsed = self.ask(template, vars, SchemaId::Decision, spec_id, &mut calls, &mut notes).await?;
        let (mut decision, fallback) = match parsed {
            Ok(Parsed { payload: Payload::Decision { action, quantity, confidence, rationale }, .. }) => (
                ManagerDecision { ticker: ctx.ticker.clone(), action, quantity, confidence, rationale },
                false,
            ),
            Ok(_) => unreachable!("decision schema yields decision payload"),
            Err(_) => (ManagerDecision::hold(ctx.ticker.clone(), "parse-failure"), true),
        };
        let mut sized_by_fallback = false;
        if decision.action == Action::Hold {
            decision.quantity = None;
        } else if decision.quantity.is_none() {
            decision.quantity = fallback_quantity(
                decision.action,
                decision.confidence,
                ctx.max_position_weight,
                ctx.nav,
                ctx.close,
                held,
            );
            sized_by_fallback = true;
            notes.push(format!("sized by confidence: {:?}", decision.quantity));
        }
        Ok(ManagerOutcome { decision, fallback, sized_by_fallback, calls, notes })
    }
}
