//! Planner → analysts → manager decision pipeline and its wire protocol.

mod pipeline;
mod prompts;
mod protocol;
mod report;

pub use pipeline::{
    fallback_quantity, AgentPipeline, AnalystContext, AnalystOutcome, LlmCallRef, ManagerContext,
    ManagerOutcome, PlanOutcome, PlannerContext,
};
pub use prompts::{PromptLibrary, PromptTemplate, TemplateError};
pub use protocol::{parse_structured, ParseFailure, Parsed, Payload, SchemaId};
pub use report::{render_report, DecisionReport, TickerReport};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::market::Ticker;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AnalystKind {
    Technical,
    Fundamental,
    Insider,
    Media,
}

impl AnalystKind {
    pub const ALL: [AnalystKind; 4] =
        [AnalystKind::Technical, AnalystKind::Fundamental, AnalystKind::Insider, AnalystKind::Media];

    pub fn as_str(self) -> &'static str {
        match self {
            AnalystKind::Technical => "TECHNICAL",
            AnalystKind::Fundamental => "FUNDAMENTAL",
            AnalystKind::Insider => "INSIDER",
            AnalystKind::Media => "MEDIA",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for AnalystKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stance {
    Bullish,
    Bearish,
    Neutral,
}

impl Stance {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "BULLISH" => Some(Stance::Bullish),
            "BEARISH" => Some(Stance::Bearish),
            "NEUTRAL" => Some(Stance::Neutral),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Buy,
    Sell,
    Hold,
}

impl Action {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "BUY" => Some(Action::Buy),
            "SELL" => Some(Action::Sell),
            "HOLD" => Some(Action::Hold),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Buy => "BUY",
            Action::Sell => "SELL",
            Action::Hold => "HOLD",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlannerPlan {
    pub assignments: BTreeMap<Ticker, BTreeSet<AnalystKind>>,
    pub rationale: String,
}

impl PlannerPlan {
    /// Every pool ticker gets every analyst.
    pub fn full_coverage<'a>(pool: impl IntoIterator<Item = &'a Ticker>, rationale: &str) -> Self {
        Self {
            assignments: pool
                .into_iter()
                .map(|t| (t.clone(), AnalystKind::ALL.into_iter().collect()))
                .collect(),
            rationale: rationale.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalystSignal {
    pub kind: AnalystKind,
    pub ticker: Ticker,
    pub stance: Stance,
    pub confidence: f64,
    pub rationale: String,
    pub key_evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManagerDecision {
    pub ticker: Ticker,
    pub action: Action,
    pub quantity: Option<u64>,
    pub confidence: f64,
    pub rationale: String,
}

impl ManagerDecision {
    pub fn hold(ticker: Ticker, rationale: impl Into<String>) -> Self {
        Self { ticker, action: Action::Hold, quantity: None, confidence: 0.0, rationale: rationale.into() }
    }
}
