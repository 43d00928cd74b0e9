//! Exact-decimal fund accounting: fills, NAV marks and trading memory.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Action, ManagerDecision};
use crate::market::{AsOf, Ticker};
use crate::money::round6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PortfolioError {
    #[error("invalid fill price {0}")]
    InvalidPrice(Decimal),
    #[error("{0} is outside the fund's stock pool")]
    TickerOutsidePool(Ticker),
    #[error("no closing price for held ticker {0}")]
    MissingPrice(Ticker),
    #[error("cycle for {got} is not after last memory entry {last}")]
    OutOfOrderCycle { last: NaiveDate, got: NaiveDate },
    #[error("invalid fund: {0}")]
    InvalidFund(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FundId(String);

impl FundId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Fund ids become directory names; keep them to a safe alphabet.
    pub fn is_valid(&self) -> bool {
        !self.0.is_empty()
            && self.0.len() <= 64
            && self.0.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    }
}

impl fmt::Display for FundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for FundId {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Self(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecutionPolicy {
    /// Fill at the decision day's close.
    #[default]
    Close,
    /// Queue the order and fill it at the next trading day's open.
    NextOpen,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FundConfig {
    pub max_position_weight: Decimal,
    pub fee_bps: Decimal,
    pub execution_policy: ExecutionPolicy,
    pub memory_window: usize,
    pub allow_short: bool,
}

impl Default for FundConfig {
    fn default() -> Self {
        Self {
            max_position_weight: Decimal::new(2, 1),
            fee_bps: Decimal::ZERO,
            execution_policy: ExecutionPolicy::Close,
            memory_window: 10,
            allow_short: false,
        }
    }
}

impl FundConfig {
    pub fn validate(&self) -> Result<(), PortfolioError> {
        let bad = |m: &str| Err(PortfolioError::InvalidFund(m.to_string()));
        if self.max_position_weight <= Decimal::ZERO || self.max_position_weight > Decimal::ONE {
            return bad("max_position_weight must be in (0, 1]");
        }
        if self.fee_bps < Decimal::ZERO || self.fee_bps > Decimal::from(10_000) {
            return bad("fee_bps must be in [0, 10000]");
        }
        if self.memory_window == 0 {
            return bad("memory_window must be positive");
        }
        if self.allow_short {
            return bad("short selling is not supported");
        }
        Ok(())
    }

    pub fn fee(&self, price: Decimal, quantity: u64) -> Decimal {
        round6(price * Decimal::from(quantity) * self.fee_bps / Decimal::from(10_000))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub ticker: Ticker,
    pub quantity: u64,
    pub avg_cost: Decimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeFill {
    pub ticker: Ticker,
    pub action: Side,
    pub quantity: u64,
    pub price: Decimal,
    pub fee: Decimal,
    pub executed_at: AsOf,
}

impl TradeFill {
    pub fn notional(&self) -> Decimal {
        self.price * Decimal::from(self.quantity)
    }
}

/// Why a BUY/SELL produced no fill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedDecision {
    pub ticker: Ticker,
    pub action: Action,
    pub requested: Option<u64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavSnapshot {
    pub as_of: AsOf,
    pub cash: Decimal,
    pub holdings_value: Decimal,
    pub nav: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub trading_date: NaiveDate,
    pub actions: BTreeMap<Ticker, Action>,
    pub fills: Vec<String>,
    pub nav: Decimal,
    pub rationale: String,
}

/// The last `window` cycle summaries, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradingMemory {
    pub window: usize,
    pub entries: VecDeque<MemoryEntry>,
}

impl TradingMemory {
    pub fn new(window: usize) -> Self {
        Self { window, entries: VecDeque::new() }
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.entries.back().map(|e| e.trading_date)
    }
}

/// A NEXT_OPEN order waiting for the following session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingOrder {
    pub decided_on: NaiveDate,
    pub decision: ManagerDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fund {
    pub fund_id: FundId,
    pub name: String,
    pub model_spec_id: String,
    pub stock_pool: BTreeSet<Ticker>,
    pub cash: Decimal,
    pub positions: BTreeMap<Ticker, Position>,
    pub inception: AsOf,
    pub config: FundConfig,
    pub memory: TradingMemory,
    pub pending_orders: Vec<PendingOrder>,
    pub last_cycle: Option<NaiveDate>,
}

impl Fund {
    pub fn new(
        fund_id: FundId,
        name: impl Into<String>,
        model_spec_id: impl Into<String>,
        stock_pool: BTreeSet<Ticker>,
        initial_cash: Decimal,
        inception: AsOf,
        config: FundConfig,
    ) -> Result<Self, PortfolioError> {
        config.validate()?;
        if stock_pool.is_empty() {
            return Err(PortfolioError::InvalidFund("stock_pool must not be empty".into()));
        }
        if initial_cash < Decimal::ZERO {
            return Err(PortfolioError::InvalidFund("initial cash must be non-negative".into()));
        }
        if !fund_id.is_valid() {
            return Err(PortfolioError::InvalidFund(format!("invalid fund id {fund_id:?}")));
        }
        Ok(Self {
            fund_id,
            name: name.into(),
            model_spec_id: model_spec_id.into(),
            stock_pool,
            cash: round6(initial_cash),
            positions: BTreeMap::new(),
            inception,
            memory: TradingMemory::new(config.memory_window),
            config,
            pending_orders: Vec::new(),
            last_cycle: None,
        })
    }

    pub fn held(&self, ticker: &Ticker) -> u64 {
        self.positions.get(ticker).map_or(0, |p| p.quantity)
    }

    /// Book a fill. This is the single mutation path shared by live
    /// execution and event-log folding.
    pub fn apply_fill(&mut self, fill: &TradeFill) {
        let qty = Decimal::from(fill.quantity);
        match fill.action {
            Side::Buy => {
                self.cash = round6(self.cash - fill.price * qty - fill.fee);
                let pos = self.positions.entry(fill.ticker.clone()).or_insert(Position {
                    ticker: fill.ticker.clone(),
                    quantity: 0,
                    avg_cost: Decimal::ZERO,
                });
                let held = Decimal::from(pos.quantity);
                pos.avg_cost = round6((pos.avg_cost * held + fill.price * qty) / (held + qty));
                pos.quantity += fill.quantity;
            }
            Side::Sell => {
                self.cash = round6(self.cash + fill.price * qty - fill.fee);
                if let Some(pos) = self.positions.get_mut(&fill.ticker) {
                    pos.quantity -= fill.quantity;
                    if pos.quantity == 0 {
                        self.positions.remove(&fill.ticker);
                    }
                }
            }
        }
    }

    /// Cash plus holdings, with `ticker` valued at `price` and everything
    /// else at `marks`.
    fn nav_with(
        &self,
        ticker: &Ticker,
        price: Decimal,
        marks: &BTreeMap<Ticker, Decimal>,
    ) -> Result<Decimal, PortfolioError> {
        let mut nav = self.cash;
        for (t, p) in &self.positions {
            let px = if t == ticker {
                price
            } else {
                *marks.get(t).ok_or_else(|| PortfolioError::MissingPrice(t.clone()))?
            };
            nav += px * Decimal::from(p.quantity);
        }
        Ok(nav)
    }
}

/// Result of [`execute_decision`].
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub fund: Fund,
    pub fill: Option<TradeFill>,
    pub skip: Option<SkippedDecision>,
}

/// Largest BUY quantity, at most `requested`, whose cost plus fee fits in
/// cash and whose resulting position weight stays under the cap.
pub fn max_buy_quantity(fund: &Fund, ticker: &Ticker, price: Decimal, nav: Decimal, requested: u64) -> u64 {
    let cost = |q: u64| price * Decimal::from(q) + fund.config.fee(price, q);
    let per_share = price * (Decimal::ONE + fund.config.fee_bps / Decimal::from(10_000));
    let mut by_cash = (fund.cash / per_share).floor().try_into().unwrap_or(0u64).min(requested);
    while by_cash < requested && cost(by_cash + 1) <= fund.cash {
        by_cash += 1;
    }
    while by_cash > 0 && cost(by_cash) > fund.cash {
        by_cash -= 1;
    }
    let cap_value = fund.config.max_position_weight * nav;
    let cap_shares: u64 = if cap_value <= Decimal::ZERO {
        0
    } else {
        (cap_value / price).floor().try_into().unwrap_or(u64::MAX)
    };
    let by_weight = cap_shares.saturating_sub(fund.held(ticker));
    by_cash.min(by_weight)
}

/// Apply a manager decision at `fill_price`, clamping oversized orders.
///
/// `marks` values the fund's other holdings for the weight cap.
pub fn execute_decision(
    fund: &Fund,
    decision: &ManagerDecision,
    fill_price: Decimal,
    marks: &BTreeMap<Ticker, Decimal>,
    as_of: AsOf,
) -> Result<Execution, PortfolioError> {
    if fill_price <= Decimal::ZERO {
        return Err(PortfolioError::InvalidPrice(fill_price));
    }
    if !fund.stock_pool.contains(&decision.ticker) {
        return Err(PortfolioError::TickerOutsidePool(decision.ticker.clone()));
    }
    let skip = |reason: &str| {
        Ok(Execution {
            fund: fund.clone(),
            fill: None,
            skip: Some(SkippedDecision {
                ticker: decision.ticker.clone(),
                action: decision.action,
                requested: decision.quantity,
                reason: reason.to_string(),
            }),
        })
    };
    let side = match decision.action {
        Action::Hold => return Ok(Execution { fund: fund.clone(), fill: None, skip: None }),
        Action::Buy => Side::Buy,
        Action::Sell => Side::Sell,
    };
    let Some(requested) = decision.quantity else {
        return skip("no quantity");
    };
    if requested == 0 {
        return skip("zero quantity requested");
    }
    let price = round6(fill_price);
    let quantity = match side {
        Side::Buy => {
            let nav = fund.nav_with(&decision.ticker, price, marks)?;
            let q = max_buy_quantity(fund, &decision.ticker, price, nav, requested);
            if q == 0 {
                return skip("clamped to zero by cash or position-weight limit");
            }
            q
        }
        Side::Sell => {
            let held = fund.held(&decision.ticker);
            if held == 0 {
                return skip("nothing held to sell");
            }
            requested.min(held)
        }
    };
    if quantity < requested {
        tracing::info!(ticker = %decision.ticker, requested, quantity, "order clamped");
    }
    let fill = TradeFill {
        ticker: decision.ticker.clone(),
        action: side,
        quantity,
        price,
        fee: fund.config.fee(price, quantity),
        executed_at: as_of,
    };
    let mut next = fund.clone();
    next.apply_fill(&fill);
    Ok(Execution { fund: next, fill: Some(fill), skip: None })
}

/// Value the fund at `closes`.
pub fn mark_to_market(
    fund: &Fund,
    closes: &BTreeMap<Ticker, Decimal>,
    as_of: AsOf,
) -> Result<NavSnapshot, PortfolioError> {
    let mut holdings = Decimal::ZERO;
    for (t, p) in &fund.positions {
        let close = closes.get(t).ok_or_else(|| PortfolioError::MissingPrice(t.clone()))?;
        holdings += *close * Decimal::from(p.quantity);
    }
    let holdings_value = round6(holdings);
    Ok(NavSnapshot { as_of, cash: fund.cash, holdings_value, nav: fund.cash + holdings_value })
}

/// Append a cycle summary, evicting the oldest entry past the window.
pub fn append_memory(fund: &Fund, entry: MemoryEntry) -> Result<Fund, PortfolioError> {
    if let Some(last) = fund.memory.last_date() {
        if entry.trading_date <= last {
            return Err(PortfolioError::OutOfOrderCycle { last, got: entry.trading_date });
        }
    }
    let mut next = fund.clone();
    next.memory.entries.push_back(entry);
    while next.memory.entries.len() > next.memory.window {
        next.memory.entries.pop_front();
    }
    Ok(next)
}
