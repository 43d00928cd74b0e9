//! Point-in-time market facts and the gated store that serves them.
//!
//! Every fact carries an availability timestamp. A query made as of instant
//! `T` only ever sees facts whose availability is `<= T` (inclusive).

mod fixture;
mod live;
mod store;

pub use fixture::{load_dataset, sample_dataset, write_dataset, DatasetFiles, SampleSpec};
pub use live::{FactSource, LiveFeed, ReplaySource};
pub use store::{audit_leakage, LeakageViolation, MarketStore};

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketDataError {
    #[error("unknown ticker {0}")]
    UnknownTicker(Ticker),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("record {index} failed validation: {reason}")]
    ValidationFailed { index: usize, reason: String },
    #[error("invalid ticker symbol {0:?}")]
    InvalidTicker(String),
    #[error("dataset io: {0}")]
    Io(String),
}

/// Exchange symbol, `^[A-Z][A-Z.]{0,9}$`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ticker(String);

impl Ticker {
    pub fn new(symbol: impl Into<String>) -> Result<Self, MarketDataError> {
        let s = symbol.into();
        let mut chars = s.chars();
        let ok = match chars.next() {
            Some(c) if c.is_ascii_uppercase() => {
                s.len() <= 10 && chars.all(|c| c.is_ascii_uppercase() || c == '.')
            }
            _ => false,
        };
        if ok {
            Ok(Self(s))
        } else {
            Err(MarketDataError::InvalidTicker(s))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Ticker {
    type Error = MarketDataError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Ticker::new(s)
    }
}

impl From<Ticker> for String {
    fn from(t: Ticker) -> String {
        t.0
    }
}

impl FromStr for Ticker {
    type Err = MarketDataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ticker::new(s)
    }
}

impl fmt::Display for Ticker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The moment a decision is made, paired with the trading day it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AsOf {
    pub instant: DateTime<Utc>,
    pub trading_date: NaiveDate,
}

/// Session times used to place daily facts on the UTC timeline.
///
/// `close_utc` is the latest regular close across the year (16:00 New York
/// during standard time), so stamping bars with it never makes them early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketClock {
    pub close_utc: NaiveTime,
    pub decision_utc: NaiveTime,
}

impl Default for MarketClock {
    fn default() -> Self {
        Self {
            close_utc: NaiveTime::from_hms_opt(21, 0, 0).unwrap(),
            decision_utc: NaiveTime::from_hms_opt(22, 0, 0).unwrap(),
        }
    }
}

impl MarketClock {
    pub fn close_of(&self, date: NaiveDate) -> DateTime<Utc> {
        date.and_time(self.close_utc).and_utc()
    }

    /// The as-of point at which the cycle for `date` runs.
    pub fn decision_point(&self, date: NaiveDate) -> AsOf {
        AsOf {
            instant: date.and_time(self.decision_utc).and_utc(),
            trading_date: date,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceBar {
    pub ticker: Ticker,
    pub date: NaiveDate,
    pub open: Decimal,
    pub high: Decimal,
    pub low: Decimal,
    pub close: Decimal,
    pub volume: u64,
    pub available_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub tickers: Vec<Ticker>,
    pub published_at: DateTime<Utc>,
    pub headline: String,
    pub body: String,
    pub source: String,
}

/// Closed vocabulary for [`FundamentalSnapshot::figures`].
pub const FUNDAMENTAL_FIGURES: [&str; 6] = [
    "revenue",
    "net_income",
    "total_assets",
    "total_liabilities",
    "eps",
    "shares_outstanding",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundamentalSnapshot {
    pub ticker: Ticker,
    pub report_period: NaiveDate,
    pub filed_at: DateTime<Utc>,
    pub figures: std::collections::BTreeMap<String, Decimal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InsiderDirection {
    Buy,
    Sell,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsiderTransaction {
    pub ticker: Ticker,
    pub filed_at: DateTime<Utc>,
    pub insider_role: String,
    pub direction: InsiderDirection,
    pub shares: u64,
    pub price: Decimal,
}

/// Any of the four fact kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fact {
    Bar(PriceBar),
    News(NewsItem),
    Fundamental(FundamentalSnapshot),
    Insider(InsiderTransaction),
}

impl Fact {
    pub fn available_at(&self) -> DateTime<Utc> {
        match self {
            Fact::Bar(b) => b.available_at,
            Fact::News(n) => n.published_at,
            Fact::Fundamental(f) => f.filed_at,
            Fact::Insider(i) => i.filed_at,
        }
    }

    /// Short human-readable identity, used in leakage reports.
    pub fn describe(&self) -> String {
        match self {
            Fact::Bar(b) => format!("bar {} {}", b.ticker, b.date),
            Fact::News(n) => format!("news {}", n.id),
            Fact::Fundamental(f) => {
                format!("fundamentals {} {} filed {}", f.ticker, f.report_period, f.filed_at)
            }
            Fact::Insider(i) => format!("insider {} {} {:?}", i.ticker, i.filed_at, i.direction),
        }
    }

    pub(crate) fn validate(&self, clock: &MarketClock) -> Result<(), String> {
        use crate::money::fits_scale;
        match self {
            Fact::Bar(b) => {
                if b.low > b.high {
                    return Err(format!("low {} > high {}", b.low, b.high));
                }
                for (name, p) in [("open", b.open), ("close", b.close)] {
                    if p < b.low || p > b.high {
                        return Err(format!("{name} {p} outside [low, high]"));
                    }
                }
                if b.low <= Decimal::ZERO {
                    return Err("prices must be positive".into());
                }
                if ![b.open, b.high, b.low, b.close].into_iter().all(fits_scale) {
                    return Err("price has more than 6 fractional digits".into());
                }
                if b.available_at < clock.close_of(b.date) {
                    return Err(format!("available_at {} precedes close of {}", b.available_at, b.date));
                }
            }
            Fact::News(n) => {
                if n.id.is_empty() {
                    return Err("news id is empty".into());
                }
                if n.tickers.is_empty() {
                    return Err("news item names no tickers".into());
                }
            }
            Fact::Fundamental(f) => {
                if f.filed_at.date_naive() < f.report_period {
                    return Err("filed_at precedes report_period".into());
                }
                if let Some(k) = f.figures.keys().find(|k| !FUNDAMENTAL_FIGURES.contains(&k.as_str())) {
                    return Err(format!("unknown figure {k:?}"));
                }
            }
            Fact::Insider(i) => {
                if i.shares == 0 {
                    return Err("shares must be positive".into());
                }
                if i.price < Decimal::ZERO || !fits_scale(i.price) {
                    return Err("invalid price".into());
                }
            }
        }
        Ok(())
    }
}

impl From<PriceBar> for Fact {
    fn from(v: PriceBar) -> Self {
        Fact::Bar(v)
    }
}
impl From<NewsItem> for Fact {
    fn from(v: NewsItem) -> Self {
        Fact::News(v)
    }
}
impl From<FundamentalSnapshot> for Fact {
    fn from(v: FundamentalSnapshot) -> Self {
        Fact::Fundamental(v)
    }
}
impl From<InsiderTransaction> for Fact {
    fn from(v: InsiderTransaction) -> Self {
        Fact::Insider(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticker_pattern() {
        for ok in ["A", "AAPL", "BRK.B", "ABCDEFGHIJ"] {
            assert!(Ticker::new(ok).is_ok(), "{ok}");
        }
        for bad in ["", "aapl", "1AB", ".A", "ABCDEFGHIJK", "AB-C"] {
            assert!(Ticker::new(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn ticker_serde_validates() {
        assert!(serde_json::from_str::<Ticker>(r#""msft""#).is_err());
        let t: Ticker = serde_json::from_str(r#""MSFT""#).unwrap();
        assert_eq!(t.as_str(), "MSFT");
    }

    #[test]
    fn timestamps_serialize_with_z() {
        let clock = MarketClock::default();
        let s = serde_json::to_string(&clock.close_of(NaiveDate::from_ymd_opt(2025, 1, 2).unwrap())).unwrap();
        assert_eq!(s, r#""2025-01-02T21:00:00Z""#);
    }
}
