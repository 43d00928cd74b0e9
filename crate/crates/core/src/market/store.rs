use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::RwLock;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rust_decimal::Decimal;

use super::{
    AsOf, Fact, FundamentalSnapshot, InsiderDirection, InsiderTransaction, MarketClock,
    MarketDataError, NewsItem, PriceBar, Ticker,
};

type InsiderKey = (DateTime<Utc>, String, InsiderDirection, u64, Decimal);

#[derive(Default)]
struct TickerFacts {
    bars: BTreeMap<NaiveDate, PriceBar>,
    news: BTreeMap<(DateTime<Utc>, String), NewsItem>,
    fundamentals: BTreeMap<(DateTime<Utc>, NaiveDate), FundamentalSnapshot>,
    insiders: BTreeMap<InsiderKey, InsiderTransaction>,
}

#[derive(Default)]
struct Dataset {
    tickers: BTreeMap<Ticker, TickerFacts>,
    news_by_id: HashMap<String, NewsItem>,
    calendar: BTreeSet<NaiveDate>,
}

impl Dataset {
    fn entry(&mut self, t: &Ticker) -> &mut TickerFacts {
        self.tickers.entry(t.clone()).or_default()
    }

    fn insert(&mut self, fact: Fact) {
        match fact {
            Fact::Bar(b) => {
                self.calendar.insert(b.date);
                self.entry(&b.ticker.clone()).bars.insert(b.date, b);
            }
            Fact::News(n) => {
                if let Some(old) = self.news_by_id.remove(&n.id) {
                    for t in &old.tickers {
                        if let Some(tf) = self.tickers.get_mut(t) {
                            tf.news.remove(&(old.published_at, old.id.clone()));
                        }
                    }
                }
                for t in &n.tickers {
                    self.entry(t).news.insert((n.published_at, n.id.clone()), n.clone());
                }
                self.news_by_id.insert(n.id.clone(), n);
            }
            Fact::Fundamental(f) => {
                let key = (f.filed_at, f.report_period);
                self.entry(&f.ticker.clone()).fundamentals.insert(key, f);
            }
            Fact::Insider(i) => {
                let key = (i.filed_at, i.insider_role.clone(), i.direction, i.shares, i.price);
                self.entry(&i.ticker.clone()).insiders.insert(key, i);
            }
        }
    }

    fn len(&self) -> usize {
        self.news_by_id.len()
            + self
                .tickers
                .values()
                .map(|t| t.bars.len() + t.fundamentals.len() + t.insiders.len())
                .sum::<usize>()
    }
}

/// In-memory, point-in-time fact store. Reads take a shared lock and return
/// owned snapshots; ingestion takes the write lock.
pub struct MarketStore {
    clock: MarketClock,
    data: RwLock<Dataset>,
}

impl Default for MarketStore {
    fn default() -> Self {
        Self::new(MarketClock::default())
    }
}

impl MarketStore {
    pub fn new(clock: MarketClock) -> Self {
        Self { clock, data: RwLock::new(Dataset::default()) }
    }

    pub fn clock(&self) -> &MarketClock {
        &self.clock
    }

    /// Validate and insert a batch. The batch is all-or-nothing; records with
    /// an existing natural key replace the stored one.
    pub fn ingest_records(
        &self,
        source_name: &str,
        records: impl IntoIterator<Item = Fact>,
    ) -> Result<usize, MarketDataError> {
        let records: Vec<Fact> = records.into_iter().collect();
        for (index, r) in records.iter().enumerate() {
            r.validate(&self.clock)
                .map_err(|reason| MarketDataError::ValidationFailed { index, reason })?;
        }
        let n = records.len();
        let mut data = self.data.write().expect("market store poisoned");
        for r in records {
            data.insert(r);
        }
        tracing::debug!(source = source_name, accepted = n, "ingested market records");
        Ok(n)
    }

    /// Total number of stored facts.
    pub fn len(&self) -> usize {
        self.data.read().expect("market store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tickers(&self) -> Vec<Ticker> {
        self.data.read().expect("market store poisoned").tickers.keys().cloned().collect()
    }

    pub fn contains_ticker(&self, t: &Ticker) -> bool {
        self.data.read().expect("market store poisoned").tickers.contains_key(t)
    }

    /// Trading days, defined as the dates that have at least one price bar.
    pub fn trading_days(&self) -> Vec<NaiveDate> {
        self.data.read().expect("market store poisoned").calendar.iter().copied().collect()
    }

    pub fn is_trading_day(&self, date: NaiveDate) -> bool {
        self.data.read().expect("market store poisoned").calendar.contains(&date)
    }

    pub fn has_bar(&self, t: &Ticker, date: NaiveDate) -> bool {
        let data = self.data.read().expect("market store poisoned");
        data.tickers.get(t).is_some_and(|tf| tf.bars.contains_key(&date))
    }

    /// As-of point for an arbitrary instant: the latest trading day whose
    /// close is not after `instant`. `None` before the first close.
    pub fn as_of(&self, instant: DateTime<Utc>) -> Option<AsOf> {
        let data = self.data.read().expect("market store poisoned");
        data.calendar
            .iter()
            .rev()
            .find(|d| self.clock.close_of(**d) <= instant)
            .map(|d| AsOf { instant, trading_date: *d })
    }

    fn with_ticker<R>(
        &self,
        ticker: &Ticker,
        f: impl FnOnce(&TickerFacts) -> R,
    ) -> Result<R, MarketDataError> {
        let data = self.data.read().expect("market store poisoned");
        data.tickers
            .get(ticker)
            .map(f)
            .ok_or_else(|| MarketDataError::UnknownTicker(ticker.clone()))
    }

    /// At most `lookback_days` bars ending at `as_of.trading_date`, ascending.
    pub fn get_price_bars(
        &self,
        ticker: &Ticker,
        lookback_days: usize,
        as_of: &AsOf,
    ) -> Result<Vec<PriceBar>, MarketDataError> {
        self.with_ticker(ticker, |tf| {
            let mut out: Vec<PriceBar> = tf
                .bars
                .range(..=as_of.trading_date)
                .rev()
                .map(|(_, b)| b)
                .filter(|b| b.available_at <= as_of.instant)
                .take(lookback_days)
                .cloned()
                .collect();
            out.reverse();
            out
        })
    }

    /// News published in `[instant - window_days, instant]`, newest first.
    pub fn get_news(
        &self,
        ticker: &Ticker,
        window_days: u32,
        as_of: &AsOf,
    ) -> Result<Vec<NewsItem>, MarketDataError> {
        let lo = as_of.instant - Duration::days(window_days as i64);
        self.with_ticker(ticker, |tf| {
            let mut v: Vec<NewsItem> = tf
                .news
                .range((lo, String::new())..)
                .take_while(|((ts, _), _)| *ts <= as_of.instant)
                .map(|(_, n)| n.clone())
                .collect();
            v.reverse();
            v
        })
    }

    /// The most recently filed snapshot visible at `as_of`.
    pub fn get_fundamentals(
        &self,
        ticker: &Ticker,
        as_of: &AsOf,
    ) -> Result<Option<FundamentalSnapshot>, MarketDataError> {
        self.with_ticker(ticker, |tf| {
            tf.fundamentals
                .range(..=(as_of.instant, NaiveDate::MAX))
                .next_back()
                .map(|(_, f)| f.clone())
        })
    }

    /// Insider filings in `[instant - window_days, instant]`, newest first.
    pub fn get_insider_transactions(
        &self,
        ticker: &Ticker,
        window_days: u32,
        as_of: &AsOf,
    ) -> Result<Vec<InsiderTransaction>, MarketDataError> {
        let lo = as_of.instant - Duration::days(window_days as i64);
        self.with_ticker(ticker, |tf| {
            tf.insiders
                .values()
                .rev()
                .skip_while(|i| i.filed_at > as_of.instant)
                .take_while(|i| i.filed_at >= lo)
                .cloned()
                .collect()
        })
    }

    /// Every stored fact, in a stable order. Used for dataset export.
    pub fn all_facts(&self) -> Vec<Fact> {
        let data = self.data.read().expect("market store poisoned");
        let mut out = Vec::with_capacity(data.len());
        for tf in data.tickers.values() {
            out.extend(tf.bars.values().cloned().map(Fact::Bar));
            out.extend(tf.fundamentals.values().cloned().map(Fact::Fundamental));
            out.extend(tf.insiders.values().cloned().map(Fact::Insider));
        }
        let mut news: Vec<&NewsItem> = data.news_by_id.values().collect();
        news.sort_by(|a, b| (a.published_at, &a.id).cmp(&(b.published_at, &b.id)));
        out.extend(news.into_iter().cloned().map(Fact::News));
        out
    }
}

/// A fact that was visible before it was available.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct LeakageViolation {
    pub fact: String,
    pub available_at: DateTime<Utc>,
}

/// Report every fact whose availability is later than `as_of.instant`.
pub fn audit_leakage<'a>(
    as_of: &AsOf,
    facts: impl IntoIterator<Item = &'a Fact>,
) -> Vec<LeakageViolation> {
    facts
        .into_iter()
        .filter(|f| f.available_at() > as_of.instant)
        .map(|f| LeakageViolation { fact: f.describe(), available_at: f.available_at() })
        .collect()
}
