//! Replay datasets on disk: one directory holding `bars.jsonl`,
//! `news.jsonl`, `fundamentals.jsonl` and `insiders.jsonl`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde::de::DeserializeOwned;
use serde_json::Value;

use super::{
    Fact, FundamentalSnapshot, InsiderDirection, InsiderTransaction, MarketClock, MarketDataError,
    NewsItem, PriceBar, Ticker,
};
use crate::money::round6;

pub struct DatasetFiles;

impl DatasetFiles {
    pub const BARS: &'static str = "bars.jsonl";
    pub const NEWS: &'static str = "news.jsonl";
    pub const FUNDAMENTALS: &'static str = "fundamentals.jsonl";
    pub const INSIDERS: &'static str = "insiders.jsonl";
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> MarketDataError {
    MarketDataError::Io(format!("{}: {e}", path.display()))
}

fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
    mut patch: impl FnMut(&mut Value),
) -> Result<Vec<T>, MarketDataError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut v: Value =
            serde_json::from_str(&line).map_err(|e| io_err(path, format!("line {}: {e}", n + 1)))?;
        patch(&mut v);
        out.push(serde_json::from_value(v).map_err(|e| io_err(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

/// Read every fact in a dataset directory. Bars without `available_at`
/// are stamped with the close of their date.
pub fn load_dataset(dir: &Path, clock: &MarketClock) -> Result<Vec<Fact>, MarketDataError> {
    let mut facts = Vec::new();
    let bars: Vec<PriceBar> = read_jsonl(&dir.join(DatasetFiles::BARS), |v| {
        if v.get("available_at").is_none() {
            let date = v.get("date").and_then(Value::as_str).and_then(|s| s.parse::<NaiveDate>().ok());
            if let (Some(date), Some(obj)) = (date, v.as_object_mut()) {
                obj.insert("available_at".into(), serde_json::to_value(clock.close_of(date)).unwrap());
            }
        }
    })?;
    facts.extend(bars.into_iter().map(Fact::Bar));
    let news: Vec<NewsItem> = read_jsonl(&dir.join(DatasetFiles::NEWS), |_| {})?;
    facts.extend(news.into_iter().map(Fact::News));
    let f: Vec<FundamentalSnapshot> = read_jsonl(&dir.join(DatasetFiles::FUNDAMENTALS), |_| {})?;
    facts.extend(f.into_iter().map(Fact::Fundamental));
    let i: Vec<InsiderTransaction> = read_jsonl(&dir.join(DatasetFiles::INSIDERS), |_| {})?;
    facts.extend(i.into_iter().map(Fact::Insider));
    Ok(facts)
}

/// Write facts into a dataset directory, one file per kind.
pub fn write_dataset(dir: &Path, facts: &[Fact]) -> Result<(), MarketDataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let names = [DatasetFiles::BARS, DatasetFiles::NEWS, DatasetFiles::FUNDAMENTALS, DatasetFiles::INSIDERS];
    let mut writers = Vec::new();
    for name in names {
        let p = dir.join(name);
        writers.push(BufWriter::new(fs::File::create(&p).map_err(|e| io_err(&p, e))?));
    }
    for fact in facts {
        let (slot, line) = match fact {
            Fact::Bar(b) => (0, crate::canonical::to_canonical_string(b)),
            Fact::News(n) => (1, crate::canonical::to_canonical_string(n)),
            Fact::Fundamental(f) => (2, crate::canonical::to_canonical_string(f)),
            Fact::Insider(i) => (3, crate::canonical::to_canonical_string(i)),
        };
        let line = line.map_err(|e| io_err(dir, e))?;
        writeln!(writers[slot], "{line}").map_err(|e| io_err(dir, e))?;
    }
    for mut w in writers {
        w.flush().map_err(|e| io_err(dir, e))?;
    }
    Ok(())
}

/// Parameters for the synthetic sample dataset that `init` scaffolds.
#[derive(Debug, Clone)]
pub struct SampleSpec {
    pub tickers: Vec<Ticker>,
    pub start: NaiveDate,
    pub trading_days: usize,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            tickers: ["AAPL", "MSFT", "NVDA", "AMZN", "JPM"].iter().map(|s| Ticker::new(*s).unwrap()).collect(),
            start: NaiveDate::from_ymd_opt(2025, 1, 2).unwrap(),
            trading_days: 45,
            seed: 7,
        }
    }
}

const HEADLINES: [(&str, &str); 6] = [
    ("{T} beats quarterly revenue expectations", "Analysts point to stronger demand across segments."),
    ("{T} faces regulatory inquiry", "Regulators requested documents related to recent disclosures."),
    ("{T} announces share buyback", "The board authorized an expanded repurchase program."),
    ("{T} cuts full-year guidance", "Management cited softer orders and cost pressure."),
    ("{T} unveils new product line", "Early reviews were mixed but pre-orders were strong."),
    ("Sector rotation weighs on {T}", "Funds trimmed exposure amid rate uncertainty."),
];

/// Deterministic synthetic dataset: weekday bars on a random walk plus a
/// sprinkling of news, filings and insider trades.
pub fn sample_dataset(spec: &SampleSpec, clock: &MarketClock) -> Vec<Fact> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut days = Vec::with_capacity(spec.trading_days);
    let mut d = spec.start;
    while days.len() < spec.trading_days {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            days.push(d);
        }
        d += Duration::days(1);
    }

    let mut facts = Vec::new();
    for (ti, ticker) in spec.tickers.iter().enumerate() {
        let mut close = 50.0 + 40.0 * ti as f64 + rng.gen_range(0.0..20.0);
        for (di, date) in days.iter().enumerate() {
            let open = close * (1.0 + rng.gen_range(-0.01..0.01));
            close *= 1.0 + rng.gen_range(-0.03..0.032);
            let high = open.max(close) * (1.0 + rng.gen_range(0.0..0.01));
            let low = open.min(close) * (1.0 - rng.gen_range(0.0..0.01));
            let px = |x: f64| round6(Decimal::from_f64_retain((x * 100.0).round() / 100.0).unwrap().round_dp(2));
            let (open, high, low, close_d) = (px(open), px(high), px(low), px(close));
            facts.push(Fact::Bar(PriceBar {
                ticker: ticker.clone(),
                date: *date,
                open,
                high: high.max(open).max(close_d),
                low: low.min(open).min(close_d),
                close: close_d,
                volume: rng.gen_range(500_000..5_000_000),
                available_at: clock.close_of(*date),
            }));

            if rng.gen_bool(0.35) {
                let (h, b) = HEADLINES[rng.gen_range(0..HEADLINES.len())];
                // Some stories land after the decision point and only count the next day.
                let hour = if rng.gen_bool(0.2) { 23 } else { 13 };
                facts.push(Fact::News(NewsItem {
                    id: format!("{}-{}-{}", ticker, date, di),
                    tickers: vec![ticker.clone()],
                    published_at: date.and_hms_opt(hour, 30, 0).unwrap().and_utc(),
                    headline: h.replace("{T}", ticker.as_str()),
                    body: b.to_string(),
                    source: "synthetic-wire".into(),
                }));
            }
            if rng.gen_bool(0.08) {
                let price = px(close);
                facts.push(Fact::Insider(InsiderTransaction {
                    ticker: ticker.clone(),
                    filed_at: date.and_hms_opt(22, 30, 0).unwrap().and_utc(),
                    insider_role: ["CEO", "CFO", "Director"][rng.gen_range(0..3)].into(),
                    direction: if rng.gen_bool(0.5) { InsiderDirection::Buy } else { InsiderDirection::Sell },
                    shares: rng.gen_range(1_000..50_000),
                    price,
                }));
            }
        }

        // One filing before the window and one inside it.
        for (k, filed) in [(0usize, spec.start - Duration::days(20)), (1, days[days.len() / 2])] {
            let period = filed - Duration::days(35);
            let scale = 1_000_000.0 * (1.0 + ti as f64) * (1.0 + 0.05 * k as f64);
            let fig = |x: f64| Decimal::from_f64_retain(x.round()).unwrap();
            let figures = [
                ("revenue", fig(scale * rng.gen_range(8.0..12.0))),
                ("net_income", fig(scale * rng.gen_range(0.5..2.0))),
                ("total_assets", fig(scale * rng.gen_range(30.0..40.0))),
                ("total_liabilities", fig(scale * rng.gen_range(10.0..25.0))),
                ("eps", Decimal::new(rng.gen_range(50..500), 2)),
                ("shares_outstanding", fig(scale * 10.0)),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
            facts.push(Fact::Fundamental(FundamentalSnapshot {
                ticker: ticker.clone(),
                report_period: period,
                filed_at: filed.and_hms_opt(21, 30, 0).unwrap().and_utc(),
                figures,
            }));
        }
    }
    facts
}
