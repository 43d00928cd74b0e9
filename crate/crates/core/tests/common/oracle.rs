//! Independent bookkeeping in integer micro-units, used to check the
//! Decimal portfolio engine and the event-log fold.

#![allow(dead_code)]

use std::collections::BTreeMap;

use arena_core::agents::{Action, ManagerDecision};
use arena_core::events::{CycleTimings, EventBody, EventStore};
use arena_core::market::{AsOf, MarketClock, Ticker};
use arena_core::portfolio::{execute_decision, mark_to_market, Fund, FundConfig, FundId, Side, TradeFill};
use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;

pub const MICRO: i128 = 1_000_000;

pub fn to_micro(d: Decimal) -> i128 {
    let scaled = d * Decimal::from(MICRO as i64);
    assert_eq!(scaled.fract(), Decimal::ZERO, "{d} has more than 6 decimals");
    scaled.to_i128().unwrap()
}

pub fn from_micro(m: i128) -> Decimal {
    Decimal::from_i128_with_scale(m, 6).normalize()
}

/// Round `num / den` to the nearest integer, ties to even. `den > 0`.
pub fn div_half_even(num: i128, den: i128) -> i128 {
    let (q, r) = (num.div_euclid(den), num.rem_euclid(den));
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Order {
    pub ticker: usize,
    pub action: Action,
    pub quantity: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Day {
    /// Close per ticker in micro-units.
    pub closes: Vec<i128>,
    pub orders: Vec<Order>,
}

#[derive(Debug, Clone, Default)]
pub struct Books {
    pub cash: i128,
    pub held: BTreeMap<usize, u64>,
}

impl Books {
    pub fn nav(&self, closes: &[i128]) -> i128 {
        self.cash + self.held.iter().map(|(t, q)| closes[*t] * *q as i128).sum::<i128>()
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub tickers: Vec<Ticker>,
    pub initial_cash: i128,
    pub fee_bps: i128,
    /// Position cap in percent of NAV.
    pub weight_pct: i128,
    pub days: Vec<Day>,
}

pub struct Outcome {
    pub initial: Fund,
    pub fund: Fund,
    pub navs: Vec<Decimal>,
    pub fills: Vec<TradeFill>,
    pub decisions: usize,
    pub bodies: Vec<Vec<EventBody>>,
}

pub fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
}

/// Drive the engine through the scenario, checking every step against the
/// integer books. Returns the engine's result and the per-cycle event
/// bodies. Panics on the first disagreement.
pub fn run(s: &Scenario, fund_id: &str) -> Outcome {
    let clock = MarketClock::default();
    let config = FundConfig {
        fee_bps: Decimal::from(s.fee_bps as i64),
        max_position_weight: Decimal::from(s.weight_pct as i64) / Decimal::from(100),
        ..FundConfig::default()
    };
    let mut fund = Fund::new(
        FundId::new(fund_id),
        "oracle",
        "m",
        s.tickers.iter().cloned().collect(),
        from_micro(s.initial_cash),
        clock.decision_point(start()),
        config,
    )
    .unwrap();
    let mut books = Books { cash: s.initial_cash, ..Books::default() };
    let mut out = Outcome { initial: fund.clone(), fund: fund.clone(), navs: vec![], fills: vec![], decisions: 0, bodies: vec![] };

    for (i, day) in s.days.iter().enumerate() {
        let date = start() + Days::new(i as u64 + 1);
        let as_of: AsOf = clock.decision_point(date);
        let marks: BTreeMap<Ticker, Decimal> =
            s.tickers.iter().cloned().zip(day.closes.iter().map(|c| from_micro(*c))).collect();
        let mut bodies = vec![EventBody::CycleStarted { trading_date: date, as_of, run_id: None }];
        for o in &day.orders {
            out.decisions += 1;
            let ticker = s.tickers[o.ticker].clone();
            let decision = ManagerDecision {
                ticker: ticker.clone(),
                action: o.action,
                quantity: o.quantity,
                confidence: 0.5,
                rationale: String::new(),
            };
            let price = day.closes[o.ticker];
            let nav_before = books.nav(&day.closes);
            let ex = execute_decision(&fund, &decision, marks[&ticker], &marks, as_of).unwrap();
            let held = books.held.get(&o.ticker).copied().unwrap_or(0);
            let expected_qty = expected_quantity(s, &books, o, held, price, nav_before);
            let got = ex.fill.as_ref().map_or(0, |f| f.quantity);
            assert_eq!(got, expected_qty, "quantity for {o:?} on day {i}");
            if let Some(fill) = &ex.fill {
                let fee = fee(s, price, fill.quantity);
                assert_eq!(to_micro(fill.fee), fee);
                assert_eq!(to_micro(fill.price), price);
                let notional = price * fill.quantity as i128;
                match fill.action {
                    Side::Buy => {
                        books.cash -= notional + fee;
                        *books.held.entry(o.ticker).or_default() += fill.quantity;
                    }
                    Side::Sell => {
                        books.cash += notional - fee;
                        let h = books.held.get_mut(&o.ticker).unwrap();
                        *h -= fill.quantity;
                        if *h == 0 {
                            books.held.remove(&o.ticker);
                        }
                    }
                }
                bodies.push(EventBody::OrderFilled { trading_date: date, decided_on: date, fill: fill.clone() });
                out.fills.push(fill.clone());
            }
            fund = ex.fund;
            assert!(books.cash >= 0, "cash went negative");
            assert_eq!(to_micro(fund.cash), books.cash, "cash after {o:?} on day {i}");
            let engine_held: BTreeMap<usize, u64> = fund
                .positions
                .values()
                .map(|p| (s.tickers.iter().position(|t| *t == p.ticker).unwrap(), p.quantity))
                .collect();
            assert_eq!(engine_held, books.held);
        }
        let snap = mark_to_market(&fund, &marks, as_of).unwrap();
        assert_eq!(to_micro(snap.nav), books.nav(&day.closes), "nav identity on day {i}");
        assert_eq!(snap.nav, snap.cash + snap.holdings_value);
        out.navs.push(snap.nav);
        bodies.push(EventBody::NavMarked { trading_date: date, closes: marks, snapshot: snap });
        bodies.push(EventBody::CycleCompleted {
            trading_date: date,
            timings: CycleTimings::default(),
            pending_orders: vec![],
        });
        fund.last_cycle = Some(date);
        out.bodies.push(bodies);
    }
    out.fund = fund;
    out
}

fn fee(s: &Scenario, price: i128, qty: u64) -> i128 {
    div_half_even(price * qty as i128 * s.fee_bps, 10_000)
}

fn expected_quantity(s: &Scenario, books: &Books, o: &Order, held: u64, price: i128, nav_before: i128) -> u64 {
    let requested = match (o.action, o.quantity) {
        (Action::Hold, _) | (_, None) | (_, Some(0)) => return 0,
        (_, Some(q)) => q,
    };
    match o.action {
        Action::Sell => requested.min(held),
        Action::Buy => {
            let fits = |q: u64| {
                let cost = price * q as i128 + fee(s, price, q);
                let weight_ok = (held + q) as i128 * price * 100 <= s.weight_pct * nav_before;
                cost <= books.cash && weight_ok
            };
            // Both limits are monotone in q.
            let (mut lo, mut hi) = (0u64, requested);
            while lo < hi {
                let mid = lo + (hi - lo).div_ceil(2);
                if fits(mid) {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            lo
        }
        Action::Hold => 0,
    }
}

/// Write the cycles to a fresh event log and fold it back.
pub fn write_and_fold(store: &EventStore, out: &Outcome) -> arena_core::events::FundState {
    let initial = out.initial.clone();
    let id = initial.fund_id.clone();
    let ts = initial.inception.instant;
    store.append_bodies(&id, ts, vec![EventBody::FundCreated { fund: initial, model_spec: None }]).unwrap();
    for bodies in &out.bodies {
        store.append_bodies(&id, ts, bodies.clone()).unwrap();
    }
    store.fold_fund(&id).unwrap()
}

pub fn tickers(n: usize) -> Vec<Ticker> {
    ["AAA", "BBB", "CCC", "DDD", "EEE"][..n].iter().map(|s| Ticker::new(*s).unwrap()).collect()
}

/// A seeded multi-day scenario with `decisions` random orders over five tickers.
pub fn long_scenario(seed: u64, decisions: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 5;
    let mut closes: Vec<i128> = (0..n).map(|_| rng.gen_range(20_000_000..300_000_000)).collect();
    let mut days = Vec::new();
    let mut left = decisions;
    while left > 0 {
        for c in closes.iter_mut() {
            let bp: i128 = rng.gen_range(-300..=300);
            *c = (*c + *c * bp / 10_000).max(1_000_000);
        }
        let k = left.min(rng.gen_range(1..=8));
        let orders = (0..k)
            .map(|_| Order {
                ticker: rng.gen_range(0..n),
                action: [Action::Buy, Action::Sell, Action::Hold][rng.gen_range(0..3)],
                quantity: Some(rng.gen_range(1..200)),
            })
            .collect();
        left -= k;
        days.push(Day { closes: closes.clone(), orders });
    }
    Scenario { tickers: tickers(n), initial_cash: 250_000 * MICRO, fee_bps: 7, weight_pct: 35, days }
}
