//! Fund performance metrics over a NAV series.
//!
//! Daily simple returns `r_t = nav_t / nav_{t-1} - 1`; 252 trading days a
//! year; sample standard deviation. Ratios that are undefined for the input
//! are `None`, never zero.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use chrono::NaiveDate;
use num_traits::Float;
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::portfolio::TradeFill;

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("nav series: {0}")]
    InvalidSeries(String),
}

/// Ordered `(trading_date, nav)` points. Dates strictly increase and every
/// nav is positive.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NavSeries {
    points: Vec<(NaiveDate, Decimal)>,
}

impl NavSeries {
    pub fn new(points: Vec<(NaiveDate, Decimal)>) -> Result<Self, MetricsError> {
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(MetricsError::InvalidSeries(format!("date {} does not follow {}", w[1].0, w[0].0)));
            }
        }
        if let Some((d, _)) = points.iter().find(|(_, n)| *n <= Decimal::ZERO) {
            return Err(MetricsError::InvalidSeries(format!("non-positive nav on {d}")));
        }
        Ok(Self { points })
    }

    /// Append one point, keeping the invariants.
    pub fn push(&mut self, date: NaiveDate, nav: Decimal) -> Result<(), MetricsError> {
        if nav <= Decimal::ZERO {
            return Err(MetricsError::InvalidSeries(format!("non-positive nav on {date}")));
        }
        if let Some((last, _)) = self.points.last() {
            if date <= *last {
                return Err(MetricsError::InvalidSeries(format!("date {date} does not follow {last}")));
            }
        }
        self.points.push((date, nav));
        Ok(())
    }

    pub fn points(&self) -> &[(NaiveDate, Decimal)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values<T: Float>(&self) -> Vec<T> {
        self.points.iter().map(|(_, n)| dec_to(*n)).collect()
    }

    pub fn returns<T: Float>(&self) -> Vec<T> {
        simple_returns(&self.values::<T>())
    }
}

fn dec_to<T: Float>(d: Decimal) -> T {
    T::from(d.to_f64().expect("decimal fits f64")).expect("f64 fits float")
}

fn lit<T: Float>(x: f64) -> T {
    T::from(x).expect("float literal")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub cumulative_return: Option<T>,
    pub annualized_return: Option<T>,
    pub volatility: Option<T>,
    pub sharpe: Option<T>,
    pub sortino: Option<T>,
    pub max_drawdown: Option<T>,
    pub win_rate: Option<T>,
    pub turnover: Option<T>,
    /// Number of return periods.
    pub n_days: usize,
}

impl<T> Default for MetricsReport<T> {
    fn default() -> Self {
        Self {
            cumulative_return: None,
            annualized_return: None,
            volatility: None,
            sharpe: None,
            sortino: None,
            max_drawdown: None,
            win_rate: None,
            turnover: None,
            n_days: 0,
        }
    }
}

pub const METRIC_NAMES: [&str; 8] = [
    "cumulative_return",
    "annualized_return",
    "volatility",
    "sharpe",
    "sortino",
    "max_drawdown",
    "win_rate",
    "turnover",
];

impl<T: Float> MetricsReport<T> {
    /// Overflowed or undefined values become absent.
    fn finite(self) -> Self {
        let f = |x: Option<T>| x.filter(|v| v.is_finite());
        Self {
            cumulative_return: f(self.cumulative_return),
            annualized_return: f(self.annualized_return),
            volatility: f(self.volatility),
            sharpe: f(self.sharpe),
            sortino: f(self.sortino),
            max_drawdown: f(self.max_drawdown),
            win_rate: f(self.win_rate),
            turnover: f(self.turnover),
            n_days: self.n_days,
        }
    }

    pub fn get(&self, name: &str) -> Result<Option<T>, MetricsError> {
        Ok(match name {
            "cumulative_return" => self.cumulative_return,
            "annualized_return" => self.annualized_return,
            "volatility" => self.volatility,
            "sharpe" => self.sharpe,
            "sortino" => self.sortino,
            "max_drawdown" => self.max_drawdown,
            "win_rate" => self.win_rate,
            "turnover" => self.turnover,
            other => return Err(MetricsError::UnknownMetric(other.to_string())),
        })
    }
}

pub fn simple_returns<T: Float>(navs: &[T]) -> Vec<T> {
    navs.windows(2).map(|w| w[1] / w[0] - T::one()).collect()
}

fn mean<T: Float>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |a, &b| a + b) / lit(xs.len() as f64)
}

/// Sample standard deviation; `None` below two observations.
pub fn sample_stdev<T: Float>(xs: &[T]) -> Option<T> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let ss = xs.iter().fold(T::zero(), |a, &x| a + (x - m) * (x - m));
    Some((ss / lit(xs.len() as f64 - 1.0)).sqrt())
}

/// Largest `(peak - nav) / peak` over the running peak.
pub fn max_drawdown<T: Float>(navs: &[T]) -> Option<T> {
    let first = *navs.first()?;
    let mut peak = first;
    let mut worst = T::zero();
    for &x in navs {
        if x > peak {
            peak = x;
        }
        let dd = (peak - x) / peak;
        if dd > worst {
            worst = dd;
        }
    }
    Some(worst)
}

/// Metrics from raw NAV values and total absolute traded notional.
pub fn metrics_from_values<T: Float>(navs: &[T], traded_notional: T, rf_annual: T) -> MetricsReport<T> {
    let mut report = MetricsReport { n_days: navs.len().saturating_sub(1), ..MetricsReport::default() };
    if navs.is_empty() {
        return report;
    }
    let year = lit::<T>(TRADING_DAYS_PER_YEAR);
    let first = navs[0];
    let last = navs[navs.len() - 1];
    let cum = last / first - T::one();
    report.cumulative_return = Some(cum);
    report.max_drawdown = max_drawdown(navs);
    report.turnover = Some(traded_notional / mean(navs));

    let rets = simple_returns(navs);
    if rets.is_empty() {
        return report;
    }
    let n = lit::<T>(rets.len() as f64);
    report.annualized_return = Some((T::one() + cum).powf(year / n) - T::one());
    report.win_rate = Some(lit::<T>(rets.iter().filter(|r| **r > T::zero()).count() as f64) / n);

    let excess = mean(&rets) - rf_annual / year;
    if let Some(sd) = sample_stdev(&rets) {
        report.volatility = Some(sd * year.sqrt());
        if sd > T::zero() {
            report.sharpe = Some(excess / sd * year.sqrt());
        }
    }
    if rets.len() >= 2 {
        let downside = (rets.iter().fold(T::zero(), |a, &r| {
            let d = r.min(T::zero());
            a + d * d
        }) / n)
            .sqrt();
        if downside > T::zero() {
            report.sortino = Some(excess / downside * year.sqrt());
        }
    }
    report.finite()
}

pub fn compute_metrics<T: Float>(series: &NavSeries, fills: &[TradeFill], rf_annual: T) -> MetricsReport<T> {
    let notional: Decimal = fills.iter().map(|f| f.notional().abs()).sum();
    metrics_from_values(&series.values::<T>(), dec_to(notional), rf_annual)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow<T> {
    pub rank: usize,
    pub fund_id: String,
    pub value: Option<T>,
    pub report: MetricsReport<T>,
}

/// Keys where a smaller value is the better one.
fn lower_is_better(key: &str) -> bool {
    matches!(key, "max_drawdown" | "volatility")
}

fn present<T: Float>(x: Option<T>) -> Option<T> {
    x.filter(|v| v.is_finite())
}

/// Compare with absent values last; `desc` puts larger values first.
fn cmp_opt<T: Float>(a: Option<T>, b: Option<T>, desc: bool) -> Ordering {
    match (present(a), present(b)) {
        (Some(x), Some(y)) => {
            let o = x.partial_cmp(&y).unwrap_or(Ordering::Equal);
            if desc {
                o.reverse()
            } else {
                o
            }
        }
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Rank funds best-first by `rank_key`. Absent values go last; ties break
/// by cumulative return, then fund id.
pub fn leaderboard<T: Float>(
    reports: &BTreeMap<String, MetricsReport<T>>,
    rank_key: &str,
) -> Result<Vec<LeaderboardRow<T>>, MetricsError> {
    if !METRIC_NAMES.contains(&rank_key) {
        return Err(MetricsError::UnknownMetric(rank_key.to_string()));
    }
    let desc = !lower_is_better(rank_key);
    let mut rows: Vec<(&String, &MetricsReport<T>, Option<T>)> =
        reports.iter().map(|(id, r)| (id, r, r.get(rank_key).expect("known key"))).collect();
    rows.sort_by(|a, b| {
        cmp_opt(a.2, b.2, desc)
            .then_with(|| cmp_opt(a.1.cumulative_return, b.1.cumulative_return, true))
            .then_with(|| a.0.cmp(b.0))
    });
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (id, r, v))| LeaderboardRow { rank: i + 1, fund_id: id.clone(), value: present(v), report: *r })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(sharpe: Option<f64>, cum: f64) -> MetricsReport<f64> {
        MetricsReport { sharpe, cumulative_return: Some(cum), n_days: 5, ..Default::default() }
    }

    #[test]
    fn constant_nav() {
        let r = metrics_from_values(&[100.0_f64; 6], 0.0, 0.0);
        assert_eq!(r.cumulative_return, Some(0.0));
        assert_eq!(r.max_drawdown, Some(0.0));
        assert_eq!(r.sharpe, None);
        assert_eq!(r.volatility, Some(0.0));
        assert_eq!(r.n_days, 5);
    }

    #[test]
    fn two_step_drawdown() {
        let r = metrics_from_values(&[100.0_f64, 110.0, 99.0], 0.0, 0.0);
        assert!((r.max_drawdown.unwrap() - 0.1).abs() < 1e-9);
    }

    #[test]
    fn single_point_has_no_ratios() {
        let r = metrics_from_values(&[100.0_f64], 0.0, 0.0);
        assert_eq!(r.cumulative_return, Some(0.0));
        assert_eq!(r.annualized_return, None);
        assert_eq!(r.sharpe, None);
        assert_eq!(r.volatility, None);
        assert_eq!(r.win_rate, None);
    }

    #[test]
    fn turnover_over_mean_nav() {
        let r = metrics_from_values(&[100.0_f64, 300.0], 50.0, 0.0);
        assert_eq!(r.turnover, Some(0.25));
    }

    #[test]
    fn series_rejects_bad_points() {
        let d = |n| NaiveDate::from_ymd_opt(2025, 1, n).unwrap();
        assert!(NavSeries::new(vec![(d(2), Decimal::ONE), (d(2), Decimal::ONE)]).is_err());
        assert!(NavSeries::new(vec![(d(2), Decimal::ZERO)]).is_err());
        let mut s = NavSeries::default();
        s.push(d(2), Decimal::TEN).unwrap();
        assert!(s.push(d(1), Decimal::TEN).is_err());
    }

    #[test]
    fn leaderboard_orders() {
        let mut m = BTreeMap::new();
        m.insert("b".to_string(), report(Some(0.5), 0.0));
        m.insert("a".to_string(), report(Some(1.0), 0.0));
        m.insert("c".to_string(), report(None, 9.0));
        let rows = leaderboard(&m, "sharpe").unwrap();
        let ids: Vec<&str> = rows.iter().map(|r| r.fund_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(rows[2].rank, 3);
    }

    #[test]
    fn leaderboard_tie_breaks() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), report(Some(1.0), 0.1));
        m.insert("b".to_string(), report(Some(1.0), 0.2));
        m.insert("c".to_string(), report(Some(1.0), 0.2));
        let ids: Vec<String> = leaderboard(&m, "sharpe").unwrap().into_iter().map(|r| r.fund_id).collect();
        assert_eq!(ids, ["b", "c", "a"]);
    }

    #[test]
    fn drawdown_ranks_ascending() {
        let mut m = BTreeMap::new();
        m.insert("deep".to_string(), MetricsReport { max_drawdown: Some(0.3), ..Default::default() });
        m.insert("shallow".to_string(), MetricsReport { max_drawdown: Some(0.1), ..Default::default() });
        let rows = leaderboard::<f64>(&m, "max_drawdown").unwrap();
        assert_eq!(rows[0].fund_id, "shallow");
    }

    #[test]
    fn unknown_metric() {
        let m: BTreeMap<String, MetricsReport<f64>> = BTreeMap::new();
        assert_eq!(leaderboard(&m, "alpha"), Err(MetricsError::UnknownMetric("alpha".into())));
    }

    #[test]
    fn works_for_f32() {
        let r = metrics_from_values(&[100.0_f32, 110.0, 99.0], 0.0, 0.0);
        assert!((r.max_drawdown.unwrap() - 0.1).abs() < 1e-6);
    }

    fn close(a: Option<f64>, b: Option<f64>) -> bool {
        match (a, b) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())),
            (None, None) => true,
            _ => false,
        }
    }

    proptest! {
        #[test]
        fn drawdown_bounds(navs in prop::collection::vec(1.0f64..1e6, 1..60)) {
            let dd = max_drawdown(&navs).unwrap();
            prop_assert!((0.0..1.0).contains(&dd));
            let mut sorted = navs.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(max_drawdown(&sorted), Some(0.0));
        }

        #[test]
        fn scale_invariance(navs in prop::collection::vec(1.0f64..1e4, 2..50), k in 0.01f64..100.0, traded in 0.0f64..1e4) {
            let a = metrics_from_values(&navs, traded, 0.0);
            let scaled: Vec<f64> = navs.iter().map(|x| x * k).collect();
            let b = metrics_from_values(&scaled, traded * k, 0.0);
            prop_assert_eq!(a.n_days, b.n_days);
            for name in METRIC_NAMES {
                let (x, y) = (a.get(name).unwrap(), b.get(name).unwrap());
                // A zero stdev can become a tiny one after rescaling, so
                // only compare ratios when both sides are defined.
                if name == "sharpe" || name == "sortino" {
                    if x.is_some() && y.is_some() && a.volatility.unwrap_or(0.0) > 1e-6 {
                        prop_assert!(close(x, y), "{} {:?} {:?}", name, x, y);
                    }
                    continue;
                }
                prop_assert!(close(x, y), "{} {:?} {:?}", name, x, y);
            }
        }

        #[test]
        fn leaderboard_is_total(vals in prop::collection::vec((prop::option::of(-2.0f64..2.0), -1.0f64..1.0), 0..12)) {
            let m: BTreeMap<String, MetricsReport<f64>> = vals
                .iter()
                .enumerate()
                .map(|(i, (s, c))| (format!("f{i:02}"), report(*s, *c)))
                .collect();
            let a = leaderboard(&m, "sharpe").unwrap();
            let b = leaderboard(&m, "sharpe").unwrap();
            prop_assert_eq!(a.len(), m.len());
            prop_assert_eq!(&a, &b);
            let first_absent = a.iter().position(|r| r.value.is_none()).unwrap_or(a.len());
            prop_assert!(a[first_absent..].iter().all(|r| r.value.is_none()));
            for w in a[..first_absent].windows(2) {
                prop_assert!(w[0].value.unwrap() >= w[1].value.unwrap());
            }
        }
    }
}
