//! Which trading days a live run owes.

use chrono::{DateTime, Datelike, Days, NaiveDate, Utc, Weekday};
use serde::{Deserialize, Serialize};

use crate::market::MarketClock;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TickOutcome {
    /// Cycles completed, in date order.
    pub ran: Vec<NaiveDate>,
    /// Weekdays without market data, treated as holidays.
    pub skipped: Vec<NaiveDate>,
    /// The date that could not run yet and why. Later dates wait for it.
    pub deferred: Option<(NaiveDate, String)>,
}

pub fn is_weekday(d: NaiveDate) -> bool {
    !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Weekdays after `since` whose decision point is not later than `now`.
pub fn due_dates(since: NaiveDate, now: DateTime<Utc>, clock: &MarketClock) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    let mut d = since + Days::new(1);
    while clock.decision_point(d).instant <= now {
        if is_weekday(d) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn d(m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2025, m, day).unwrap()
    }

    #[test]
    fn weekend_is_not_due() {
        let clock = MarketClock::default();
        // Friday 2025-01-03 done; now is Sunday night.
        let now = Utc.with_ymd_and_hms(2025, 1, 5, 23, 0, 0).unwrap();
        assert!(due_dates(d(1, 3), now, &clock).is_empty());
    }

    #[test]
    fn waits_for_decision_point() {
        let clock = MarketClock::default();
        let before = Utc.with_ymd_and_hms(2025, 1, 6, 21, 59, 0).unwrap();
        let after = Utc.with_ymd_and_hms(2025, 1, 6, 22, 0, 0).unwrap();
        assert!(due_dates(d(1, 3), before, &clock).is_empty());
        assert_eq!(due_dates(d(1, 3), after, &clock), vec![d(1, 6)]);
    }

    #[test]
    fn catch_up_in_order() {
        let clock = MarketClock::default();
        let now = Utc.with_ymd_and_hms(2025, 1, 14, 23, 0, 0).unwrap();
        assert_eq!(
            due_dates(d(1, 9), now, &clock),
            vec![d(1, 10), d(1, 13), d(1, 14)]
        );
    }
}
