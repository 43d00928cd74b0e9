//! Technical indicators over a close series, generic over the float type.
//!
//! Standard definitions: SMA is the plain mean of the last `n` closes; EMA
//! is recursive with `alpha = 2 / (n + 1)` seeded by the first close; RSI
//! uses Wilder smoothing. A field is `None` when there is not enough
//! history for it.

use num_traits::Float;
use rust_decimal::prelude::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::market::PriceBar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IndicatorSet<T> {
    pub sma_20: Option<T>,
    pub ema_12: Option<T>,
    pub ema_26: Option<T>,
    pub macd: Option<T>,
    pub macd_signal: Option<T>,
    pub rsi_14: Option<T>,
    pub return_5d: Option<T>,
    pub return_20d: Option<T>,
    pub volatility_20d: Option<T>,
}

fn lit<T: Float>(x: f64) -> T {
    T::from(x).expect("float literal")
}

pub fn sma<T: Float>(closes: &[T], n: usize) -> Option<T> {
    if n == 0 || closes.len() < n {
        return None;
    }
    let window = &closes[closes.len() - n..];
    Some(window.iter().fold(T::zero(), |a, &b| a + b) / lit(n as f64))
}

/// Full EMA path, one value per input, seeded by the first value.
pub fn ema_series<T: Float>(values: &[T], n: usize) -> Vec<T> {
    let alpha = lit::<T>(2.0) / lit(n as f64 + 1.0);
    let mut out = Vec::with_capacity(values.len());
    let mut prev = match values.first() {
        Some(v) => *v,
        None => return out,
    };
    out.push(prev);
    for &v in &values[1..] {
        prev = alpha * v + (T::one() - alpha) * prev;
        out.push(prev);
    }
    out
}

pub fn ema<T: Float>(closes: &[T], n: usize) -> Option<T> {
    if n == 0 || closes.len() < n {
        return None;
    }
    ema_series(closes, n).last().copied()
}

/// Wilder RSI. No movement at all reads as a neutral 50.
pub fn rsi<T: Float>(closes: &[T], n: usize) -> Option<T> {
    if n == 0 || closes.len() < n + 1 {
        return None;
    }
    let nn = lit::<T>(n as f64);
    let deltas: Vec<T> = closes.windows(2).map(|w| w[1] - w[0]).collect();
    let gain = |d: T| d.max(T::zero());
    let loss = |d: T| (-d).max(T::zero());
    let mut avg_gain = deltas[..n].iter().fold(T::zero(), |a, &d| a + gain(d)) / nn;
    let mut avg_loss = deltas[..n].iter().fold(T::zero(), |a, &d| a + loss(d)) / nn;
    for &d in &deltas[n..] {
        avg_gain = (avg_gain * (nn - T::one()) + gain(d)) / nn;
        avg_loss = (avg_loss * (nn - T::one()) + loss(d)) / nn;
    }
    let hundred = lit::<T>(100.0);
    Some(if avg_loss == T::zero() && avg_gain == T::zero() {
        lit(50.0)
    } else if avg_loss == T::zero() {
        hundred
    } else {
        hundred - hundred / (T::one() + avg_gain / avg_loss)
    })
}

fn trailing_return<T: Float>(closes: &[T], n: usize) -> Option<T> {
    if closes.len() < n + 1 {
        return None;
    }
    let last = closes[closes.len() - 1];
    let base = closes[closes.len() - 1 - n];
    Some(last / base - T::one())
}

/// Sample standard deviation of the last `n` simple daily returns.
fn trailing_volatility<T: Float>(closes: &[T], n: usize) -> Option<T> {
    if n < 2 || closes.len() < n + 1 {
        return None;
    }
    let tail = &closes[closes.len() - n - 1..];
    let rets: Vec<T> = tail.windows(2).map(|w| w[1] / w[0] - T::one()).collect();
    let mean = rets.iter().fold(T::zero(), |a, &b| a + b) / lit(n as f64);
    let var = rets.iter().fold(T::zero(), |a, &r| a + (r - mean) * (r - mean)) / lit(n as f64 - 1.0);
    Some(var.sqrt())
}

pub fn compute_indicators<T: Float>(closes: &[T]) -> IndicatorSet<T> {
    let ema_12 = ema(closes, 12);
    let ema_26 = ema(closes, 26);
    let macd = ema_12.zip(ema_26).map(|(a, b)| a - b);
    let macd_signal = if closes.len() >= 26 + 8 {
        let fast = ema_series(closes, 12);
        let slow = ema_series(closes, 26);
        let line: Vec<T> = fast[25..].iter().zip(&slow[25..]).map(|(a, b)| *a - *b).collect();
        ema(&line, 9)
    } else {
        None
    };
    IndicatorSet {
        sma_20: sma(closes, 20),
        ema_12,
        ema_26,
        macd,
        macd_signal,
        rsi_14: rsi(closes, 14),
        return_5d: trailing_return(closes, 5),
        return_20d: trailing_return(closes, 20),
        volatility_20d: trailing_volatility(closes, 20),
    }
}

/// Indicators for bars in ascending date order.
pub fn indicators_for_bars<T: Float>(bars: &[PriceBar]) -> IndicatorSet<T> {
    let closes: Vec<T> = bars
        .iter()
        .map(|b| T::from(b.close.to_f64().expect("finite close")).expect("close fits float"))
        .collect();
    compute_indicators(&closes)
}
