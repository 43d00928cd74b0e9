pub mod agents;
pub mod arena;
pub mod canonical;
pub mod config;
pub mod events;
pub mod gateway;
pub mod indicators;
pub mod market;
pub mod metrics;
pub mod money;
pub mod portfolio;

pub type IndicatorSet = indicators::IndicatorSet<f64>;
pub type MetricsReport = metrics::MetricsReport<f64>;
pub type LeaderboardRow = metrics::LeaderboardRow<f64>;
