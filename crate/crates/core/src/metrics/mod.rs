//! Market metrics over transaction and event logs: purchase distributions
//! with power-law fits, repeat purchases, buyer–seller degree, lag-1
//! autocorrelation of volume, field trends and action shares.

pub mod source;
pub mod powerlaw;
pub mod report;
pub mod stats;
pub mod trend;
pub mod zeta;

use thiserror::Error;

pub use source::{load_log, ActionRecord, LogError, TradeLog, TradeRecord};
pub use powerlaw::{fit_power_law, Estimator, FitError, FitOptions, PowerLawFit, XMin};
pub use report::{compare, Comparison, ComparisonRow, MetricsReport, REPORT_FILE, SELLER_PROXY_NOTE};
pub use stats::{autocorr_lag1, CountSummary, DegreeSummary, Histogram};
pub use trend::{action_ratio_series, trend_matrix, ActionRatios, TrendMatrix, OTHER_FIELD};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("empty log: no transactions")]
    EmptyLog,
    #[error("series too short for lag-1 autocorrelation: {0} points, need 3")]
    SeriesTooShort(usize),
    #[error("constant series: autocorrelation undefined")]
    ConstantSeries,
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("{0}")]
    Io(String),
}
