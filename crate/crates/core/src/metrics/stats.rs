//! Structural and network metrics over a trade log.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::source::TradeLog;
use super::MetricsError;
use crate::engine::Role;

/// Value → number of entities with that value.
pub type Histogram = BTreeMap<u64, u64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    /// Number of entities counted.
    pub entities: u64,
    pub total: u64,
    pub min: u64,
    pub max: u64,
    pub mean: f64,
    pub median: f64,
    /// Most frequent value; ties go to the smallest.
    pub mode: u64,
}

fn non_empty(log: &TradeLog) -> Result<(), MetricsError> {
    if log.transactions.is_empty() {
        Err(MetricsError::EmptyLog)
    } else {
        Ok(())
    }
}

fn count_by<'a>(keys: impl Iterator<Item = &'a str>) -> BTreeMap<String, u64> {
    let mut out: BTreeMap<String, u64> = BTreeMap::new();
    for k in keys {
        *out.entry(k.to_string()).or_default() += 1;
    }
    out
}

/// Transactions per dataset id, all versions together.
pub fn purchases_per_dataset(log: &TradeLog) -> Result<BTreeMap<String, u64>, MetricsError> {
    non_empty(log)?;
    Ok(count_by(log.transactions.iter().map(|t| t.dataset_id.as_str())))
}

pub fn purchases_per_buyer(log: &TradeLog) -> Result<BTreeMap<String, u64>, MetricsError> {
    non_empty(log)?;
    Ok(count_by(log.transactions.iter().map(|t| t.buyer_id.as_str())))
}

pub fn histogram<'a>(counts: impl IntoIterator<Item = &'a u64>) -> Histogram {
    let mut h = Histogram::new();
    for &c in counts {
        *h.entry(c).or_default() += 1;
    }
    h
}

pub fn summarize(hist: &Histogram) -> Option<CountSummary> {
    let (&min, _) = hist.first_key_value()?;
    let (&max, _) = hist.last_key_value()?;
    let entities: u64 = hist.values().sum();
    let total: u64 = hist.iter().map(|(v, n)| v * n).sum();
    let mode = hist
        .iter()
        .fold((0u64, 0u64), |best, (&v, &n)| if n > best.1 { (v, n) } else { best })
        .0;
    let nth = |k: u64| {
        let mut seen = 0;
        for (&v, &n) in hist {
            seen += n;
            if seen > k {
                return v;
            }
        }
        max
    };
    let median = if entities % 2 == 1 {
        nth(entities / 2) as f64
    } else {
        (nth(entities / 2 - 1) + nth(entities / 2)) as f64 / 2.0
    };
    Some(CountSummary {
        entities,
        total,
        min,
        max,
        mean: total as f64 / entities as f64,
        median,
        mode,
    })
}

/// Multiplicity → number of (buyer, dataset) pairs bought that many times.
pub fn repeat_purchases(log: &TradeLog) -> Result<Histogram, MetricsError> {
    non_empty(log)?;
    let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
    for t in &log.transactions {
        *pairs.entry((&t.buyer_id, &t.dataset_id)).or_default() += 1;
    }
    Ok(histogram(pairs.values()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeSummary {
    pub nodes: u64,
    pub average_degree: f64,
    pub max_degree: u64,
    pub max_buyer_degree: u64,
    pub max_seller_degree: u64,
    pub histogram: Histogram,
}

/// Degree of every node in the buyer–seller multigraph, one edge per
/// transaction.
pub fn node_degrees(log: &TradeLog) -> BTreeMap<(Role, String), u64> {
    let mut out: BTreeMap<(Role, String), u64> = BTreeMap::new();
    for t in &log.transactions {
        *out.entry((Role::Buyer, t.buyer_id.clone())).or_default() += 1;
        *out.entry((Role::Seller, t.seller_id.clone())).or_default() += 1;
    }
    out
}

pub fn degree_summary(log: &TradeLog) -> Result<DegreeSummary, MetricsError> {
    non_empty(log)?;
    let degrees = node_degrees(log);
    let max_of = |role| {
        degrees
            .iter()
            .filter(|((r, _), _)| *r == role)
            .map(|(_, &d)| d)
            .max()
            .unwrap_or(0)
    };
    let max_buyer_degree = max_of(Role::Buyer);
    let max_seller_degree = max_of(Role::Seller);
    Ok(DegreeSummary {
        nodes: degrees.len() as u64,
        average_degree: 2.0 * log.transactions.len() as f64 / degrees.len() as f64,
        max_degree: max_buyer_degree.max(max_seller_degree),
        max_buyer_degree,
        max_seller_degree,
        histogram: histogram(degrees.values()),
    })
}

/// Lag-1 autocorrelation with the global mean.
///
/// Computed as `Σ (n·x_t − S)(n·x_{t+1} − S) / Σ (n·x_t − S)²` with
/// `S = Σ x`, which equals the usual estimator but stays exact for
/// integer-valued series.
pub fn autocorr_lag1(series: &[f64]) -> Result<f64, MetricsError> {
    if series.len() < 3 {
        return Err(MetricsError::SeriesTooShort(series.len()));
    }
    let n = series.len() as f64;
    let s: f64 = series.iter().sum();
    let dev: Vec<f64> = series.iter().map(|&x| n * x - s).collect();
    let den: f64 = dev.iter().map(|d| d * d).sum();
    if den == 0.0 {
        return Err(MetricsError::ConstantSeries);
    }
    let num: f64 = dev.windows(2).map(|w| w[0] * w[1]).sum();
    Ok(num / den)
}
