//! The full metrics report, per-figure CSV exports and report comparison.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::source::TradeLog;
use super::powerlaw::{fit_power_law, FitOptions, PowerLawFit};
use super::stats::{
    autocorr_lag1, degree_summary, histogram, purchases_per_buyer, purchases_per_dataset, repeat_purchases,
    summarize, CountSummary, DegreeSummary, Histogram,
};
use super::trend::{action_ratio_series, trend_matrix, ActionRatios, RoleShares, TrendMatrix};
use super::MetricsError;
use crate::config::MetricsConfig;

pub const REPORT_FILE: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitBlock {
    pub fit: Option<PowerLawFit>,
    pub fit_error: Option<String>,
}

impl FitBlock {
    fn from_samples(samples: &[u64]) -> Self {
        match fit_power_law(samples, FitOptions::default()) {
            Ok(fit) => FitBlock {
                fit: Some(fit),
                fit_error: None,
            },
            Err(e) => FitBlock {
                fit: None,
                fit_error: Some(e.to_string()),
            },
        }
    }
}

fn expand(hist: &Histogram) -> Vec<u64> {
    hist.iter()
        .flat_map(|(&v, &n)| std::iter::repeat_n(v, n as usize))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionBlock {
    pub histogram: Histogram,
    pub summary: CountSummary,
    pub power_law: FitBlock,
}

impl DistributionBlock {
    fn new(hist: Histogram) -> Self {
        let summary = summarize(&hist).expect("non-empty histogram");
        let power_law = FitBlock::from_samples(&expand(&hist));
        DistributionBlock {
            histogram: hist,
            summary,
            power_law,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeBlock {
    pub summary: DegreeSummary,
    pub power_law: FitBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrBlock {
    pub lag1: Option<f64>,
    pub error: Option<String>,
    /// Transactions per step.
    pub series: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub transactions: u64,
    pub steps: u32,
    pub purchases_per_dataset: DistributionBlock,
    pub purchases_per_buyer: DistributionBlock,
    pub repeat_purchases: Histogram,
    pub degree: DegreeBlock,
    pub autocorrelation: AutocorrBlock,
    pub trend: TrendMatrix,
    pub action_ratios: ActionRatios,
}

impl MetricsReport {
    pub fn from_log(log: &TradeLog, cfg: &MetricsConfig) -> Result<Self, MetricsError> {
        let per_dataset = histogram(purchases_per_dataset(log)?.values());
        let per_buyer = histogram(purchases_per_buyer(log)?.values());
        let degree = degree_summary(log)?;
        let degree_samples = expand(&degree.histogram);
        let series = log.step_volumes();
        let as_f64: Vec<f64> = series.iter().map(|&v| v as f64).collect();
        let (lag1, error) = match autocorr_lag1(&as_f64) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(MetricsReport {
            transactions: log.transactions.len() as u64,
            steps: log.steps,
            purchases_per_dataset: DistributionBlock::new(per_dataset),
            purchases_per_buyer: DistributionBlock::new(per_buyer),
            repeat_purchases: repeat_purchases(log)?,
            degree: DegreeBlock {
                summary: degree,
                power_law: FitBlock::from_samples(&degree_samples),
            },
            autocorrelation: AutocorrBlock { lag1, error, series },
            trend: trend_matrix(log, cfg.trend_weighting),
            action_ratios: action_ratio_series(log, cfg.moving_average_window),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        serde_json::from_str(text).map_err(|e| MetricsError::Schema(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, MetricsError> {
        let text = fs::read_to_string(path).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            MetricsError::Schema(m) => MetricsError::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Writes `metrics.json` and the per-figure CSVs; returns the file names.
    pub fn write_dir(&self, dir: &Path) -> io::Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let mut written = vec![REPORT_FILE.to_string()];
        fs::write(dir.join(REPORT_FILE), self.to_json())?;
        for (name, body) in self.figure_csvs() {
            fs::write(dir.join(&name), body)?;
            written.push(name);
        }
        Ok(written)
    }

    /// CSV bodies keyed by file name.
    pub fn figure_csvs(&self) -> Vec<(String, String)> {
        let hist = |header: &str, h: &Histogram| {
            let mut s = format!("{header},count\n");
            for (v, n) in h {
                s.push_str(&format!("{v},{n}\n"));
            }
            s
        };
        let mut volumes = String::from("step,transactions\n");
        for (t, v) in self.autocorrelation.series.iter().enumerate() {
            volumes.push_str(&format!("{t},{v}\n"));
        }
        let mut trend = String::from("field");
        for t in 0..self.steps {
            trend.push_str(&format!(",{t}"));
        }
        trend.push('\n');
        for (field, row) in self.trend.fields.iter().zip(&self.trend.cells) {
            trend.push_str(field);
            for v in row {
                trend.push_str(&format!(",{v}"));
            }
            trend.push('\n');
        }
        let mut actions = String::from("role,action,step,share\n");
        let mut push_role = |role: &str, shares: &RoleShares| {
            for (action, row) in shares.actions.iter().zip(&shares.shares) {
                for (t, v) in row.iter().enumerate() {
                    let v = v.map(|x| x.to_string()).unwrap_or_default();
                    actions.push_str(&format!("{role},{action},{t},{v}\n"));
                }
            }
        };
        push_role("seller", &self.action_ratios.seller);
        push_role("buyer", &self.action_ratios.buyer);
        vec![
            (
                "purchases_per_dataset.csv".into(),
                hist("purchases", &self.purchases_per_dataset.histogram),
            ),
            ("purchases_per_buyer.csv".into(), hist("purchases", &self.purchases_per_buyer.histogram)),
            ("repeat_purchases.csv".into(), hist("multiplicity", &self.repeat_purchases)),
            ("degree_distribution.csv".into(), hist("degree", &self.degree.summary.histogram)),
            ("step_volumes.csv".into(), volumes),
            ("trend_matrix.csv".into(), trend),
            ("action_ratios.csv".into(), actions),
        ]
    }

    /// Named scalar metrics used for comparisons.
    pub fn scalars(&self) -> Vec<(&'static str, Option<f64>)> {
        fn fit(b: &FitBlock) -> Option<&PowerLawFit> {
            b.fit.as_ref()
        }
        let dist = |d: &DistributionBlock| {
            [
                fit(&d.power_law).map(|f| f.alpha),
                fit(&d.power_law).map(|f| f.ks_distance),
                fit(&d.power_law).map(|f| f.x_min as f64),
                Some(d.summary.mean),
                Some(d.summary.median),
                Some(d.summary.min as f64),
                Some(d.summary.max as f64),
                Some(d.summary.mode as f64),
            ]
        };
        let ds = dist(&self.purchases_per_dataset);
        let by = dist(&self.purchases_per_buyer);
        let rep = |m: u64| self.repeat_purchases.get(&m).copied().unwrap_or(0) as f64;
        let deg = &self.degree;
        vec![
            ("transactions", Some(self.transactions as f64)),
            ("dataset_alpha", ds[0]),
            ("dataset_ks_distance", ds[1]),
            ("dataset_x_min", ds[2]),
            ("dataset_mean", ds[3]),
            ("dataset_median", ds[4]),
            ("dataset_min", ds[5]),
            ("dataset_max", ds[6]),
            ("buyer_alpha", by[0]),
            ("buyer_ks_distance", by[1]),
            ("buyer_mean", by[3]),
            ("buyer_min", by[5]),
            ("buyer_max", by[6]),
            ("buyer_mode", by[7]),
            ("single_purchase_pairs", Some(rep(1))),
            ("double_purchase_pairs", Some(rep(2))),
            ("triple_purchase_pairs", Some(rep(3))),
            ("average_degree", Some(deg.summary.average_degree)),
            ("max_degree", Some(deg.summary.max_degree as f64)),
            ("degree_alpha", fit(&deg.power_law).map(|f| f.alpha)),
            ("degree_ks_distance", fit(&deg.power_law).map(|f| f.ks_distance)),
            ("autocorr_lag1", self.autocorrelation.lag1),
        ]
    }
}

pub const SELLER_PROXY_NOTE: &str = "Ingested logs have no seller column: each datatoken address stands in \
for its seller, so seller-side degrees are per-dataset degrees in those reports.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `a - b`.
    pub delta: Option<f64>,
    /// `(a - b) / |b|`.
    pub relative_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<ComparisonRow>,
    pub notes: Vec<String>,
}

pub fn compare(a: &MetricsReport, b: &MetricsReport, label_a: &str, label_b: &str) -> Comparison {
    let rows = a
        .scalars()
        .into_iter()
        .zip(b.scalars())
        .map(|((name, x), (_, y))| {
            let delta = x.zip(y).map(|(x, y)| x - y);
            let relative_delta = delta.zip(y).and_then(|(d, y)| (y != 0.0).then(|| d / y.abs()));
            ComparisonRow {
                metric: name.to_string(),
                a: x,
                b: y,
                delta,
                relative_delta,
            }
        })
        .collect();
    Comparison {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        rows,
        notes: vec![SELLER_PROXY_NOTE.to_string()],
    }
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("metric,a,b,delta,relative_delta\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.metric,
                cell(r.a),
                cell(r.b),
                cell(r.delta),
                cell(r.relative_delta)
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("comparison serializes");
        s.push('\n');
        s
    }

    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

/// Reads a report as loose JSON and lists required top-level blocks that
/// are missing.
pub fn missing_blocks(text: &str) -> Vec<&'static str> {
    const REQUIRED: [&str; 9] = [
        "transactions",
        "steps",
        "purchases_per_dataset",
        "purchases_per_buyer",
        "repeat_purchases",
        "degree",
        "autocorrelation",
        "trend",
        "action_ratios",
    ];
    let value: BTreeMap<String, serde_json::Value> = serde_json::from_str(text).unwrap_or_default();
    REQUIRED.into_iter().filter(|k| !value.contains_key(*k)).collect()
}
