//! Normalization of external marketplace order records into trade logs.
//!
//! Records carry no seller column, so the datatoken address serves as both
//! dataset id and seller id. Steps are fixed-width time bins counted from
//! the earliest valid record.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{TradeLog, TradeRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestFormat {
    Csv,
    Jsonl,
}

impl FromStr for IngestFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(IngestFormat::Csv),
            "jsonl" => Ok(IngestFormat::Jsonl),
            other => Err(format!("unknown format {other:?} (expected csv|jsonl)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Timestamp {
    Int(i64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTransactionRecord {
    pub order_id: String,
    pub transaction_hash: String,
    pub datatoken_address: String,
    pub payer_address: String,
    pub amount: f64,
    pub price: f64,
    /// Epoch seconds.
    pub timestamp: i64,
}

#[derive(Debug, Deserialize)]
struct LooseRecord {
    order_id: String,
    transaction_hash: String,
    datatoken_address: String,
    payer_address: String,
    amount: f64,
    price: f64,
    timestamp: Timestamp,
}

impl LooseRecord {
    fn validate(self) -> Result<RawTransactionRecord, String> {
        let timestamp = match self.timestamp {
            Timestamp::Int(t) => t,
            Timestamp::Text(s) => s
                .trim()
                .parse::<i64>()
                .map_err(|_| format!("timestamp {s:?} is not epoch seconds"))?,
        };
        for (name, v) in [
            ("order_id", &self.order_id),
            ("datatoken_address", &self.datatoken_address),
            ("payer_address", &self.payer_address),
        ] {
            if v.trim().is_empty() {
                return Err(format!("{name} is empty"));
            }
        }
        for (name, v) in [("amount", self.amount), ("price", self.price)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(RawTransactionRecord {
            order_id: self.order_id,
            transaction_hash: self.transaction_hash,
            datatoken_address: self.datatoken_address,
            payer_address: self.payer_address,
            amount: self.amount,
            price: self.price,
            timestamp,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub source: String,
    pub format: IngestFormat,
    pub bin_width_secs: u64,
    pub rows: usize,
    pub valid_rows: usize,
    pub min_timestamp: i64,
    pub steps: u32,
    pub dropped: Vec<DroppedRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLog {
    pub transactions: Vec<TradeRecord>,
    pub report: IngestReport,
}

impl NormalizedLog {
    pub fn to_trade_log(&self) -> TradeLog {
        TradeLog::from_trades(self.transactions.clone())
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bin width must be positive")]
    ZeroBinWidth,
    #[error("ingest failed: no valid rows out of {rows}{}", first_reason(.dropped))]
    NoValidRows { rows: usize, dropped: Vec<DroppedRow> },
}

fn first_reason(dropped: &[DroppedRow]) -> String {
    dropped
        .first()
        .map(|d| format!(" (line {}: {})", d.line, d.reason))
        .unwrap_or_default()
}

pub fn ingest(path: &Path, bin_width: Duration, format: IngestFormat) -> Result<NormalizedLog, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut log = ingest_reader(file, bin_width, format)?;
    log.report.source = path.display().to_string();
    Ok(log)
}

pub fn ingest_reader<R: Read>(reader: R, bin_width: Duration, format: IngestFormat) -> Result<NormalizedLog, IngestError> {
    let width = bin_width.as_secs();
    if width == 0 {
        return Err(IngestError::ZeroBinWidth);
    }
    let parsed = match format {
        IngestFormat::Csv => parse_csv(reader),
        IngestFormat::Jsonl => parse_jsonl(reader),
    };
    let rows = parsed.len();
    let mut dropped = Vec::new();
    let mut seen = HashSet::new();
    let mut valid = Vec::new();
    for (line, row) in parsed {
        match row.and_then(LooseRecord::validate) {
            Ok(r) if !seen.insert(r.order_id.clone()) => {
                log::warn!("line {line}: duplicate order_id {:?} dropped", r.order_id);
                dropped.push(DroppedRow {
                    line,
                    reason: format!("duplicate order_id {:?}", r.order_id),
                });
            }
            Ok(r) => valid.push(r),
            Err(reason) => {
                log::warn!("line {line}: {reason}");
                dropped.push(DroppedRow { line, reason });
            }
        }
    }
    let Some(min_timestamp) = valid.iter().map(|r| r.timestamp).min() else {
        return Err(IngestError::NoValidRows { rows, dropped });
    };
    let mut transactions: Vec<TradeRecord> = valid
        .iter()
        .map(|r| TradeRecord {
            step: ((r.timestamp - min_timestamp) as u64 / width) as u32,
            buyer_id: r.payer_address.clone(),
            seller_id: r.datatoken_address.clone(),
            dataset_id: r.datatoken_address.clone(),
            version: 1,
            price: r.price,
        })
        .collect();
    transactions.sort_by_key(|t| t.step);
    let steps = transactions.last().map_or(0, |t| t.step + 1);
    Ok(NormalizedLog {
        report: IngestReport {
            source: String::new(),
            format,
            bin_width_secs: width,
            rows,
            valid_rows: transactions.len(),
            min_timestamp,
            steps,
            dropped,
        },
        transactions,
    })
}

type ParsedRow = (usize, Result<LooseRecord, String>);

fn parse_csv<R: Read>(reader: R) -> Vec<ParsedRow> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    let mut records = rdr.deserialize::<LooseRecord>();
    let mut fallback_line = 1;
    loop {
        fallback_line += 1;
        match records.next() {
            None => break,
            Some(Ok(r)) => out.push((fallback_line, Ok(r))),
            Some(Err(e)) => {
                let line = e.position().map_or(fallback_line, |p| p.line() as usize);
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    out.push((line, Err(e.to_string())));
                    break;
                }
                out.push((line, Err(e.to_string())));
            }
        }
    }
    out
}

fn parse_jsonl<R: Read>(reader: R) -> Vec<ParsedRow> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let row = match line {
            Ok(l) if l.trim().is_empty() => continue,
            Ok(l) => serde_json::from_str::<LooseRecord>(&l).map_err(|e| e.to_string()),
            Err(e) => Err(e.to_string()),
        };
        out.push((i + 1, row));
    }
    out
}
