//! Normalized trade logs and readers for the engine's output files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Step, Transaction};
use crate::engine::{Event, Role, EVENTS_FILE, TRANSACTIONS_FILE};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{0}: neither events.jsonl nor transactions.csv found")]
    NotALog(PathBuf),
}

/// One purchase with agent and dataset ids as plain strings, so engine
/// output and ingested records share a representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub step: Step,
    pub buyer_id: String,
    pub seller_id: String,
    pub dataset_id: String,
    pub version: u32,
    pub price: f64,
}

impl From<&Transaction> for TradeRecord {
    fn from(t: &Transaction) -> Self {
        TradeRecord {
            step: t.step,
            buyer_id: t.buyer_id.to_string(),
            seller_id: t.seller_id.to_string(),
            dataset_id: t.dataset_id.to_string(),
            version: t.version,
            price: t.price.to_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionRecord {
    pub step: Step,
    pub role: Role,
    pub action: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TradeLog {
    pub transactions: Vec<TradeRecord>,
    /// Number of steps covered; at least one past the last transaction.
    pub steps: u32,
    /// Dataset id → field, when known.
    pub dataset_fields: BTreeMap<String, String>,
    pub actions: Vec<ActionRecord>,
}

impl TradeLog {
    pub fn from_trades(transactions: Vec<TradeRecord>) -> Self {
        let steps = transactions.iter().map(|t| t.step + 1).max().unwrap_or(0);
        TradeLog {
            transactions,
            steps,
            ..Default::default()
        }
    }

    pub fn from_transactions(transactions: &[Transaction]) -> Self {
        Self::from_trades(transactions.iter().map(TradeRecord::from).collect())
    }

    pub fn from_events(events: &[Event]) -> Self {
        let mut log = TradeLog::default();
        for event in events {
            log.steps = log.steps.max(event.step() + 1);
            match event {
                Event::ListingCreated { dataset_id, field, .. } => {
                    log.dataset_fields.insert(dataset_id.to_string(), field.clone());
                }
                Event::SellerAction { step, action, .. } => log.actions.push(ActionRecord {
                    step: *step,
                    role: Role::Seller,
                    action: action.name().to_string(),
                }),
                Event::BuyerAction { step, action, .. } => log.actions.push(ActionRecord {
                    step: *step,
                    role: Role::Buyer,
                    action: action.name().to_string(),
                }),
                other => {
                    if let Some(t) = other.as_transaction() {
                        log.transactions.push(TradeRecord::from(&t));
                    }
                }
            }
        }
        log
    }

    /// Transactions per step, `steps` entries long.
    pub fn step_volumes(&self) -> Vec<u64> {
        let mut v = vec![0u64; self.steps as usize];
        for t in &self.transactions {
            v[t.step as usize] += 1;
        }
        v
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, LogError> {
    let io = |source| LogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| LogError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

/// Reads `step,buyer_id,seller_id,dataset_id,version,price` rows.
pub fn read_trades(path: &Path) -> Result<Vec<TradeRecord>, LogError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| LogError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<TradeRecord>().enumerate() {
        let record = row.map_err(|e| LogError::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(i + 2, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Loads a log from an events file, a transactions file, or a run
/// directory (preferring `events.jsonl`).
pub fn load_log(path: &Path) -> Result<TradeLog, LogError> {
    if path.is_dir() {
        let events = path.join(EVENTS_FILE);
        if events.is_file() {
            return Ok(TradeLog::from_events(&read_events(&events)?));
        }
        let trades = path.join(TRANSACTIONS_FILE);
        if trades.is_file() {
            return Ok(TradeLog::from_trades(read_trades(&trades)?));
        }
        return Err(LogError::NotALog(path.to_path_buf()));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => Ok(TradeLog::from_events(&read_events(path)?)),
        _ => Ok(TradeLog::from_trades(read_trades(path)?)),
    }
}
