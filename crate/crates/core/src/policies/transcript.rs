//! Append-only transcripts of text-completion exchanges and a provider that
//! replays them.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::llm::{CompletionRequest, CompletionService, TransportError};
use super::SchemaId;
use crate::rng::fnv1a;

/// One request/response exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub system: String,
    pub user: String,
    pub schema: SchemaId,
    pub attempt: u32,
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TranscriptRecord {
    pub fn key(&self) -> u64 {
        request_key(&self.system, &self.user, self.schema)
    }
}

pub fn request_key(system: &str, user: &str, schema: SchemaId) -> u64 {
    let mut bytes = Vec::with_capacity(system.len() + user.len() + 32);
    bytes.extend_from_slice(system.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(user.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(format!("{schema:?}").as_bytes());
    fnv1a(&bytes)
}

pub trait TranscriptSink: Send + Sync {
    fn record(&self, record: &TranscriptRecord);
}

/// Writes one JSON object per line, flushing after each record.
pub struct JsonlTranscript {
    out: Mutex<BufWriter<File>>,
}

impl JsonlTranscript {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JsonlTranscript {
            out: Mutex::new(BufWriter::new(file)),
        })
    }
}

impl TranscriptSink for JsonlTranscript {
    fn record(&self, record: &TranscriptRecord) {
        let mut out = self.out.lock().expect("transcript lock");
        let line = serde_json::to_string(record).expect("transcript record serializes");
        if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
            log::error!("transcript write failed: {e}");
        }
    }
}

/// In-memory sink, mostly for tests.
#[derive(Default)]
pub struct MemoryTranscript {
    pub records: Mutex<Vec<TranscriptRecord>>,
}

impl TranscriptSink for MemoryTranscript {
    fn record(&self, record: &TranscriptRecord) {
        self.records.lock().expect("transcript lock").push(record.clone());
    }
}

pub fn read_transcript(path: &Path) -> std::io::Result<Vec<TranscriptRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Serves recorded responses for identical requests, in recorded order.
/// Unknown requests go to the fallback service if one is set.
pub struct ReplayService {
    responses: Mutex<HashMap<u64, VecDeque<String>>>,
    fallback: Option<Arc<dyn CompletionService>>,
}

impl ReplayService {
    pub fn new(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        let mut responses: HashMap<u64, VecDeque<String>> = HashMap::new();
        for r in records {
            if let Some(resp) = &r.response {
                responses.entry(r.key()).or_default().push_back(resp.clone());
            }
        }
        ReplayService {
            responses: Mutex::new(responses),
            fallback: None,
        }
    }

    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(read_transcript(path)?))
    }

    pub fn with_fallback(mut self, fallback: Arc<dyn CompletionService>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().expect("replay lock").values().map(VecDeque::len).sum()
    }
}

impl CompletionService for ReplayService {
    fn complete(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        let key = request_key(&req.system, &req.user, req.schema);
        let recorded = self
            .responses
            .lock()
            .expect("replay lock")
            .get_mut(&key)
            .and_then(VecDeque::pop_front);
        match (recorded, &self.fallback) {
            (Some(resp), _) => Ok(resp),
            (None, Some(fallback)) => fallback.complete(req),
            (None, None) => Err(TransportError::fatal(format!(
                "no recorded response for {:?} request {key:016x}",
                req.schema
            ))),
        }
    }

    fn id(&self) -> String {
        match &self.fallback {
            Some(f) => format!("replay+{}", f.id()),
            None => "replay".to_string(),
        }
    }
}
