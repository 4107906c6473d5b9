//! Run output directory: `events.jsonl`, `transactions.csv`, `run_meta.json`
//! and, after an aborted run, `checkpoint.json`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EngineError, FileSink, MarketState, RunSummary, Simulation};
use crate::config::SimConfig;
use crate::policies::PolicySet;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const TRANSACTIONS_FILE: &str = "transactions.csv";
pub const META_FILE: &str = "run_meta.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub providers: BTreeMap<String, String>,
    pub config: SimConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}

pub fn write_run_meta(dir: &Path, cfg: &SimConfig, policies: &PolicySet) -> io::Result<()> {
    let meta = RunMeta {
        seed: cfg.seed,
        providers: policies.provider_ids.iter().cloned().collect(),
        config: cfg.clone(),
    };
    write_json(&dir.join(META_FILE), &meta)
}

pub fn write_checkpoint(dir: &Path, state: &MarketState) -> io::Result<()> {
    write_json(&dir.join(CHECKPOINT_FILE), state)
}

pub fn read_checkpoint(path: &Path) -> io::Result<MarketState> {
    let file = File::open(path)?;
    serde_json::from_reader(io::BufReader::new(file)).map_err(io::Error::from)
}

/// Runs a whole simulation into `dir`. On an aborted run the checkpoint is
/// written next to the partial logs before the error is returned.
pub fn run_to_dir(cfg: &SimConfig, policies: PolicySet, dir: &Path) -> Result<RunSummary, EngineError> {
    std::fs::create_dir_all(dir)?;
    write_run_meta(dir, cfg, &policies)?;
    let mut sink = FileSink::create(dir)?;
    let mut sim = Simulation::new(cfg.clone(), policies, &mut sink)?;
    finish(&mut sim, &mut sink, dir)
}

/// Continues an aborted run from `dir/checkpoint.json`, appending to its logs.
pub fn resume_dir(cfg: &SimConfig, policies: PolicySet, dir: &Path) -> Result<RunSummary, EngineError> {
    let state = read_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let mut sink = FileSink::append(dir)?;
    let mut sim = Simulation::resume(cfg.clone(), policies, state)?;
    let summary = finish(&mut sim, &mut sink, dir)?;
    std::fs::remove_file(dir.join(CHECKPOINT_FILE))?;
    Ok(summary)
}

fn finish(sim: &mut Simulation, sink: &mut FileSink, dir: &Path) -> Result<RunSummary, EngineError> {
    match sim.run(sink) {
        Err(EngineError::Aborted {
            step,
            reason,
            checkpoint,
        }) => {
            write_checkpoint(dir, &checkpoint)?;
            Err(EngineError::Aborted {
                step,
                reason,
                checkpoint,
            })
        }
        other => other,
    }
}
