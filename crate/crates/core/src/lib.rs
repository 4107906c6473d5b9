//! Multi-agent data marketplace simulator and transaction-log analysis.
//!
//! Buyer and seller agents trade metadata-described datasets in discrete
//! steps. Decisions come from pluggable policies: deterministic mocks, an
//! external text-completion service, or a replay of recorded transcripts.
//! The [`metrics`] module computes structural, network and dynamic market
//! metrics from simulated or ingested transaction logs.

pub mod config;
pub mod domain;
pub mod engine;
pub mod entry;
pub mod ingest;
pub mod metrics;
pub mod policies;
pub mod rng;
pub mod vector_store;

pub use config::SimConfig;
