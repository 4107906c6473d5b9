//! Decision making for the market: metadata and goal generation plus the
//! seller and buyer policies.
//!
//! Every policy sees an immutable context snapshot and a dedicated random
//! stream and returns a decision; the engine validates and applies it.

pub mod http;
pub mod llm;
pub mod mock;
pub mod prompts;
pub mod transcript;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::domain::{
    BuyerAction, BuyerId, DatasetId, DatasetMetadata, ListingSnapshot, Money, Purchase, SearchHit,
    SellerAction, SellerId, Step, Transaction,
};
use crate::rng::StreamRng;
use crate::vector_store::{Embedder, MockEmbedder};

pub use prompts::{PromptBundle, PromptError, SchemaId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("field {0:?} is not one of the configured fields")]
    UnknownField(String),
    #[error("generation failed after {attempts} attempts: {last_error}")]
    GenerationFailed { attempts: u32, last_error: String },
    #[error("text-completion service failure: {0}")]
    Transport(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl PolicyError {
    /// Transport failures abort a run; everything else degrades to a no-op.
    pub fn is_fatal(&self) -> bool {
        matches!(self, PolicyError::Transport(_))
    }
}

pub struct MetadataRequest<'a> {
    pub field: &'a str,
    pub existing_names: &'a BTreeSet<String>,
    pub fields: &'a [String],
    /// Next dataset id; mock names embed it.
    pub serial: u32,
    pub step: Step,
}

pub trait DataGenerator: Send + Sync {
    fn generate(&self, req: &MetadataRequest<'_>, rng: &mut StreamRng) -> Result<DatasetMetadata, PolicyError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendEntry {
    pub dataset_id: DatasetId,
    pub data_name: String,
    pub field: String,
    pub count: u64,
}

/// Most purchased datasets over a recent window, busiest first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub entries: Vec<TrendEntry>,
}

impl TrendSummary {
    /// Counts transactions with `from_step <= step < to_step` per dataset and
    /// keeps the `top_n` largest, ties by dataset id. `lookup` supplies the
    /// name and field of a dataset.
    pub fn from_transactions<'a, F>(
        transactions: impl IntoIterator<Item = &'a Transaction>,
        from_step: Step,
        to_step: Step,
        top_n: usize,
        lookup: F,
    ) -> TrendSummary
    where
        F: Fn(DatasetId) -> Option<(String, String)>,
    {
        let mut counts = std::collections::BTreeMap::<DatasetId, u64>::new();
        for t in transactions {
            if t.step >= from_step && t.step < to_step {
                *counts.entry(t.dataset_id).or_default() += 1;
            }
        }
        let mut ranked: Vec<(DatasetId, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let entries = ranked
            .into_iter()
            .filter_map(|(id, count)| {
                lookup(id).map(|(data_name, field)| TrendEntry {
                    dataset_id: id,
                    data_name,
                    field,
                    count,
                })
            })
            .take(top_n)
            .collect();
        TrendSummary { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct GoalRequest<'a> {
    pub field: &'a str,
    /// Present iff the trend-conditioned prompt is used.
    pub trends: Option<&'a TrendSummary>,
}

pub trait GoalGenerator: Send + Sync {
    fn generate(&self, req: &GoalRequest<'_>, rng: &mut StreamRng) -> Result<String, PolicyError>;
}

/// A seller's view of one of its own listings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnedListing {
    pub listing: ListingSnapshot,
    pub field: String,
    pub created_step: Step,
    pub last_updated_step: Step,
    pub sales_count: u64,
    pub consecutive_unsold_steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellerContext {
    pub seller_id: SellerId,
    pub step: Step,
    pub revenue: Money,
    pub listings: Vec<OwnedListing>,
    pub sales: Vec<Transaction>,
    pub action_history: Vec<(Step, SellerAction)>,
}

impl SellerContext {
    pub fn owns(&self, id: DatasetId) -> bool {
        self.listings.iter().any(|l| l.listing.dataset_id == id)
    }
}

/// What a seller policy asks for. `ProvideData` is an intent: the engine
/// generates the metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum SellerDecision {
    UpdateData { dataset_id: DatasetId },
    ChangePrice { dataset_id: DatasetId, new_price: Money },
    ProvideData { field: Option<String> },
    DoNothing,
    ExitMarket,
}

pub trait SellerPolicy: Send + Sync {
    fn decide(&self, ctx: &SellerContext, rng: &mut StreamRng) -> Result<SellerDecision, PolicyError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyerContext {
    pub buyer_id: BuyerId,
    pub step: Step,
    pub field: String,
    pub goal: String,
    pub budget: Money,
    pub purchases: Vec<Purchase>,
    pub plan_text: String,
    pub action_history: Vec<(Step, BuyerAction)>,
    pub last_search_results: Vec<SearchHit>,
}

pub trait BuyerPolicy: Send + Sync {
    fn decide(&self, ctx: &BuyerContext, rng: &mut StreamRng) -> Result<BuyerAction, PolicyError>;
}

/// Everything the engine needs to make decisions.
#[derive(Clone)]
pub struct PolicySet {
    pub data_generator: Arc<dyn DataGenerator>,
    pub goal_generator: Arc<dyn GoalGenerator>,
    pub seller: Arc<dyn SellerPolicy>,
    pub buyer: Arc<dyn BuyerPolicy>,
    pub embedder: Arc<dyn Embedder>,
    /// Human-readable provider identifiers for run metadata.
    pub provider_ids: Vec<(String, String)>,
}

impl PolicySet {
    /// Deterministic offline policies.
    pub fn mock(cfg: &SimConfig) -> PolicySet {
        let embedder = MockEmbedder::new(cfg.embedding.dim);
        PolicySet {
            data_generator: Arc::new(mock::MockDataGenerator::new(cfg.mock.clone())),
            goal_generator: Arc::new(mock::MockGoalGenerator),
            seller: Arc::new(mock::MockSellerPolicy::new(cfg.mock.clone())),
            buyer: Arc::new(mock::MockBuyerPolicy::new(cfg.mock.clone())),
            provider_ids: vec![
                ("policy".to_string(), "mock".to_string()),
                ("embedder".to_string(), embedder.id()),
            ],
            embedder: Arc::new(embedder),
        }
    }

    /// Policies backed by a structured text-completion client.
    pub fn llm(cfg: &SimConfig, client: Arc<llm::StructuredClient>, embedder: Arc<dyn Embedder>) -> PolicySet {
        PolicySet {
            data_generator: Arc::new(llm::LlmDataGenerator::new(client.clone())),
            goal_generator: Arc::new(llm::LlmGoalGenerator::new(client.clone())),
            seller: Arc::new(llm::LlmSellerPolicy::new(client.clone())),
            buyer: Arc::new(llm::LlmBuyerPolicy::new(client.clone(), cfg.llm.buyer_prompt_variant)),
            provider_ids: vec![
                ("policy".to_string(), "llm".to_string()),
                ("completion_service".to_string(), client.service_id()),
                ("model".to_string(), cfg.llm.model.clone()),
                ("embedder".to_string(), embedder.id()),
            ],
            embedder,
        }
    }
}
