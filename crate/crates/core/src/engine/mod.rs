//! The step loop: initialization, agent entry, seller phase, buyer phase and
//! transaction phase, with rule-based exits and a replayable event log.
//!
//! Policies only see snapshots. Decisions may be computed in parallel, but
//! are always applied one agent at a time in a fixed order, so a mock run's
//! log is a pure function of its configuration.

pub mod events;
pub mod output;
pub mod rules;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AgentOrder, ConfigError, SimConfig};
use crate::domain::{
    validate_metadata, BuyerAction, BuyerId, BuyerState, DatasetId, DatasetListing, DatasetMetadata, Money,
    Purchase, SellerAction, SellerId, SellerState, Step, Transaction,
};
use crate::entry::{draw_budget, entrant_count};
use crate::policies::{
    BuyerContext, GoalRequest, MetadataRequest, OwnedListing, PolicyError, PolicySet, SellerContext,
    SellerDecision, TrendSummary,
};
use crate::rng::{self, StreamRng};
use crate::vector_store::{EmbedError, VectorStore};

pub use events::{Event, EventSink, FileSink, MemorySink, NullSink, Role};
pub use output::{CHECKPOINT_FILE, EVENTS_FILE, META_FILE, TRANSACTIONS_FILE};
pub use rules::ExitReason;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("initialization failed: {0}")]
    Initialization(String),
    /// An unrecoverable external failure. `checkpoint` is the state at the
    /// start of the failed step; the event log ends at the previous step.
    #[error("run aborted at step {step}: {reason}")]
    Aborted {
        step: Step,
        reason: String,
        checkpoint: Box<MarketState>,
    },
    #[error("event sink: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Streams {
    fields: StreamRng,
    budgets: StreamRng,
    entry: StreamRng,
    trend: StreamRng,
}

/// Complete mutable market state; serializable as a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketState {
    pub seed: u64,
    /// Next step to run.
    pub step: Step,
    pub finished: bool,
    pub buyers: BTreeMap<BuyerId, BuyerState>,
    pub sellers: BTreeMap<SellerId, SellerState>,
    pub listings: BTreeMap<DatasetId, DatasetListing>,
    /// Every data name ever listed.
    pub names: BTreeSet<String>,
    pub transactions: Vec<Transaction>,
    /// Transaction count of each completed step.
    pub step_volumes: Vec<u64>,
    pub store: VectorStore,
    next_buyer: u32,
    next_seller: u32,
    next_dataset: u32,
    streams: Streams,
}

impl MarketState {
    fn empty(seed: u64) -> Self {
        MarketState {
            seed,
            step: 0,
            finished: false,
            buyers: BTreeMap::new(),
            sellers: BTreeMap::new(),
            listings: BTreeMap::new(),
            names: BTreeSet::new(),
            transactions: Vec::new(),
            step_volumes: Vec::new(),
            store: VectorStore::new(),
            next_buyer: 0,
            next_seller: 0,
            next_dataset: 0,
            streams: Streams {
                fields: rng::stream(seed, "fields"),
                budgets: rng::stream(seed, "budgets"),
                entry: rng::stream(seed, "entry"),
                trend: rng::stream(seed, "trend"),
            },
        }
    }

    pub fn active_buyers(&self) -> usize {
        self.buyers.values().filter(|b| b.active).count()
    }

    pub fn active_sellers(&self) -> usize {
        self.sellers.values().filter(|s| s.active).count()
    }

    pub fn active_listings(&self) -> usize {
        self.listings.values().filter(|l| l.active).count()
    }

    /// Total buyer spend: sum of initial budget minus remaining budget.
    pub fn total_spend(&self) -> Money {
        self.buyers.values().map(|b| b.initial_budget - b.budget).sum()
    }

    pub fn total_revenue(&self) -> Money {
        self.sellers.values().map(|s| s.revenue).sum()
    }

    pub fn total_transaction_value(&self) -> Money {
        self.transactions.iter().map(|t| t.price).sum()
    }

    /// Transactions in steps `[to - window, to)`.
    fn recent_volume(&self, to: Step, window: u32) -> u64 {
        let from = to.saturating_sub(window) as usize;
        self.step_volumes[from.min(self.step_volumes.len())..(to as usize).min(self.step_volumes.len())]
            .iter()
            .sum()
    }
}

/// What happened in one step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: Step,
    pub new_buyers: u32,
    pub new_sellers: u32,
    pub seller_actions: Vec<(SellerId, String)>,
    pub buyer_actions: Vec<(BuyerId, String)>,
    pub transactions: Vec<Transaction>,
    pub exits: Vec<(String, ExitReason)>,
}

impl StepReport {
    pub fn transaction_count(&self) -> u64 {
        self.transactions.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: Step,
    pub transactions: u64,
    pub buyers: usize,
    pub sellers: usize,
    pub listings: usize,
}

struct PurchaseRequest {
    buyer_id: BuyerId,
    dataset_id: DatasetId,
    quoted_price: Money,
}

/// Distinguishes failures that abort the run from everything else.
enum StepError {
    Fatal(String),
    Io(std::io::Error),
}

impl From<std::io::Error> for StepError {
    fn from(e: std::io::Error) -> Self {
        StepError::Io(e)
    }
}

fn fatal_policy(e: PolicyError) -> Result<PolicyError, StepError> {
    if e.is_fatal() {
        Err(StepError::Fatal(e.to_string()))
    } else {
        Ok(e)
    }
}

fn fatal_embed(e: EmbedError) -> Result<EmbedError, StepError> {
    match e {
        EmbedError::ProviderUnavailable(_) => Err(StepError::Fatal(e.to_string())),
        other => Ok(other),
    }
}

pub struct Simulation {
    cfg: SimConfig,
    policies: PolicySet,
    state: MarketState,
}

impl Simulation {
    /// Creates the initial market and emits its events. Any generation
    /// failure here aborts.
    pub fn new(cfg: SimConfig, policies: PolicySet, sink: &mut dyn EventSink) -> Result<Self, EngineError> {
        cfg.validate()?;
        let mut sim = Simulation {
            state: MarketState::empty(cfg.seed),
            cfg,
            policies,
        };
        let mut events = Vec::new();
        let mut report = StepReport::default();
        for _ in 0..sim.cfg.market.initial_sellers {
            match sim.add_seller(0, &mut events) {
                Ok(true) => {}
                Ok(false) => return Err(EngineError::Initialization(skip_reason(&events))),
                Err(StepError::Fatal(r)) => return Err(EngineError::Initialization(r)),
                Err(StepError::Io(e)) => return Err(e.into()),
            }
        }
        for _ in 0..sim.cfg.market.initial_buyers {
            match sim.add_buyer(0, false, &mut events, &mut report) {
                Ok(true) => {}
                Ok(false) => return Err(EngineError::Initialization(skip_reason(&events))),
                Err(StepError::Fatal(r)) => return Err(EngineError::Initialization(r)),
                Err(StepError::Io(e)) => return Err(e.into()),
            }
        }
        for e in &events {
            sink.emit(e)?;
        }
        sink.flush()?;
        Ok(sim)
    }

    /// Continues from a checkpoint.
    pub fn resume(cfg: SimConfig, policies: PolicySet, state: MarketState) -> Result<Self, EngineError> {
        cfg.validate()?;
        Ok(Simulation { cfg, policies, state })
    }

    pub fn state(&self) -> &MarketState {
        &self.state
    }

    pub fn into_state(self) -> MarketState {
        self.state
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished
    }

    /// Runs until `max_steps` or until no agent is active.
    pub fn run(&mut self, sink: &mut dyn EventSink) -> Result<RunSummary, EngineError> {
        while !self.is_finished() {
            self.step(sink)?;
        }
        Ok(RunSummary {
            steps: self.state.step,
            transactions: self.state.transactions.len() as u64,
            buyers: self.state.buyers.len(),
            sellers: self.state.sellers.len(),
            listings: self.state.listings.len(),
        })
    }

    /// Runs one full step. Events reach the sink only once the step completes.
    pub fn step(&mut self, sink: &mut dyn EventSink) -> Result<StepReport, EngineError> {
        let checkpoint = self.state.clone();
        let step = self.state.step;
        let mut events = Vec::new();
        match self.step_inner(&mut events) {
            Ok(report) => {
                for e in &events {
                    sink.emit(e)?;
                }
                sink.flush()?;
                Ok(report)
            }
            Err(StepError::Fatal(reason)) => {
                self.state = checkpoint.clone();
                Err(EngineError::Aborted {
                    step,
                    reason,
                    checkpoint: Box::new(checkpoint),
                })
            }
            Err(StepError::Io(e)) => {
                self.state = checkpoint;
                Err(e.into())
            }
        }
    }

    fn step_inner(&mut self, events: &mut Vec<Event>) -> Result<StepReport, StepError> {
        let step = self.state.step;
        let mut report = StepReport {
            step,
            ..StepReport::default()
        };
        if step >= 1 {
            self.entry_phase(step, events, &mut report)?;
        }
        self.seller_phase(step, events, &mut report)?;
        let requests = self.buyer_phase(step, events, &mut report)?;
        self.transaction_phase(step, requests, events, &mut report);

        let s = &mut self.state;
        s.step_volumes.push(report.transaction_count());
        events.push(Event::StepCompleted {
            step,
            transactions: report.transaction_count(),
            active_buyers: s.active_buyers(),
            active_sellers: s.active_sellers(),
            listings: s.active_listings(),
        });
        s.step = step + 1;
        s.finished = s.step >= self.cfg.max_steps || (s.active_buyers() == 0 && s.active_sellers() == 0);
        Ok(report)
    }

    fn random_field(&mut self) -> String {
        self.cfg
            .market
            .fields
            .choose(&mut self.state.streams.fields)
            .expect("fields validated non-empty")
            .clone()
    }

    /// Generates validated metadata for a new listing. `Ok(Err(reason))` is a
    /// recoverable generation failure.
    fn generate_listing(
        &self,
        field: &str,
        step: Step,
        rng_key: u64,
    ) -> Result<Result<DatasetMetadata, String>, StepError> {
        let req = MetadataRequest {
            field,
            existing_names: &self.state.names,
            fields: &self.cfg.market.fields,
            serial: self.state.next_dataset,
            step,
        };
        let mut r = rng::keyed(self.state.seed, "metadata", rng_key, u64::from(step));
        let metadata = match self.policies.data_generator.generate(&req, &mut r) {
            Ok(m) => m,
            Err(e) => return Ok(Err(fatal_policy(e)?.to_string())),
        };
        let violations = validate_metadata(&metadata, &self.state.names, &self.cfg.market.fields);
        if !violations.is_empty() {
            let reasons: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Ok(Err(format!("invalid metadata: {}", reasons.join(", "))));
        }
        Ok(Ok(metadata))
    }

    /// Embeds and lists `metadata` for `seller_id`.
    fn list_dataset(
        &mut self,
        seller_id: SellerId,
        metadata: DatasetMetadata,
        field: String,
        step: Step,
        events: &mut Vec<Event>,
    ) -> Result<Result<DatasetId, String>, StepError> {
        let vector = match self.policies.embedder.embed(&metadata.embedding_text()) {
            Ok(v) => v,
            Err(e) => return Ok(Err(fatal_embed(e)?.to_string())),
        };
        let dataset_id = DatasetId(self.state.next_dataset);
        let listing = DatasetListing {
            dataset_id,
            seller_id,
            metadata: metadata.clone(),
            field: field.clone(),
            version: 1,
            created_step: step,
            last_updated_step: step,
            sales_count: 0,
            consecutive_unsold_steps: 0,
            active: true,
        };
        if let Err(e) = self.state.store.upsert(dataset_id, vector, listing.snapshot()) {
            return Ok(Err(e.to_string()));
        }
        self.state.next_dataset += 1;
        self.state.names.insert(metadata.data_name.clone());
        self.state.listings.insert(dataset_id, listing);
        if let Some(seller) = self.state.sellers.get_mut(&seller_id) {
            seller.owned_datasets.insert(dataset_id);
        }
        events.push(Event::ListingCreated {
            step,
            agent: seller_id,
            dataset_id,
            field,
            metadata,
        });
        Ok(Ok(dataset_id))
    }

    /// Adds a seller with one generated listing; `Ok(false)` if generation failed.
    fn add_seller(&mut self, step: Step, events: &mut Vec<Event>) -> Result<bool, StepError> {
        let field = self.random_field();
        let seller_id = SellerId(self.state.next_seller);
        let metadata = match self.generate_listing(&field, step, u64::from(self.state.next_dataset))? {
            Ok(m) => m,
            Err(reason) => {
                events.push(Event::EntrantSkipped {
                    step,
                    role: Role::Seller,
                    reason,
                });
                return Ok(false);
            }
        };
        self.state.sellers.insert(
            seller_id,
            SellerState {
                seller_id,
                revenue: Money::ZERO,
                owned_datasets: BTreeSet::new(),
                action_history: Vec::new(),
                active: true,
                entered_step: step,
            },
        );
        let mut entered = vec![Event::SellerEntered { step, agent: seller_id }];
        match self.list_dataset(seller_id, metadata, field, step, &mut entered)? {
            Ok(_) => {
                self.state.next_seller += 1;
                events.extend(entered);
                Ok(true)
            }
            Err(reason) => {
                self.state.sellers.remove(&seller_id);
                events.push(Event::EntrantSkipped {
                    step,
                    role: Role::Seller,
                    reason,
                });
                Ok(false)
            }
        }
    }

    fn trend_summary(&self, step: Step) -> TrendSummary {
        let from = step.saturating_sub(self.cfg.goals.trend_window_steps);
        TrendSummary::from_transactions(&self.state.transactions, from, step, self.cfg.goals.trend_top_n, |id| {
            self.state
                .listings
                .get(&id)
                .map(|l| (l.metadata.data_name.clone(), l.field.clone()))
        })
    }

    /// Adds a buyer; `Ok(false)` if goal generation failed.
    fn add_buyer(
        &mut self,
        step: Step,
        may_use_trends: bool,
        events: &mut Vec<Event>,
        report: &mut StepReport,
    ) -> Result<bool, StepError> {
        let field = self.random_field();
        let budget = draw_budget(&mut self.state.streams.budgets, &self.cfg.market.budget_levels);
        let trend_conditioned =
            may_use_trends && self.state.streams.trend.random_bool(self.cfg.goals.trend_probability);
        let buyer_id = BuyerId(self.state.next_buyer);
        let trends = trend_conditioned.then(|| self.trend_summary(step));
        let req = GoalRequest {
            field: &field,
            trends: trends.as_ref(),
        };
        let mut r = rng::keyed(self.state.seed, "goal", u64::from(buyer_id.0), u64::from(step));
        let goal = match self.policies.goal_generator.generate(&req, &mut r) {
            Ok(g) if !g.trim().is_empty() => g,
            Ok(_) => {
                events.push(Event::EntrantSkipped {
                    step,
                    role: Role::Buyer,
                    reason: "empty goal".into(),
                });
                return Ok(false);
            }
            Err(e) => {
                let e = fatal_policy(e)?;
                events.push(Event::EntrantSkipped {
                    step,
                    role: Role::Buyer,
                    reason: e.to_string(),
                });
                return Ok(false);
            }
        };
        self.state.next_buyer += 1;
        events.push(Event::BuyerEntered {
            step,
            agent: buyer_id,
            field: field.clone(),
            budget,
            goal: goal.clone(),
            trend_conditioned,
        });
        self.state.buyers.insert(
            buyer_id,
            BuyerState {
                buyer_id,
                field,
                goal,
                trend_conditioned,
                initial_budget: budget,
                budget,
                purchases: Vec::new(),
                plan_text: String::new(),
                last_search_results: Vec::new(),
                buy_count: 0,
                analyze_count: 0,
                consecutive_plan_count: 0,
                action_history: Vec::new(),
                active: true,
                entered_step: step,
            },
        );
        report.new_buyers += 1;
        Ok(true)
    }

    fn entry_phase(&mut self, step: Step, events: &mut Vec<Event>, report: &mut StepReport) -> Result<(), StepError> {
        let volume = self.state.recent_volume(step, self.cfg.entry.window_steps) as f64;
        let new_buyers = entrant_count(volume, &self.cfg.entry, &mut self.state.streams.entry);
        let new_sellers = entrant_count(volume, &self.cfg.entry, &mut self.state.streams.entry);
        for _ in 0..new_sellers {
            if self.add_seller(step, events)? {
                report.new_sellers += 1;
            }
        }
        for _ in 0..new_buyers {
            self.add_buyer(step, true, events, report)?;
        }
        Ok(())
    }

    fn ordered<K: Copy + Ord>(&self, ids: Vec<K>, step: Step, role: Role) -> Vec<K> {
        let mut ids = ids;
        if self.cfg.market.agent_order == AgentOrder::Shuffled {
            let mut r = rng::keyed(self.state.seed, "order", role as u64, u64::from(step));
            ids.shuffle(&mut r);
        }
        ids
    }

    fn seller_context(&self, seller: &SellerState, step: Step) -> SellerContext {
        let listings = seller
            .owned_datasets
            .iter()
            .filter_map(|id| self.state.listings.get(id))
            .filter(|l| l.active)
            .map(|l| OwnedListing {
                listing: l.snapshot(),
                field: l.field.clone(),
                created_step: l.created_step,
                last_updated_step: l.last_updated_step,
                sales_count: l.sales_count,
                consecutive_unsold_steps: l.consecutive_unsold_steps,
            })
            .collect();
        SellerContext {
            seller_id: seller.seller_id,
            step,
            revenue: seller.revenue,
            listings,
            sales: self
                .state
                .transactions
                .iter()
                .filter(|t| t.seller_id == seller.seller_id)
                .cloned()
                .collect(),
            action_history: seller.action_history.clone(),
        }
    }

    fn exit_seller(&mut self, id: SellerId, step: Step, reason: ExitReason, events: &mut Vec<Event>, report: &mut StepReport) {
        let Some(seller) = self.state.sellers.get_mut(&id) else {
            return;
        };
        seller.active = false;
        let owned: Vec<DatasetId> = seller.owned_datasets.iter().copied().collect();
        for d in owned {
            if let Some(l) = self.state.listings.get_mut(&d) {
                if l.active {
                    l.active = false;
                    self.state.store.remove(d);
                    events.push(Event::ListingRemoved { step, dataset_id: d });
                }
            }
        }
        events.push(Event::Exit {
            step,
            role: Role::Seller,
            agent: id.to_string(),
            reason,
        });
        report.exits.push((id.to_string(), reason));
    }

    fn seller_phase(&mut self, step: Step, events: &mut Vec<Event>, report: &mut StepReport) -> Result<(), StepError> {
        let active: Vec<SellerId> = self.state.sellers.values().filter(|s| s.active).map(|s| s.seller_id).collect();
        let ids = self.ordered(active, step, Role::Seller);
        for id in &ids {
            let seller = &self.state.sellers[id];
            let owned = seller.owned_datasets.iter().filter_map(|d| self.state.listings.get(d));
            if rules::seller_forced_exit(owned, &self.cfg.exit) {
                self.exit_seller(*id, step, ExitReason::UnsoldListings, events, report);
            }
        }
        let contexts: Vec<SellerContext> = ids
            .iter()
            .filter(|id| self.state.sellers[id].active)
            .map(|id| self.seller_context(&self.state.sellers[id], step))
            .collect();
        let seed = self.state.seed;
        let policy = &self.policies.seller;
        let decide = |ctx: &SellerContext| {
            let mut r = rng::keyed(seed, "seller", u64::from(ctx.seller_id.0), u64::from(step));
            policy.decide(ctx, &mut r)
        };
        let decisions: Vec<Result<SellerDecision, PolicyError>> = if self.cfg.market.parallel_decisions {
            contexts.par_iter().map(decide).collect()
        } else {
            contexts.iter().map(decide).collect()
        };
        for (ctx, decision) in contexts.iter().zip(decisions) {
            let decision = match decision {
                Ok(d) => d,
                Err(e) => {
                    let e = fatal_policy(e)?;
                    self.downgrade(step, Role::Seller, ctx.seller_id.to_string(), "decision", &e.to_string(), events);
                    SellerDecision::DoNothing
                }
            };
            let applied = self.apply_seller(ctx, decision, step, events)?;
            report.seller_actions.push((ctx.seller_id, applied.name().to_string()));
            if let Some(s) = self.state.sellers.get_mut(&ctx.seller_id) {
                s.action_history.push((step, applied.clone()));
            }
            events.push(Event::SellerAction {
                step,
                agent: ctx.seller_id,
                action: applied.clone(),
            });
            if applied == SellerAction::ExitMarket {
                self.exit_seller(ctx.seller_id, step, ExitReason::Voluntary, events, report);
            }
        }
        Ok(())
    }

    fn downgrade(&self, step: Step, role: Role, agent: String, proposed: &str, reason: &str, events: &mut Vec<Event>) {
        log::debug!("step {step}: {agent} {proposed} downgraded to do_nothing: {reason}");
        events.push(Event::ActionDowngraded {
            step,
            role,
            agent,
            proposed: proposed.to_string(),
            reason: reason.to_string(),
        });
    }

    fn owned_active(&self, seller_id: SellerId, dataset_id: DatasetId) -> bool {
        self.state
            .listings
            .get(&dataset_id)
            .is_some_and(|l| l.active && l.seller_id == seller_id)
    }

    fn apply_seller(
        &mut self,
        ctx: &SellerContext,
        decision: SellerDecision,
        step: Step,
        events: &mut Vec<Event>,
    ) -> Result<SellerAction, StepError> {
        let agent = ctx.seller_id.to_string();
        Ok(match decision {
            SellerDecision::DoNothing => SellerAction::DoNothing,
            SellerDecision::ExitMarket => SellerAction::ExitMarket,
            SellerDecision::UpdateData { dataset_id } => {
                if !self.owned_active(ctx.seller_id, dataset_id) {
                    self.downgrade(step, Role::Seller, agent, "update_data", "dataset not owned or inactive", events);
                    return Ok(SellerAction::DoNothing);
                }
                let l = self.state.listings.get_mut(&dataset_id).expect("checked above");
                l.version += 1;
                l.last_updated_step = step;
                let version = l.version;
                let snapshot = l.snapshot();
                self.state.store.refresh_snapshot(dataset_id, snapshot);
                events.push(Event::ListingUpdated {
                    step,
                    dataset_id,
                    version,
                });
                SellerAction::UpdateData { dataset_id }
            }
            SellerDecision::ChangePrice { dataset_id, new_price } => {
                if !self.owned_active(ctx.seller_id, dataset_id) {
                    self.downgrade(step, Role::Seller, agent, "change_price", "dataset not owned or inactive", events);
                    return Ok(SellerAction::DoNothing);
                }
                if !new_price.is_positive() {
                    self.downgrade(step, Role::Seller, agent, "change_price", "non-positive price", events);
                    return Ok(SellerAction::DoNothing);
                }
                let l = self.state.listings.get_mut(&dataset_id).expect("checked above");
                let old_price = l.metadata.data_price;
                l.metadata.data_price = new_price;
                let snapshot = l.snapshot();
                self.state.store.refresh_snapshot(dataset_id, snapshot);
                events.push(Event::PriceChanged {
                    step,
                    dataset_id,
                    old_price,
                    new_price,
                });
                SellerAction::ChangePrice { dataset_id, new_price }
            }
            SellerDecision::ProvideData { field } => {
                let field = match field.filter(|f| self.cfg.market.fields.contains(f)) {
                    Some(f) => f,
                    None => match ctx.listings.first() {
                        Some(l) => l.field.clone(),
                        None => self.random_field(),
                    },
                };
                let metadata = match self.generate_listing(&field, step, u64::from(ctx.seller_id.0))? {
                    Ok(m) => m,
                    Err(reason) => {
                        self.downgrade(step, Role::Seller, agent, "provide_data", &reason, events);
                        return Ok(SellerAction::DoNothing);
                    }
                };
                match self.list_dataset(ctx.seller_id, metadata.clone(), field, step, events)? {
                    Ok(_) => SellerAction::ProvideData { metadata },
                    Err(reason) => {
                        self.downgrade(step, Role::Seller, agent, "provide_data", &reason, events);
                        SellerAction::DoNothing
                    }
                }
            }
        })
    }

    fn buyer_context(&self, buyer: &BuyerState, step: Step) -> BuyerContext {
        BuyerContext {
            buyer_id: buyer.buyer_id,
            step,
            field: buyer.field.clone(),
            goal: buyer.goal.clone(),
            budget: buyer.budget,
            purchases: buyer.purchases.clone(),
            plan_text: buyer.plan_text.clone(),
            action_history: buyer.action_history.clone(),
            last_search_results: buyer.last_search_results.clone(),
        }
    }

    fn buyer_phase(
        &mut self,
        step: Step,
        events: &mut Vec<Event>,
        report: &mut StepReport,
    ) -> Result<Vec<PurchaseRequest>, StepError> {
        let active: Vec<BuyerId> = self.state.buyers.values().filter(|b| b.active).map(|b| b.buyer_id).collect();
        let ids = self.ordered(active, step, Role::Buyer);
        let contexts: Vec<BuyerContext> = ids.iter().map(|id| self.buyer_context(&self.state.buyers[id], step)).collect();
        let seed = self.state.seed;
        let policy = &self.policies.buyer;
        let decide = |ctx: &BuyerContext| {
            let mut r = rng::keyed(seed, "buyer", u64::from(ctx.buyer_id.0), u64::from(step));
            policy.decide(ctx, &mut r)
        };
        let decisions: Vec<Result<BuyerAction, PolicyError>> = if self.cfg.market.parallel_decisions {
            contexts.par_iter().map(decide).collect()
        } else {
            contexts.iter().map(decide).collect()
        };
        let mut requests = Vec::new();
        for (ctx, decision) in contexts.iter().zip(decisions) {
            let id = ctx.buyer_id;
            let proposed = match decision {
                Ok(a) => a,
                Err(e) => {
                    let e = fatal_policy(e)?;
                    self.downgrade(step, Role::Buyer, id.to_string(), "decision", &e.to_string(), events);
                    BuyerAction::DoNothing
                }
            };
            let (applied, hits) = self.apply_buyer(ctx, proposed, step, events, &mut requests)?;
            let buyer = self.state.buyers.get_mut(&id).expect("active buyer");
            rules::apply_buyer_counters(buyer, &applied);
            buyer.action_history.push((step, applied.clone()));
            report.buyer_actions.push((id, applied.name().to_string()));
            events.push(Event::BuyerAction {
                step,
                agent: id,
                action: applied.clone(),
                hits,
            });
            let reason = if applied == BuyerAction::ExitMarket {
                Some(ExitReason::Voluntary)
            } else {
                rules::buyer_forced_exit(
                    buyer.analyze_count,
                    buyer.buy_count,
                    buyer.consecutive_plan_count,
                    &self.cfg.exit,
                )
            };
            if let Some(reason) = reason {
                buyer.active = false;
                events.push(Event::Exit {
                    step,
                    role: Role::Buyer,
                    agent: id.to_string(),
                    reason,
                });
                report.exits.push((id.to_string(), reason));
            }
        }
        Ok(requests)
    }

    fn apply_buyer(
        &mut self,
        ctx: &BuyerContext,
        proposed: BuyerAction,
        step: Step,
        events: &mut Vec<Event>,
        requests: &mut Vec<PurchaseRequest>,
    ) -> Result<(BuyerAction, Option<Vec<events::HitRef>>), StepError> {
        let agent = ctx.buyer_id.to_string();
        match proposed {
            BuyerAction::Search { query } => {
                let query = query.trim().to_string();
                if query.is_empty() {
                    self.downgrade(step, Role::Buyer, agent, "search", "empty query", events);
                    return Ok((BuyerAction::DoNothing, None));
                }
                let vector = match self.policies.embedder.embed(&query) {
                    Ok(v) => v,
                    Err(e) => {
                        let e = fatal_embed(e)?;
                        self.downgrade(step, Role::Buyer, agent, "search", &e.to_string(), events);
                        return Ok((BuyerAction::DoNothing, None));
                    }
                };
                let hits = if self.state.store.is_empty() {
                    Vec::new()
                } else {
                    match self.state.store.search(&vector, self.cfg.search.top_k) {
                        Ok(h) => h,
                        Err(e) => {
                            self.downgrade(step, Role::Buyer, agent, "search", &e.to_string(), events);
                            return Ok((BuyerAction::DoNothing, None));
                        }
                    }
                };
                let refs = hits
                    .iter()
                    .map(|h| events::HitRef {
                        dataset_id: h.listing.dataset_id,
                        similarity: h.similarity,
                    })
                    .collect();
                self.state.buyers.get_mut(&ctx.buyer_id).expect("active buyer").last_search_results = hits;
                Ok((BuyerAction::Search { query }, Some(refs)))
            }
            BuyerAction::Buy { dataset_id } => {
                let Some(listing) = self.state.listings.get(&dataset_id).filter(|l| l.active) else {
                    self.downgrade(step, Role::Buyer, agent, "buy", "listing unknown or removed", events);
                    return Ok((BuyerAction::DoNothing, None));
                };
                let quoted_price = ctx
                    .last_search_results
                    .iter()
                    .find(|h| h.listing.dataset_id == dataset_id)
                    .map(|h| h.listing.price)
                    .unwrap_or(listing.metadata.data_price);
                events.push(Event::PurchaseRequested {
                    step,
                    agent: ctx.buyer_id,
                    dataset_id,
                    quoted_price,
                });
                requests.push(PurchaseRequest {
                    buyer_id: ctx.buyer_id,
                    dataset_id,
                    quoted_price,
                });
                Ok((BuyerAction::Buy { dataset_id }, None))
            }
            other => Ok((other, None)),
        }
    }

    fn transaction_phase(
        &mut self,
        step: Step,
        mut requests: Vec<PurchaseRequest>,
        events: &mut Vec<Event>,
        report: &mut StepReport,
    ) {
        requests.sort_by_key(|r| r.buyer_id);
        let mut sold = BTreeSet::new();
        for req in requests {
            let s = &mut self.state;
            let Some(listing) = s.listings.get_mut(&req.dataset_id).filter(|l| l.active) else {
                events.push(Event::PurchaseRejected {
                    step,
                    agent: req.buyer_id,
                    dataset_id: req.dataset_id,
                    reason: "listing removed".into(),
                });
                continue;
            };
            let buyer = s.buyers.get_mut(&req.buyer_id).expect("requesting buyer exists");
            let price = listing.metadata.data_price;
            if buyer.budget < price {
                events.push(Event::PurchaseRejected {
                    step,
                    agent: req.buyer_id,
                    dataset_id: req.dataset_id,
                    reason: format!("insufficient budget: {} < {}", buyer.budget, price),
                });
                continue;
            }
            buyer.budget -= price;
            buyer.buy_count += 1;
            buyer.purchases.push(Purchase {
                dataset_id: req.dataset_id,
                data_name: listing.metadata.data_name.clone(),
                version: listing.version,
                step,
                price,
            });
            listing.sales_count += 1;
            sold.insert(req.dataset_id);
            let seller = s.sellers.get_mut(&listing.seller_id).expect("listing seller exists");
            seller.revenue += price;
            let t = Transaction {
                step,
                buyer_id: req.buyer_id,
                seller_id: listing.seller_id,
                dataset_id: req.dataset_id,
                version: listing.version,
                price,
            };
            events.push(Event::Transaction {
                step,
                agent: t.buyer_id,
                seller_id: t.seller_id,
                dataset_id: t.dataset_id,
                version: t.version,
                price,
                quoted_price: req.quoted_price,
            });
            s.transactions.push(t.clone());
            report.transactions.push(t);
        }
        for (id, listing) in self.state.listings.iter_mut() {
            if !listing.active {
                continue;
            }
            if sold.contains(id) {
                listing.consecutive_unsold_steps = 0;
            } else {
                listing.consecutive_unsold_steps += 1;
            }
        }
    }
}

fn skip_reason(events: &[Event]) -> String {
    events
        .iter()
        .rev()
        .find_map(|e| match e {
            Event::EntrantSkipped { reason, .. } => Some(reason.clone()),
            _ => None,
        })
        .unwrap_or_else(|| "generation failed".to_string())
}
