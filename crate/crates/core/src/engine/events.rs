//! The run event log and its sinks.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    BuyerAction, BuyerId, DatasetId, DatasetMetadata, Money, SellerAction, SellerId, Step, Transaction,
};

use super::rules::ExitReason;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Buyer,
    Seller,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Buyer => "buyer",
            Role::Seller => "seller",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRef {
    pub dataset_id: DatasetId,
    pub similarity: f64,
}

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SellerEntered {
        step: Step,
        agent: SellerId,
    },
    BuyerEntered {
        step: Step,
        agent: BuyerId,
        field: String,
        budget: Money,
        goal: String,
        trend_conditioned: bool,
    },
    EntrantSkipped {
        step: Step,
        role: Role,
        reason: String,
    },
    ListingCreated {
        step: Step,
        agent: SellerId,
        dataset_id: DatasetId,
        field: String,
        metadata: DatasetMetadata,
    },
    SellerAction {
        step: Step,
        agent: SellerId,
        action: SellerAction,
    },
    BuyerAction {
        step: Step,
        agent: BuyerId,
        action: BuyerAction,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hits: Option<Vec<HitRef>>,
    },
    /// A proposed action was invalid and replaced by `do_nothing`.
    ActionDowngraded {
        step: Step,
        role: Role,
        agent: String,
        proposed: String,
        reason: String,
    },
    ListingUpdated {
        step: Step,
        dataset_id: DatasetId,
        version: u32,
    },
    PriceChanged {
        step: Step,
        dataset_id: DatasetId,
        old_price: Money,
        new_price: Money,
    },
    ListingRemoved {
        step: Step,
        dataset_id: DatasetId,
    },
    PurchaseRequested {
        step: Step,
        agent: BuyerId,
        dataset_id: DatasetId,
        quoted_price: Money,
    },
    Transaction {
        step: Step,
        agent: BuyerId,
        seller_id: SellerId,
        dataset_id: DatasetId,
        version: u32,
        price: Money,
        quoted_price: Money,
    },
    PurchaseRejected {
        step: Step,
        agent: BuyerId,
        dataset_id: DatasetId,
        reason: String,
    },
    Exit {
        step: Step,
        role: Role,
        agent: String,
        reason: ExitReason,
    },
    StepCompleted {
        step: Step,
        transactions: u64,
        active_buyers: usize,
        active_sellers: usize,
        listings: usize,
    },
}

impl Event {
    pub fn step(&self) -> Step {
        match self {
            Event::SellerEntered { step, .. }
            | Event::BuyerEntered { step, .. }
            | Event::EntrantSkipped { step, .. }
            | Event::ListingCreated { step, .. }
            | Event::SellerAction { step, .. }
            | Event::BuyerAction { step, .. }
            | Event::ActionDowngraded { step, .. }
            | Event::ListingUpdated { step, .. }
            | Event::PriceChanged { step, .. }
            | Event::ListingRemoved { step, .. }
            | Event::PurchaseRequested { step, .. }
            | Event::Transaction { step, .. }
            | Event::PurchaseRejected { step, .. }
            | Event::Exit { step, .. }
            | Event::StepCompleted { step, .. } => *step,
        }
    }

    pub fn as_transaction(&self) -> Option<Transaction> {
        match self {
            Event::Transaction {
                step,
                agent,
                seller_id,
                dataset_id,
                version,
                price,
                ..
            } => Some(Transaction {
                step: *step,
                buyer_id: *agent,
                seller_id: *seller_id,
                dataset_id: *dataset_id,
                version: *version,
                price: *price,
            }),
            _ => None,
        }
    }
}

/// Receives events as each step completes.
pub trait EventSink {
    fn emit(&mut self, event: &Event) -> io::Result<()>;

    /// Called after every completed step.
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub events: Vec<Event>,
}

impl EventSink for MemorySink {
    fn emit(&mut self, event: &Event) -> io::Result<()> {
        self.events.push(event.clone());
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _event: &Event) -> io::Result<()> {
        Ok(())
    }
}

pub const TRANSACTIONS_HEADER: [&str; 6] = ["step", "buyer_id", "seller_id", "dataset_id", "version", "price"];

/// Writes `events.jsonl` and `transactions.csv` side by side.
pub struct FileSink {
    events: BufWriter<File>,
    transactions: csv::Writer<File>,
}

impl FileSink {
    pub fn create(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let events = BufWriter::new(File::create(dir.join(super::EVENTS_FILE))?);
        let mut transactions = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(File::create(dir.join(super::TRANSACTIONS_FILE))?);
        transactions.write_record(TRANSACTIONS_HEADER)?;
        transactions.flush()?;
        Ok(FileSink { events, transactions })
    }

    /// Reopens existing run files for appending, e.g. after a checkpoint.
    pub fn append(dir: &Path) -> io::Result<Self> {
        let open = |name: &str| std::fs::OpenOptions::new().append(true).open(dir.join(name));
        Ok(FileSink {
            events: BufWriter::new(open(super::EVENTS_FILE)?),
            transactions: csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(open(super::TRANSACTIONS_FILE)?),
        })
    }
}

impl EventSink for FileSink {
    fn emit(&mut self, event: &Event) -> io::Result<()> {
        serde_json::to_writer(&mut self.events, event)?;
        self.events.write_all(b"\n")?;
        if let Some(t) = event.as_transaction() {
            self.transactions.serialize(t)?;
        }
        Ok(())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.events.flush()?;
        self.transactions.flush()
    }
}
