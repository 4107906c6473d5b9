//! Shared domain types: identifiers, money, dataset metadata, agent state,
//! actions and completed transactions.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Simulation step index.
pub type Step = u32;

macro_rules! prefixed_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl $name {
            pub const PREFIX: &'static str = $prefix;
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}{}", $prefix, self.0)
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.strip_prefix($prefix)
                    .and_then(|rest| rest.parse::<u32>().ok())
                    .map($name)
                    .ok_or_else(|| format!("invalid {} id: {s:?}", stringify!($name)))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(deserializer)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

prefixed_id!(
    /// Buyer agent id, rendered as `b<n>`. Assigned in creation order.
    BuyerId,
    "b"
);
prefixed_id!(
    /// Seller agent id, rendered as `s<n>`. Assigned in creation order.
    SellerId,
    "s"
);
prefixed_id!(
    /// Dataset listing id, rendered as `d<n>`.
    DatasetId,
    "d"
);

/// Either kind of agent, used in events and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentId {
    Buyer(BuyerId),
    Seller(SellerId),
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentId::Buyer(id) => id.fmt(f),
            AgentId::Seller(id) => id.fmt(f),
        }
    }
}

/// Fixed-point currency amount in hundredths of a unit.
///
/// Prices and budgets share this unit. Arithmetic is exact, which keeps the
/// spend/revenue conservation identity exact. Serialized as a decimal number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_cents(cents: i64) -> Self {
        Money(cents)
    }

    pub const fn from_units(units: i64) -> Self {
        Money(units * 100)
    }

    /// Rounds to the nearest hundredth. Returns `None` for non-finite input.
    pub fn from_f64(value: f64) -> Option<Self> {
        if !value.is_finite() || value.abs() > 9.0e16 {
            return None;
        }
        Some(Money((value * 100.0).round() as i64))
    }

    pub const fn cents(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    /// Multiplies by `factor` and rounds to the nearest hundredth.
    pub fn scale(self, factor: f64) -> Money {
        Money((self.0 as f64 * factor).round() as i64)
    }
}

impl std::ops::Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl std::ops::AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl std::ops::SubAssign for Money {
    fn sub_assign(&mut self, rhs: Money) {
        self.0 -= rhs.0;
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        if abs.is_multiple_of(100) {
            write!(f, "{sign}{}", abs / 100)
        } else {
            write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
        }
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Money::from_f64(value).ok_or_else(|| serde::de::Error::custom("non-finite amount"))
    }
}

/// How often a dataset is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateFrequency {
    Static,
    Low,
    Medium,
    High,
}

impl UpdateFrequency {
    pub const ALL: [UpdateFrequency; 4] = [
        UpdateFrequency::Static,
        UpdateFrequency::Low,
        UpdateFrequency::Medium,
        UpdateFrequency::High,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UpdateFrequency::Static => "static",
            UpdateFrequency::Low => "low",
            UpdateFrequency::Medium => "medium",
            UpdateFrequency::High => "high",
        }
    }

    /// Medium and high frequency data is considered dynamic.
    pub fn is_dynamic(self) -> bool {
        matches!(self, UpdateFrequency::Medium | UpdateFrequency::High)
    }
}

impl fmt::Display for UpdateFrequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpdateFrequency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "static" => Ok(UpdateFrequency::Static),
            "low" => Ok(UpdateFrequency::Low),
            "medium" => Ok(UpdateFrequency::Medium),
            "high" => Ok(UpdateFrequency::High),
            other => Err(format!("unknown update frequency {other:?}")),
        }
    }
}

/// Metadata describing a tradable dataset. Only metadata is traded; no
/// tabular content is ever represented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub data_name: String,
    pub description: String,
    pub columns: Vec<String>,
    pub tags: Vec<String>,
    pub data_price: Money,
    pub update_frequency: UpdateFrequency,
}

impl DatasetMetadata {
    /// Text handed to the embedder for similarity search.
    pub fn embedding_text(&self) -> String {
        format!(
            "{} {} {} {}",
            self.data_name,
            self.description,
            self.columns.join(" "),
            self.tags.join(" ")
        )
    }
}

/// A single broken metadata invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataViolation {
    EmptyName,
    DuplicateName,
    NonPositivePrice,
    EmptyColumns,
    EmptyColumnName,
    /// Tags must carry exactly one of the configured fields.
    FieldTagCount(usize),
}

impl fmt::Display for MetadataViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetadataViolation::EmptyName => f.write_str("empty name"),
            MetadataViolation::DuplicateName => f.write_str("duplicate name"),
            MetadataViolation::NonPositivePrice => f.write_str("non-positive price"),
            MetadataViolation::EmptyColumns => f.write_str("empty columns"),
            MetadataViolation::EmptyColumnName => f.write_str("empty column name"),
            MetadataViolation::FieldTagCount(n) => {
                write!(f, "expected exactly one field tag, found {n}")
            }
        }
    }
}

/// Reports every violated metadata invariant; an empty list means valid.
///
/// The update-frequency enum is enforced by the type itself; raw strings are
/// checked when LLM output is parsed. `fields` is the configured field list;
/// when empty the field-tag check is skipped.
pub fn validate_metadata(
    metadata: &DatasetMetadata,
    existing_names: &BTreeSet<String>,
    fields: &[String],
) -> Vec<MetadataViolation> {
    let mut violations = Vec::new();
    let name = metadata.data_name.trim();
    if name.is_empty() {
        violations.push(MetadataViolation::EmptyName);
    } else if existing_names.contains(name) {
        violations.push(MetadataViolation::DuplicateName);
    }
    if !metadata.data_price.is_positive() {
        violations.push(MetadataViolation::NonPositivePrice);
    }
    if metadata.columns.is_empty() {
        violations.push(MetadataViolation::EmptyColumns);
    } else if metadata.columns.iter().any(|c| c.trim().is_empty()) {
        violations.push(MetadataViolation::EmptyColumnName);
    }
    if !fields.is_empty() {
        let field_tags = metadata
            .tags
            .iter()
            .filter(|t| fields.iter().any(|f| f == *t))
            .count();
        if field_tags != 1 {
            violations.push(MetadataViolation::FieldTagCount(field_tags));
        }
    }
    violations
}

/// The field a listing belongs to: its first tag that is a configured field.
pub fn field_of(metadata: &DatasetMetadata, fields: &[String]) -> Option<String> {
    metadata
        .tags
        .iter()
        .find(|t| fields.iter().any(|f| f == *t))
        .cloned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetListing {
    pub dataset_id: DatasetId,
    pub seller_id: SellerId,
    pub metadata: DatasetMetadata,
    pub field: String,
    pub version: u32,
    pub created_step: Step,
    pub last_updated_step: Step,
    pub sales_count: u64,
    pub consecutive_unsold_steps: u32,
    pub active: bool,
}

impl DatasetListing {
    pub fn snapshot(&self) -> ListingSnapshot {
        ListingSnapshot {
            dataset_id: self.dataset_id,
            seller_id: self.seller_id,
            data_name: self.metadata.data_name.clone(),
            description: self.metadata.description.clone(),
            columns: self.metadata.columns.clone(),
            tags: self.metadata.tags.clone(),
            price: self.metadata.data_price,
            update_frequency: self.metadata.update_frequency,
            version: self.version,
        }
    }
}

/// What a buyer sees of a listing in search results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingSnapshot {
    pub dataset_id: DatasetId,
    pub seller_id: SellerId,
    pub data_name: String,
    pub description: String,
    pub columns: Vec<String>,
    pub tags: Vec<String>,
    pub price: Money,
    pub update_frequency: UpdateFrequency,
    pub version: u32,
}

/// An action a seller takes, as applied by the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum SellerAction {
    UpdateData { dataset_id: DatasetId },
    ChangePrice { dataset_id: DatasetId, new_price: Money },
    ProvideData { metadata: DatasetMetadata },
    DoNothing,
    ExitMarket,
}

impl SellerAction {
    pub fn name(&self) -> &'static str {
        match self {
            SellerAction::UpdateData { .. } => "update_data",
            SellerAction::ChangePrice { .. } => "change_price",
            SellerAction::ProvideData { .. } => "provide_data",
            SellerAction::DoNothing => "do_nothing",
            SellerAction::ExitMarket => "exit_market",
        }
    }
}

/// An action a buyer takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum BuyerAction {
    Plan { text: String },
    Search { query: String },
    Buy { dataset_id: DatasetId },
    Analyze,
    DoNothing,
    ExitMarket,
}

impl BuyerAction {
    pub fn name(&self) -> &'static str {
        match self {
            BuyerAction::Plan { .. } => "plan",
            BuyerAction::Search { .. } => "search",
            BuyerAction::Buy { .. } => "buy",
            BuyerAction::Analyze => "analyze",
            BuyerAction::DoNothing => "do_nothing",
            BuyerAction::ExitMarket => "exit_market",
        }
    }
}

pub const SELLER_ACTION_NAMES: [&str; 5] = [
    "update_data",
    "change_price",
    "provide_data",
    "do_nothing",
    "exit_market",
];

pub const BUYER_ACTION_NAMES: [&str; 6] =
    ["plan", "search", "buy", "analyze", "do_nothing", "exit_market"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellerState {
    pub seller_id: SellerId,
    pub revenue: Money,
    pub owned_datasets: BTreeSet<DatasetId>,
    pub action_history: Vec<(Step, SellerAction)>,
    pub active: bool,
    pub entered_step: Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Purchase {
    pub dataset_id: DatasetId,
    pub data_name: String,
    pub version: u32,
    pub step: Step,
    pub price: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub similarity: f64,
    pub listing: ListingSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyerState {
    pub buyer_id: BuyerId,
    pub field: String,
    pub goal: String,
    pub trend_conditioned: bool,
    pub initial_budget: Money,
    pub budget: Money,
    pub purchases: Vec<Purchase>,
    pub plan_text: String,
    pub last_search_results: Vec<SearchHit>,
    pub buy_count: u32,
    pub analyze_count: u32,
    pub consecutive_plan_count: u32,
    pub action_history: Vec<(Step, BuyerAction)>,
    pub active: bool,
    pub entered_step: Step,
}

impl BuyerState {
    pub fn owns(&self, dataset_id: DatasetId, version: u32) -> bool {
        self.purchases
            .iter()
            .any(|p| p.dataset_id == dataset_id && p.version == version)
    }
}

/// One completed purchase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub step: Step,
    pub buyer_id: BuyerId,
    pub seller_id: SellerId,
    pub dataset_id: DatasetId,
    pub version: u32,
    pub price: Money,
}
