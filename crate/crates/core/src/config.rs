//! Simulation configuration. Every knob has a default; a TOML file may
//! override any subset of them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Money;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// The ten analysis domains buyers and datasets are drawn from.
pub const DEFAULT_FIELDS: [&str; 10] = [
    "cybersecurity",
    "education",
    "environmental science",
    "finance",
    "healthcare",
    "manufacturing",
    "marketing",
    "social media",
    "sports",
    "urban planning",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    #[default]
    Mock,
    Llm,
    Replay,
}

impl std::str::FromStr for PolicyMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(PolicyMode::Mock),
            "llm" => Ok(PolicyMode::Llm),
            "replay" => Ok(PolicyMode::Replay),
            other => Err(format!("unknown policy mode {other:?} (expected mock|llm|replay)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AgentOrder {
    #[default]
    Ascending,
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EntryMode {
    /// Entrant count is the rounded sigmoid value.
    #[default]
    Deterministic,
    /// Entrant count is a Poisson draw with the sigmoid value as its mean.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingProvider {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BuyerPromptVariant {
    #[default]
    Published,
    Subscription,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrendWeighting {
    /// Field share of the step scaled by the step's volume relative to the busiest step.
    #[default]
    Volume,
    /// Plain per-step field share.
    Share,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub max_steps: u32,
    pub policy: PolicyMode,
    pub market: MarketConfig,
    pub entry: EntryConfig,
    pub goals: GoalConfig,
    pub exit: ExitConfig,
    pub search: SearchConfig,
    pub embedding: EmbeddingConfig,
    pub llm: LlmConfig,
    pub mock: MockConfig,
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub initial_buyers: u32,
    pub initial_sellers: u32,
    pub budget_levels: Vec<Money>,
    pub fields: Vec<String>,
    pub agent_order: AgentOrder,
    /// Fan policy calls out across threads within a phase. Results are still
    /// applied in agent order.
    pub parallel_decisions: bool,
}

/// Parameters of the logistic entry-rate curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntryConfig {
    /// Maximum entrants per step per role (the curve's ceiling).
    pub max_entrants: f64,
    /// Steepness of the curve.
    pub growth_rate: f64,
    /// Transaction volume at which the curve reaches half its ceiling.
    pub inflection: f64,
    /// Number of previous steps whose transactions count as recent volume.
    pub window_steps: u32,
    pub mode: EntryMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalConfig {
    pub trend_probability: f64,
    pub trend_window_steps: u32,
    pub trend_top_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExitConfig {
    /// A seller leaves once every owned listing has gone unsold this many steps.
    pub seller_unsold_steps: u32,
    /// A buyer leaves once analyze/buy exceeds this ratio (with at least one buy).
    pub buyer_analyze_buy_ratio: f64,
    /// A buyer leaves once it has planned more than this many times in a row.
    pub buyer_plan_streak: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingProvider,
    pub dim: usize,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    /// Re-asks after an unparseable or invalid response.
    pub retry_limit: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub buyer_prompt_variant: BuyerPromptVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub seller_do_nothing_probability: f64,
    pub seller_stale_steps: u32,
    pub seller_unsold_reprice_steps: u32,
    pub seller_price_cut: f64,
    pub buyer_similarity_floor: f64,
    pub buyer_research_probability: f64,
    pub price_min: f64,
    pub price_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub trend_weighting: TrendWeighting,
    pub moving_average_window: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 42,
            max_steps: 40,
            policy: PolicyMode::Mock,
            market: MarketConfig::default(),
            entry: EntryConfig::default(),
            goals: GoalConfig::default(),
            exit: ExitConfig::default(),
            search: SearchConfig::default(),
            embedding: EmbeddingConfig::default(),
            llm: LlmConfig::default(),
            mock: MockConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            initial_buyers: 10,
            initial_sellers: 5,
            budget_levels: vec![
                Money::from_units(1_000),
                Money::from_units(10_000),
                Money::from_units(100_000),
            ],
            fields: DEFAULT_FIELDS.iter().map(|f| f.to_string()).collect(),
            agent_order: AgentOrder::Ascending,
            parallel_decisions: false,
        }
    }
}

impl Default for EntryConfig {
    fn default() -> Self {
        EntryConfig {
            max_entrants: 50.0,
            growth_rate: 0.03,
            inflection: 100.0,
            window_steps: 1,
            mode: EntryMode::Deterministic,
        }
    }
}

impl Default for GoalConfig {
    fn default() -> Self {
        GoalConfig {
            trend_probability: 0.5,
            trend_window_steps: 5,
            trend_top_n: 5,
        }
    }
}

impl Default for ExitConfig {
    fn default() -> Self {
        ExitConfig {
            seller_unsold_steps: 10,
            buyer_analyze_buy_ratio: 2.0,
            buyer_plan_streak: 7,
        }
    }
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { top_k: 20 }
    }
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            provider: EmbeddingProvider::Mock,
            dim: 256,
            endpoint: "https://api.openai.com/v1/embeddings".to_string(),
            model: "text-embedding-3-large".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
        }
    }
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model: "gpt-4o-mini".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            retry_limit: 3,
            backoff_ms: 500,
            timeout_secs: 120,
            buyer_prompt_variant: BuyerPromptVariant::Published,
        }
    }
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            seller_do_nothing_probability: 0.8,
            seller_stale_steps: 2,
            seller_unsold_reprice_steps: 5,
            seller_price_cut: 0.2,
            buyer_similarity_floor: 0.2,
            buyer_research_probability: 0.3,
            price_min: 50.0,
            price_max: 5000.0,
        }
    }
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            trend_weighting: TrendWeighting::Volume,
            moving_average_window: 3,
        }
    }
}

fn probability(name: &str, p: f64, problems: &mut Vec<String>) {
    if !(0.0..=1.0).contains(&p) {
        problems.push(format!("{name} must be in [0, 1], got {p}"));
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    /// Checks every invariant and reports all problems at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if self.max_steps == 0 {
            problems.push("max_steps must be positive".to_string());
        }
        let m = &self.market;
        if m.initial_buyers == 0 {
            problems.push("market.initial_buyers must be positive".to_string());
        }
        if m.initial_sellers == 0 {
            problems.push("market.initial_sellers must be positive".to_string());
        }
        if m.budget_levels.is_empty() {
            problems.push("market.budget_levels must not be empty".to_string());
        }
        if m.budget_levels.iter().any(|b| !b.is_positive()) {
            problems.push("market.budget_levels must be positive".to_string());
        }
        if m.fields.is_empty() {
            problems.push("market.fields must not be empty".to_string());
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &m.fields {
            if f.trim().is_empty() {
                problems.push("market.fields entries must be non-empty".to_string());
            } else if !seen.insert(f) {
                problems.push(format!("market.fields contains {f:?} twice"));
            }
        }
        let e = &self.entry;
        if !(e.max_entrants.is_finite() && e.max_entrants > 0.0) {
            problems.push("entry.max_entrants must be positive".to_string());
        }
        if !(e.growth_rate.is_finite() && e.growth_rate > 0.0) {
            problems.push("entry.growth_rate must be positive".to_string());
        }
        if !e.inflection.is_finite() {
            problems.push("entry.inflection must be finite".to_string());
        }
        if e.window_steps == 0 {
            problems.push("entry.window_steps must be positive".to_string());
        }
        probability("goals.trend_probability", self.goals.trend_probability, &mut problems);
        if self.goals.trend_window_steps == 0 || self.goals.trend_top_n == 0 {
            problems.push("goals.trend_window_steps and goals.trend_top_n must be positive".to_string());
        }
        if self.exit.seller_unsold_steps == 0 || self.exit.buyer_plan_streak == 0 {
            problems.push("exit thresholds must be positive".to_string());
        }
        if !(self.exit.buyer_analyze_buy_ratio.is_finite() && self.exit.buyer_analyze_buy_ratio > 0.0) {
            problems.push("exit.buyer_analyze_buy_ratio must be positive".to_string());
        }
        if self.search.top_k == 0 {
            problems.push("search.top_k must be positive".to_string());
        }
        if self.embedding.dim == 0 {
            problems.push("embedding.dim must be positive".to_string());
        }
        let mk = &self.mock;
        probability("mock.seller_do_nothing_probability", mk.seller_do_nothing_probability, &mut problems);
        probability("mock.seller_price_cut", mk.seller_price_cut, &mut problems);
        probability("mock.buyer_research_probability", mk.buyer_research_probability, &mut problems);
        if !(mk.price_min > 0.0 && mk.price_min <= mk.price_max && mk.price_max.is_finite()) {
            problems.push("mock price range must satisfy 0 < price_min <= price_max".to_string());
        }
        if self.metrics.moving_average_window == 0 {
            problems.push("metrics.moving_average_window must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }
}
