//! Deterministic offline policies. Each is a pure function of its context and
//! the random stream it is handed.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::config::MockConfig;
use crate::domain::{BuyerAction, DatasetMetadata, Money, UpdateFrequency};
use crate::rng::StreamRng;
use crate::vector_store::MockEmbedder;

use super::{
    BuyerContext, BuyerPolicy, DataGenerator, GoalGenerator, GoalRequest, MetadataRequest, PolicyError,
    SellerContext, SellerDecision, SellerPolicy,
};

struct FieldVocab {
    topics: &'static [&'static str],
    columns: &'static [&'static str],
}

fn vocab(field: &str) -> FieldVocab {
    match field {
        "cybersecurity" => FieldVocab {
            topics: &["intrusion alerts", "malware samples", "phishing reports", "vulnerability scans", "login anomalies"],
            columns: &["ip_address", "port", "severity", "signature", "host", "attack_type"],
        },
        "education" => FieldVocab {
            topics: &["student grades", "course enrollment", "attendance records", "test scores", "teacher evaluations"],
            columns: &["student_id", "school", "grade", "subject", "score", "term"],
        },
        "environmental science" => FieldVocab {
            topics: &["air quality", "river pollution", "rainfall measurements", "carbon emissions", "biodiversity surveys"],
            columns: &["station", "pm25", "co2", "temperature", "rainfall", "species"],
        },
        "finance" => FieldVocab {
            topics: &["stock prices", "credit defaults", "exchange rates", "bond yields", "loan applications"],
            columns: &["ticker", "open", "close", "volume", "rate", "amount"],
        },
        "healthcare" => FieldVocab {
            topics: &["patient admissions", "vaccination status", "clinical trials", "hospital capacity", "prescription claims"],
            columns: &["patient_id", "diagnosis", "age", "hospital", "dose", "outcome"],
        },
        "manufacturing" => FieldVocab {
            topics: &["machine sensors", "defect inspections", "production output", "supply delays", "energy consumption"],
            columns: &["machine_id", "line", "vibration", "defects", "units", "downtime"],
        },
        "marketing" => FieldVocab {
            topics: &["campaign conversions", "customer segments", "product reviews", "ad impressions", "loyalty purchases"],
            columns: &["customer_id", "campaign", "channel", "clicks", "conversions", "spend"],
        },
        "social media" => FieldVocab {
            topics: &["post engagement", "hashtag mentions", "follower growth", "sentiment scores", "influencer reach"],
            columns: &["user_id", "post_id", "likes", "shares", "hashtag", "sentiment"],
        },
        "sports" => FieldVocab {
            topics: &["match results", "player performance", "injury reports", "ticket sales", "team formations"],
            columns: &["team", "player", "match_id", "goals", "minutes", "position"],
        },
        "urban planning" => FieldVocab {
            topics: &["traffic flow", "housing permits", "public transit ridership", "land use", "parking occupancy"],
            columns: &["district", "road_id", "vehicles", "permits", "riders", "zone"],
        },
        _ => FieldVocab {
            topics: &["activity records", "usage statistics", "survey responses"],
            columns: &["record_id", "category", "value", "region"],
        },
    }
}

fn slug(field: &str) -> String {
    field
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

fn check_field(field: &str, fields: &[String]) -> Result<(), PolicyError> {
    if fields.is_empty() || fields.iter().any(|f| f == field) {
        Ok(())
    } else {
        Err(PolicyError::UnknownField(field.to_string()))
    }
}

/// Price drawn log-uniformly over `[min, max]`, rounded to cents.
pub fn log_uniform_price(rng: &mut StreamRng, min: f64, max: f64) -> Money {
    let u: f64 = rng.random();
    let value = (min.ln() + u * (max.ln() - min.ln())).exp();
    Money::from_f64(value.clamp(min, max)).unwrap_or(Money::from_units(1))
}

/// Names follow `<field>_data_<serial>`; collisions with existing names get a
/// letter suffix.
pub struct MockDataGenerator {
    cfg: MockConfig,
}

impl MockDataGenerator {
    pub fn new(cfg: MockConfig) -> Self {
        MockDataGenerator { cfg }
    }
}

impl DataGenerator for MockDataGenerator {
    fn generate(&self, req: &MetadataRequest<'_>, rng: &mut StreamRng) -> Result<DatasetMetadata, PolicyError> {
        check_field(req.field, req.fields)?;
        let v = vocab(req.field);
        let topic = *v.topics.choose(rng).expect("non-empty topics");
        let frequency = *UpdateFrequency::ALL.choose(rng).expect("non-empty");
        let base = format!("{}_data_{}", slug(req.field), req.serial);
        let mut data_name = base.clone();
        let mut suffix = b'a';
        while req.existing_names.contains(&data_name) {
            data_name = format!("{base}{}", suffix as char);
            suffix += 1;
        }
        let mut columns = vec!["id".to_string(), "date".to_string()];
        let extra = rng.random_range(2..=4usize);
        for c in v.columns.choose_multiple(rng, extra) {
            columns.push((*c).to_string());
        }
        Ok(DatasetMetadata {
            description: format!("{topic} for {} analysis, {frequency} update frequency", req.field),
            data_name,
            columns,
            tags: vec![req.field.to_string()],
            data_price: log_uniform_price(rng, self.cfg.price_min, self.cfg.price_max),
            update_frequency: frequency,
        })
    }
}

/// Goals read `Analyze <field>: ...`; with trends, the top trend's dataset
/// name is embedded in the goal.
pub struct MockGoalGenerator;

impl GoalGenerator for MockGoalGenerator {
    fn generate(&self, req: &GoalRequest<'_>, rng: &mut StreamRng) -> Result<String, PolicyError> {
        let v = vocab(req.field);
        let topic = *v.topics.choose(rng).expect("non-empty topics");
        let top = req.trends.and_then(|t| t.entries.first());
        Ok(match top {
            Some(entry) => format!(
                "Analyze {}: combine the trending dataset {} with {topic} to find drivers of demand.",
                req.field, entry.data_name
            ),
            None => format!("Analyze {}: study {topic} to find drivers of change.", req.field),
        })
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "analyze", "combine", "drivers", "find", "for", "from", "in", "into", "of", "on",
    "study", "the", "to", "trending", "with", "change", "demand", "dataset",
];

/// Search query derived from goal keywords.
pub fn query_from_goal(goal: &str) -> String {
    let kept: Vec<String> = MockEmbedder::tokens(goal)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect();
    if kept.is_empty() {
        goal.trim().to_string()
    } else {
        kept.join(" ")
    }
}

/// Rule table:
/// 1. `do_nothing` with the configured probability;
/// 2. `update_data` on a stale dynamic listing;
/// 3. `change_price` cutting the price of a long-unsold listing;
/// 4. `provide_data` in the field of an owned listing.
pub struct MockSellerPolicy {
    cfg: MockConfig,
}

impl MockSellerPolicy {
    pub fn new(cfg: MockConfig) -> Self {
        MockSellerPolicy { cfg }
    }
}

impl SellerPolicy for MockSellerPolicy {
    fn decide(&self, ctx: &SellerContext, rng: &mut StreamRng) -> Result<SellerDecision, PolicyError> {
        if rng.random_bool(self.cfg.seller_do_nothing_probability.clamp(0.0, 1.0)) {
            return Ok(SellerDecision::DoNothing);
        }
        if let Some(l) = ctx.listings.iter().find(|l| {
            l.listing.update_frequency.is_dynamic()
                && ctx.step.saturating_sub(l.last_updated_step) >= self.cfg.seller_stale_steps
        }) {
            return Ok(SellerDecision::UpdateData {
                dataset_id: l.listing.dataset_id,
            });
        }
        if let Some(l) = ctx
            .listings
            .iter()
            .find(|l| l.consecutive_unsold_steps >= self.cfg.seller_unsold_reprice_steps)
        {
            let new_price = l.listing.price.scale(1.0 - self.cfg.seller_price_cut);
            if new_price.is_positive() {
                return Ok(SellerDecision::ChangePrice {
                    dataset_id: l.listing.dataset_id,
                    new_price,
                });
            }
        }
        let field = ctx.listings.choose(rng).map(|l| l.field.clone());
        Ok(SellerDecision::ProvideData { field })
    }
}

/// Cycle: plan, search, buy the cheapest affordable unowned hit above the
/// similarity floor, analyze, then either search again or keep analyzing.
pub struct MockBuyerPolicy {
    cfg: MockConfig,
}

impl MockBuyerPolicy {
    pub fn new(cfg: MockConfig) -> Self {
        MockBuyerPolicy { cfg }
    }

    fn plan(ctx: &BuyerContext) -> BuyerAction {
        BuyerAction::Plan {
            text: format!("Search the market for data on: {}", query_from_goal(&ctx.goal)),
        }
    }

    fn search(ctx: &BuyerContext) -> BuyerAction {
        BuyerAction::Search {
            query: query_from_goal(&ctx.goal),
        }
    }

    fn candidate(&self, ctx: &BuyerContext) -> Option<BuyerAction> {
        ctx.last_search_results
            .iter()
            .filter(|h| h.similarity > self.cfg.buyer_similarity_floor)
            .filter(|h| h.listing.price <= ctx.budget)
            .filter(|h| {
                !ctx.purchases
                    .iter()
                    .any(|p| p.dataset_id == h.listing.dataset_id && p.version == h.listing.version)
            })
            .min_by(|a, b| {
                a.listing
                    .price
                    .cmp(&b.listing.price)
                    .then(a.listing.dataset_id.cmp(&b.listing.dataset_id))
            })
            .map(|h| BuyerAction::Buy {
                dataset_id: h.listing.dataset_id,
            })
    }
}

impl BuyerPolicy for MockBuyerPolicy {
    fn decide(&self, ctx: &BuyerContext, rng: &mut StreamRng) -> Result<BuyerAction, PolicyError> {
        let last = ctx.action_history.last().map(|(_, a)| a);
        Ok(match last {
            None => Self::plan(ctx),
            Some(BuyerAction::Plan { .. }) | Some(BuyerAction::DoNothing) => Self::search(ctx),
            Some(BuyerAction::Search { .. }) => self.candidate(ctx).unwrap_or_else(|| Self::plan(ctx)),
            Some(BuyerAction::Buy { .. }) => BuyerAction::Analyze,
            Some(BuyerAction::Analyze) => {
                if rng.random_bool(self.cfg.buyer_research_probability.clamp(0.0, 1.0)) {
                    Self::search(ctx)
                } else {
                    BuyerAction::Analyze
                }
            }
            Some(BuyerAction::ExitMarket) => BuyerAction::ExitMarket,
        })
    }
}
