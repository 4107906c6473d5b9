//! Prompt templates for the text-completion policies and their rendering.
//!
//! Templates use `{name}` placeholders. Rendering scans only the template,
//! never the substituted values, so values may contain braces (JSON) freely.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::BuyerPromptVariant;
use crate::domain::{BuyerAction, SellerAction};

use super::{BuyerContext, SellerContext, TrendSummary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("template placeholder {{{0}}} has no value")]
    Unresolved(String),
    #[error("template has an unterminated placeholder")]
    Unterminated,
}

/// Which response shape a prompt expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    Metadata,
    Goal,
    SellerAction,
    BuyerAction,
}

impl SchemaId {
    pub fn hint(self) -> &'static str {
        match self {
            SchemaId::Metadata => {
                r#"Respond with a single JSON object: {"data_name": string, "description": string, "columns": [string, ...], "tags": [string, ...], "data_price": number, "update_frequency": "high" | "medium" | "low" | "static"}"#
            }
            SchemaId::Goal => r#"Respond with a single JSON object: {"analysis_purpose": string}"#,
            SchemaId::SellerAction => {
                r#"Respond with a single JSON object: {"action": "update_data" | "change_price" | "provide_data" | "do_nothing" | "exit_market", "dataset_id": string (required for update_data and change_price), "new_price": number (required for change_price), "reasoning": string (optional)}"#
            }
            SchemaId::BuyerAction => {
                r#"Respond with a single JSON object: {"action": "plan" | "search" | "buy" | "analyze" | "do_nothing" | "exit_market", "plan": string (required for plan), "query": string (required for search), "dataset_id": string (required for buy), "reasoning": string (optional)}"#
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub schema: SchemaId,
}

pub const DATA_GENERATOR_SYSTEM: &str = "You are a data creator, who creates new data for the data market. Your task is to create new data which is valuable and realistic for the data market.

# Instructions
- Field: {field}
- Important Constraints: The data name must be unique and not duplicate with the existing data names in the list below.
- Think about the content of the data as much as possible and create the metadata.

# Metadata content
- data_name: name of the data
- description: description of the data content, which should be concise, clear and specific.
- columns: column names of the data (e.g. 'id,date,value')
- tags: {field}
- data_price: price of the data
- update_frequency: update frequency of the data (high, medium, low, static)";

pub const DATA_GENERATOR_USER: &str = "# Existing data names
{existing_names}

# Response format
{format}";

pub const SELLER_SYSTEM: &str = "You are a data seller agent aiming to maximize profits by selling data in a data marketplace. Your goal is to strategically manage the data you hold and maximize revenue through pricing and data updates. Carefully analyze market conditions and your sales performance, and then choose the most reasonable next move.

To achieve this goal, you will repeatedly use the following five actions:

# Available actions
- `update_data`: Update dynamic data by adding new data or correcting existing data to increase its value.
- `change_price`: Lower the price of data that isn't selling well, or consider raising the price of high-demand data.
- `provide_data`: Create and provide new data to the market. The field of the new data will be based on the tags of the data you currently own. This can expand your product line and create new revenue streams.
- `do_nothing`: Observe market conditions and maintain the current data and prices. This is a wise option to wait for opportunities without incurring costs.
- `exit_market`: If your data isn't selling at all and you can't foresee future profits, you will withdraw from the market to minimize losses.

# Notes
- Use `do_nothing` unless there is a specific reason to do otherwise.";

pub const SELLER_USER: &str = "# Current step
{step}

# Your revenue
{revenue}

# Your data
{listings}

# Your sales history
{sales}

# Your action history
{history}

# Response format
{format}";

pub const GOAL_WITH_TRENDS_SYSTEM: &str = "You are a data analyst for a company, who are going to participate in the data market.
Your goal is to create a purpose of your analysis considering the current market trend.
The flow of your task is as follows:
1. Plan your strategy, follow the current market trend or focus on another area  by changing the perspective.
2. Based on your strategy, create a specific and executable analysis purpose.

# Current Market Trends (Top {trend_count}):
{trends}

# Your Field:
{field}

# Note:
- If there is no trend related to the field, you should consider the trend and create an analysis purpose by yourself.
- Avoid creating an analysis purpose that is not natural.
- Avoid creating an analysis purpose by forcibly combining loosely related/unrelated fields.

# Example 1: Field has trend related data
- Field: marketing
- Trend: 1. \"Social media mention data for specific products\", 2. \"Stock price data of Nikkei 225\", 3. \"E-commerce site review data\", 4. \"COVID-19 vaccination status data\", ...
- Analysis Purpose: Analyze the correlation between the sentiment of mentions on social media and the star rating of reviews, and propose a more effective marketing strategy.

# Example 2: Field has no trend related data
- Field: sports
- Trend: 1. \"Social media mention data for specific products\", 2. \"Stock price data of Nikkei 225\", 3. \"E-commerce site review data\", 4. \"COVID-19 vaccination status data\", ...
- Analysis Purpose: Analyze the relationship between the formation of players and the win/loss ratio, and propose a more effective formation.

# NG Example: Purpose is not natural because of forcibly combining loosely related/unrelated fields.
- Analysis Purpose: Use data related to cybersecurity to analyze the correlation between environmental data such as PM2.5 and CO2 concentration and the rate of cybersecurity attacks, and reveal the impact of environmental factors on the vulnerability of cybersecurity in a specific region. This will contribute to the development of a cybersecurity defense strategy under specific environmental conditions.";

pub const GOAL_WITHOUT_TRENDS_SYSTEM: &str = "You are a data analyst for a company, who are going to participate in the data market.
Based on the given field, create a specific and executable analysis purpose.

# Your Field:
{field}

# Note:
- The analysis purpose should be concise and specific.

# Example:
- Field: medical
- Analysis Purpose: Analyze the correlation between the COVID-19 vaccination status and the number of new infections, and predict the future spread of infection.

- Field: finance
- Analysis Purpose: Analyze the data of the Nikkei 225 stock price for the past 10 years, and build a model to predict the stock price movement for the next quarter.";

pub const GOAL_USER: &str = "# Response format
{format}";

pub const BUYER_SYSTEM: &str = "You are a data buyer agent in a data marketplace.
Your goal is to achieve the given analysis purpose.

To achieve this goal, you will repeatedly use the following six actions:

# Available actions
- `plan`: Plan the next actions based on the current purpose and analysis results, or refine the purpose to make it more specific.
- `search`: Search the marketplace for datasets that match the current purpose.
- `buy`: Purchase relevant data from the marketplace.
- `analyze`: Analyze the datasets you currently own to gain insights.
- `do_nothing`: Intentionally take no action and maintain the current state. Use this when it is appropriate to wait for market changes or when no immediate action is necessary.
- `exit_market`: Exit the marketplace and end the simulation when you have fully achieved your purpose, or when you determine that achieving the purpose is impossible due to budget or data constraints.

# Guidelines for actions
1. Begin by using `plan` to determine the next actions based on the current purpose and any analysis results, or to further specify the purpose.
2. Based on the plan,
   - Use `search` to find datasets that match the purpose, or
   - Use `buy` to acquire necessary data, or
   - Use `analyze` to extract insights from datasets you already own.
3. If there is no suitable data to purchase or if further analysis would yield no new insights, consider using `do_nothing` to wait for changes in market conditions.
4. Update or refine your plan, or propose new hypotheses, using `plan` as new insights emerge.
5. Repeat this cycle until the final purpose is achieved or proven unattainable.
6. Always consider your budget and the datasets you currently own to ensure each action is optimal.
7. When you have achieved the final purpose or conclude that it cannot be achieved, call `exit_market` to end the simulation.

# Notes
- Even when dealing with the same data, there can be different versions. A version change means the data has been updated or corrected.
- If necessary, you should buy the same data with different versions actively.";

/// Extra note for the subscription-prompting variant.
pub const BUYER_SUBSCRIPTION_NOTE: &str = "
- When a search result matches your purpose and has a high or medium update_frequency, plan to re-purchase its new versions regularly, like a subscription.";

pub const BUYER_USER: &str = "# Your final purpose
{purpose}

# Your current state
- Budget: {budget}
- Owned data list: {owned}

# Your action history
{history}

# Last search results (Top candidates from the market DB)
{search_results}

# Response format
{format}";

/// Substitutes `{name}` placeholders. Every placeholder in the template must
/// have a value.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or(PromptError::Unterminated)?;
        let key = &after[..close];
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::Unresolved(key.to_string()))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Placeholder names used by a template.
pub fn placeholders(template: &str) -> Vec<&str> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                names.push(&after[..close]);
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    names
}

fn or_none(s: String) -> String {
    if s.is_empty() {
        "(none)".to_string()
    } else {
        s
    }
}

pub fn metadata_prompt<'a>(
    field: &str,
    existing_names: impl IntoIterator<Item = &'a String>,
) -> Result<PromptBundle, PromptError> {
    let names = or_none(
        existing_names
            .into_iter()
            .map(|n| format!("- {n}"))
            .collect::<Vec<_>>()
            .join("\n"),
    );
    Ok(PromptBundle {
        system: render(DATA_GENERATOR_SYSTEM, &[("field", field)])?,
        user: render(
            DATA_GENERATOR_USER,
            &[("existing_names", &names), ("format", SchemaId::Metadata.hint())],
        )?,
        schema: SchemaId::Metadata,
    })
}

pub fn format_trends(trends: &TrendSummary) -> String {
    if trends.is_empty() {
        return "(no transactions yet)".to_string();
    }
    trends
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{}. \"{}\" ({}, {} purchases)", i + 1, e.data_name, e.field, e.count))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn goal_prompt(field: &str, trends: Option<&TrendSummary>) -> Result<PromptBundle, PromptError> {
    let system = match trends {
        Some(t) => render(
            GOAL_WITH_TRENDS_SYSTEM,
            &[
                ("trend_count", &t.entries.len().to_string()),
                ("trends", &format_trends(t)),
                ("field", field),
            ],
        )?,
        None => render(GOAL_WITHOUT_TRENDS_SYSTEM, &[("field", field)])?,
    };
    Ok(PromptBundle {
        system,
        user: render(GOAL_USER, &[("format", SchemaId::Goal.hint())])?,
        schema: SchemaId::Goal,
    })
}

fn seller_action_line(step: u32, action: &SellerAction) -> String {
    match action {
        SellerAction::UpdateData { dataset_id } => format!("- step {step}: update_data {dataset_id}"),
        SellerAction::ChangePrice { dataset_id, new_price } => {
            format!("- step {step}: change_price {dataset_id} to {new_price}")
        }
        SellerAction::ProvideData { metadata } => {
            format!("- step {step}: provide_data \"{}\"", metadata.data_name)
        }
        other => format!("- step {step}: {}", other.name()),
    }
}

pub fn seller_prompt(ctx: &SellerContext) -> Result<PromptBundle, PromptError> {
    let listings = or_none(
        ctx.listings
            .iter()
            .map(|l| {
                format!(
                    "- dataset_id: {}, data_name: \"{}\", field: {}, price: {}, version: {}, update_frequency: {}, last_updated_step: {}, total_sales: {}, consecutive_unsold_steps: {}",
                    l.listing.dataset_id,
                    l.listing.data_name,
                    l.field,
                    l.listing.price,
                    l.listing.version,
                    l.listing.update_frequency,
                    l.last_updated_step,
                    l.sales_count,
                    l.consecutive_unsold_steps
                )
            })
            .collect::<Vec<_>>()
            .join("\n"),
    );
    let sales = or_none(
        ctx.sales
            .iter()
            .map(|t| {
                format!(
                    "- step {}: {} bought {} (version {}) for {}",
                    t.step, t.buyer_id, t.dataset_id, t.version, t.price
                )
            })
            .collect::<Vec<_>>()
            .join("\n"),
    );
    let history = or_none(
        ctx.action_history
            .iter()
            .map(|(s, a)| seller_action_line(*s, a))
            .collect::<Vec<_>>()
            .join("\n"),
    );
    Ok(PromptBundle {
        system: SELLER_SYSTEM.to_string(),
        user: render(
            SELLER_USER,
            &[
                ("step", &ctx.step.to_string()),
                ("revenue", &ctx.revenue.to_string()),
                ("listings", &listings),
                ("sales", &sales),
                ("history", &history),
                ("format", SchemaId::SellerAction.hint()),
            ],
        )?,
        schema: SchemaId::SellerAction,
    })
}

fn buyer_action_line(step: u32, action: &BuyerAction) -> String {
    match action {
        BuyerAction::Plan { text } => format!("- step {step}: plan: {text}"),
        BuyerAction::Search { query } => format!("- step {step}: search: {query}"),
        BuyerAction::Buy { dataset_id } => format!("- step {step}: buy {dataset_id}"),
        other => format!("- step {step}: {}", other.name()),
    }
}

#[derive(Serialize)]
struct SearchResultView<'a> {
    dataset_id: String,
    data_name: &'a str,
    description: &'a str,
    columns: &'a [String],
    tags: &'a [String],
    price: f64,
    update_frequency: &'a str,
    version: u32,
    similarity: f64,
}

pub fn buyer_prompt(ctx: &BuyerContext, variant: BuyerPromptVariant) -> Result<PromptBundle, PromptError> {
    let owned = or_none(
        ctx.purchases
            .iter()
            .map(|p| format!("{} \"{}\" (version {})", p.dataset_id, p.data_name, p.version))
            .collect::<Vec<_>>()
            .join(", "),
    );
    let history = or_none(
        ctx.action_history
            .iter()
            .map(|(s, a)| buyer_action_line(*s, a))
            .collect::<Vec<_>>()
            .join("\n"),
    );
    let views: Vec<SearchResultView<'_>> = ctx
        .last_search_results
        .iter()
        .map(|h| SearchResultView {
            dataset_id: h.listing.dataset_id.to_string(),
            data_name: &h.listing.data_name,
            description: &h.listing.description,
            columns: &h.listing.columns,
            tags: &h.listing.tags,
            price: h.listing.price.to_f64(),
            update_frequency: h.listing.update_frequency.as_str(),
            version: h.listing.version,
            similarity: h.similarity,
        })
        .collect();
    let search_results = serde_json::to_string(&views).expect("search results serialize");
    let mut system = BUYER_SYSTEM.to_string();
    if variant == BuyerPromptVariant::Subscription {
        system.push_str(BUYER_SUBSCRIPTION_NOTE);
    }
    Ok(PromptBundle {
        system,
        user: render(
            BUYER_USER,
            &[
                ("purpose", &ctx.goal),
                ("budget", &ctx.budget.to_string()),
                ("owned", &owned),
                ("history", &history),
                ("search_results", &search_results),
                ("format", SchemaId::BuyerAction.hint()),
            ],
        )?,
        schema: SchemaId::BuyerAction,
    })
}
