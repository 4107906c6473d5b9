//! Structured text-completion client and the policies built on it.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{BuyerPromptVariant, LlmConfig};
use crate::domain::{validate_metadata, BuyerAction, DatasetId, DatasetMetadata, Money, UpdateFrequency};
use crate::rng::StreamRng;

use super::prompts::{self, PromptBundle, SchemaId};
use super::transcript::{TranscriptRecord, TranscriptSink};
use super::{
    BuyerContext, BuyerPolicy, DataGenerator, GoalGenerator, GoalRequest, MetadataRequest, PolicyError,
    SellerContext, SellerDecision, SellerPolicy,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system: String,
    pub user: String,
    pub schema: SchemaId,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct TransportError {
    pub message: String,
    pub retryable: bool,
}

impl TransportError {
    pub fn retryable(message: impl Into<String>) -> Self {
        TransportError {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        TransportError {
            message: message.into(),
            retryable: false,
        }
    }
}

/// A text-completion backend: HTTP, replay, or a test double.
pub trait CompletionService: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, TransportError>;
    fn id(&self) -> String;
}

/// Sends prompts, parses the single JSON object in each reply and re-asks on
/// malformed output up to `retry_limit` times.
pub struct StructuredClient {
    service: Arc<dyn CompletionService>,
    retry_limit: u32,
    backoff: Duration,
    transcript: Option<Arc<dyn TranscriptSink>>,
}

impl StructuredClient {
    pub fn new(service: Arc<dyn CompletionService>, cfg: &LlmConfig) -> Self {
        StructuredClient {
            service,
            retry_limit: cfg.retry_limit,
            backoff: Duration::from_millis(cfg.backoff_ms),
            transcript: None,
        }
    }

    pub fn with_transcript(mut self, sink: Arc<dyn TranscriptSink>) -> Self {
        self.transcript = Some(sink);
        self
    }

    pub fn service_id(&self) -> String {
        self.service.id()
    }

    fn send(&self, req: &CompletionRequest, attempt: u32) -> Result<String, PolicyError> {
        let mut delay = self.backoff;
        let mut tries = 0;
        loop {
            let result = self.service.complete(req);
            if let Some(sink) = &self.transcript {
                sink.record(&TranscriptRecord {
                    system: req.system.clone(),
                    user: req.user.clone(),
                    schema: req.schema,
                    attempt,
                    response: result.as_ref().ok().cloned(),
                    error: result.as_ref().err().map(|e| e.message.clone()),
                });
            }
            match result {
                Ok(text) => return Ok(text),
                Err(e) if e.retryable && tries < self.retry_limit => {
                    log::warn!("completion transport error, retrying in {delay:?}: {e}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    tries += 1;
                }
                Err(e) => return Err(PolicyError::Transport(e.message)),
            }
        }
    }

    /// Runs `bundle` until `parse` accepts a reply. Each re-ask appends the
    /// rejection reason to the user prompt.
    pub fn complete<T>(
        &self,
        bundle: &PromptBundle,
        parse: impl Fn(&Value) -> Result<T, String>,
    ) -> Result<T, PolicyError> {
        let attempts = self.retry_limit + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            let user = if attempt == 0 {
                bundle.user.clone()
            } else {
                format!(
                    "{}\n\n# Previous response rejected\n{last_error}\nRespond again with a single valid JSON object.",
                    bundle.user
                )
            };
            let req = CompletionRequest {
                system: bundle.system.clone(),
                user,
                schema: bundle.schema,
            };
            let text = self.send(&req, attempt)?;
            match extract_json(&text).and_then(|v| parse(&v)) {
                Ok(value) => return Ok(value),
                Err(reason) => {
                    log::warn!("rejected {:?} response (attempt {}): {reason}", bundle.schema, attempt + 1);
                    last_error = reason;
                }
            }
        }
        Err(PolicyError::GenerationFailed { attempts, last_error })
    }
}

/// Finds the JSON object in a reply, tolerating code fences and surrounding prose.
pub fn extract_json(text: &str) -> Result<Value, String> {
    let trimmed = text.trim();
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(trimmed) {
        return Ok(v);
    }
    let start = trimmed.find('{').ok_or("response contains no JSON object")?;
    let end = trimmed.rfind('}').ok_or("response contains no JSON object")?;
    if end < start {
        return Err("response contains no JSON object".into());
    }
    match serde_json::from_str::<Value>(&trimmed[start..=end]) {
        Ok(v @ Value::Object(_)) => Ok(v),
        Ok(_) => Err("response is not a JSON object".into()),
        Err(e) => Err(format!("malformed JSON: {e}")),
    }
}

fn get_str<'a>(v: &'a Value, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| v.get(*k).and_then(Value::as_str))
}

fn get_money(v: &Value, key: &str) -> Result<Money, String> {
    let raw = v.get(key).ok_or_else(|| format!("missing {key}"))?;
    let number = match raw {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().trim_start_matches('$').replace(',', "").parse::<f64>().ok(),
        _ => None,
    }
    .ok_or_else(|| format!("{key} is not a number"))?;
    Money::from_f64(number).ok_or_else(|| format!("{key} is not a finite number"))
}

fn get_list(v: &Value, key: &str) -> Result<Vec<String>, String> {
    match v.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|i| {
                i.as_str()
                    .map(|s| s.trim().to_string())
                    .ok_or_else(|| format!("{key} must contain strings"))
            })
            .collect(),
        Some(Value::String(s)) => Ok(s.split(',').map(|p| p.trim().to_string()).collect()),
        _ => Err(format!("missing {key}")),
    }
}

fn parse_dataset_ref(v: &Value) -> Result<DatasetId, String> {
    match v.get("dataset_id") {
        Some(Value::String(s)) => s.trim().parse().map_err(|e| format!("bad dataset_id: {e}")),
        Some(Value::Number(n)) => n
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .map(DatasetId)
            .ok_or_else(|| "bad dataset_id".to_string()),
        _ => Err("missing dataset_id".into()),
    }
}

/// Parses and validates generated metadata. Tags are normalized so the
/// requested field is the only configured-field tag.
pub fn parse_metadata(v: &Value, req: &MetadataRequest<'_>) -> Result<DatasetMetadata, String> {
    let data_name = get_str(v, &["data_name"]).ok_or("missing data_name")?.trim().to_string();
    let description = get_str(v, &["description"]).unwrap_or_default().trim().to_string();
    let columns = get_list(v, "columns")?;
    let mut tags: Vec<String> = get_list(v, "tags")
        .unwrap_or_default()
        .into_iter()
        .filter(|t| !t.is_empty() && !req.fields.contains(t))
        .collect();
    tags.insert(0, req.field.to_string());
    let data_price = get_money(v, "data_price")?;
    let update_frequency: UpdateFrequency = get_str(v, &["update_frequency"])
        .ok_or("missing update_frequency")?
        .parse()?;
    let metadata = DatasetMetadata {
        data_name,
        description,
        columns,
        tags,
        data_price,
        update_frequency,
    };
    let violations = validate_metadata(&metadata, req.existing_names, req.fields);
    if violations.is_empty() {
        Ok(metadata)
    } else {
        let reasons: Vec<String> = violations.iter().map(ToString::to_string).collect();
        Err(format!("invalid metadata for {:?}: {}", metadata.data_name, reasons.join(", ")))
    }
}

pub fn parse_goal(v: &Value) -> Result<String, String> {
    let goal = get_str(v, &["analysis_purpose", "purpose", "goal"]).ok_or("missing analysis_purpose")?;
    let goal = goal.trim();
    if goal.is_empty() {
        Err("analysis_purpose is empty".into())
    } else {
        Ok(goal.to_string())
    }
}

pub fn parse_seller_decision(v: &Value) -> Result<SellerDecision, String> {
    let action = get_str(v, &["action"]).ok_or("missing action")?;
    Ok(match action.trim().to_ascii_lowercase().as_str() {
        "update_data" => SellerDecision::UpdateData {
            dataset_id: parse_dataset_ref(v)?,
        },
        "change_price" => SellerDecision::ChangePrice {
            dataset_id: parse_dataset_ref(v)?,
            new_price: get_money(v, "new_price")?,
        },
        "provide_data" => SellerDecision::ProvideData { field: None },
        "do_nothing" => SellerDecision::DoNothing,
        "exit_market" => SellerDecision::ExitMarket,
        other => return Err(format!("unknown seller action {other:?}")),
    })
}

pub fn parse_buyer_action(v: &Value) -> Result<BuyerAction, String> {
    let action = get_str(v, &["action"]).ok_or("missing action")?;
    Ok(match action.trim().to_ascii_lowercase().as_str() {
        "plan" => BuyerAction::Plan {
            text: get_str(v, &["plan", "text", "reasoning"]).unwrap_or_default().trim().to_string(),
        },
        "search" => {
            let query = get_str(v, &["query"]).unwrap_or_default().trim();
            if query.is_empty() {
                return Err("search requires a non-empty query".into());
            }
            BuyerAction::Search { query: query.to_string() }
        }
        "buy" => BuyerAction::Buy {
            dataset_id: parse_dataset_ref(v)?,
        },
        "analyze" => BuyerAction::Analyze,
        "do_nothing" => BuyerAction::DoNothing,
        "exit_market" => BuyerAction::ExitMarket,
        other => return Err(format!("unknown buyer action {other:?}")),
    })
}

/// Replaces decisions that touch datasets the seller does not own, or carry
/// a non-positive price, with `DoNothing`.
pub fn sanitize_seller_decision(decision: SellerDecision, ctx: &SellerContext) -> SellerDecision {
    let ok = match &decision {
        SellerDecision::UpdateData { dataset_id } => ctx.owns(*dataset_id),
        SellerDecision::ChangePrice { dataset_id, new_price } => ctx.owns(*dataset_id) && new_price.is_positive(),
        _ => true,
    };
    if ok {
        decision
    } else {
        log::warn!("seller {} proposed invalid {decision:?}; doing nothing", ctx.seller_id);
        SellerDecision::DoNothing
    }
}

fn fail_safe<T>(result: Result<T, PolicyError>, fallback: T, who: &str) -> Result<T, PolicyError> {
    match result {
        Err(e) if !e.is_fatal() => {
            log::warn!("{who}: {e}; doing nothing");
            Ok(fallback)
        }
        other => other,
    }
}

pub struct LlmDataGenerator {
    client: Arc<StructuredClient>,
}

impl LlmDataGenerator {
    pub fn new(client: Arc<StructuredClient>) -> Self {
        LlmDataGenerator { client }
    }
}

impl DataGenerator for LlmDataGenerator {
    fn generate(&self, req: &MetadataRequest<'_>, _rng: &mut StreamRng) -> Result<DatasetMetadata, PolicyError> {
        if !req.fields.is_empty() && !req.fields.iter().any(|f| f == req.field) {
            return Err(PolicyError::UnknownField(req.field.to_string()));
        }
        let bundle = prompts::metadata_prompt(req.field, req.existing_names)?;
        self.client.complete(&bundle, |v| parse_metadata(v, req))
    }
}

pub struct LlmGoalGenerator {
    client: Arc<StructuredClient>,
}

impl LlmGoalGenerator {
    pub fn new(client: Arc<StructuredClient>) -> Self {
        LlmGoalGenerator { client }
    }
}

impl GoalGenerator for LlmGoalGenerator {
    fn generate(&self, req: &GoalRequest<'_>, _rng: &mut StreamRng) -> Result<String, PolicyError> {
        let bundle = prompts::goal_prompt(req.field, req.trends)?;
        self.client.complete(&bundle, parse_goal)
    }
}

pub struct LlmSellerPolicy {
    client: Arc<StructuredClient>,
}

impl LlmSellerPolicy {
    pub fn new(client: Arc<StructuredClient>) -> Self {
        LlmSellerPolicy { client }
    }
}

impl SellerPolicy for LlmSellerPolicy {
    fn decide(&self, ctx: &SellerContext, _rng: &mut StreamRng) -> Result<SellerDecision, PolicyError> {
        let bundle = prompts::seller_prompt(ctx)?;
        let decision = fail_safe(
            self.client.complete(&bundle, parse_seller_decision),
            SellerDecision::DoNothing,
            "seller policy",
        )?;
        Ok(sanitize_seller_decision(decision, ctx))
    }
}

pub struct LlmBuyerPolicy {
    client: Arc<StructuredClient>,
    variant: BuyerPromptVariant,
}

impl LlmBuyerPolicy {
    pub fn new(client: Arc<StructuredClient>, variant: BuyerPromptVariant) -> Self {
        LlmBuyerPolicy { client, variant }
    }
}

impl BuyerPolicy for LlmBuyerPolicy {
    fn decide(&self, ctx: &BuyerContext, _rng: &mut StreamRng) -> Result<BuyerAction, PolicyError> {
        let bundle = prompts::buyer_prompt(ctx, self.variant)?;
        fail_safe(
            self.client.complete(&bundle, parse_buyer_action),
            BuyerAction::DoNothing,
            "buyer policy",
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SellerId;
    use crate::policies::transcript::{MemoryTranscript, ReplayService};
    use std::collections::BTreeSet;
    use std::sync::Mutex;

    /// Returns scripted replies in order.
    struct Scripted {
        replies: Mutex<Vec<Result<String, TransportError>>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<&str, TransportError>>) -> Arc<Self> {
            let mut replies: Vec<_> = replies.into_iter().map(|r| r.map(str::to_string)).collect();
            replies.reverse();
            Arc::new(Scripted {
                replies: Mutex::new(replies),
            })
        }
    }

    impl CompletionService for Scripted {
        fn complete(&self, _req: &CompletionRequest) -> Result<String, TransportError> {
            self.replies
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Err(TransportError::fatal("script exhausted")))
        }

        fn id(&self) -> String {
            "scripted".into()
        }
    }

    fn client(service: Arc<dyn CompletionService>) -> StructuredClient {
        let cfg = LlmConfig {
            backoff_ms: 0,
            ..LlmConfig::default()
        };
        StructuredClient::new(service, &cfg)
    }

    fn goal_bundle() -> PromptBundle {
        prompts::goal_prompt("finance", None).unwrap()
    }

    #[test]
    fn malformed_twice_then_valid_succeeds_on_third_attempt() {
        let transcript = Arc::new(MemoryTranscript::default());
        let c = client(Scripted::new(vec![
            Ok("not json"),
            Ok("{\"analysis_purpose\": "),
            Ok("```json\n{\"analysis_purpose\": \"Forecast bond yields\"}\n```"),
        ]))
        .with_transcript(transcript.clone());
        assert_eq!(c.complete(&goal_bundle(), parse_goal).unwrap(), "Forecast bond yields");
        let records = transcript.records.lock().unwrap();
        assert_eq!(records.iter().map(|r| r.attempt).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(records[1].user.contains("# Previous response rejected"));
    }

    #[test]
    fn four_malformed_responses_fail_generation() {
        let c = client(Scripted::new(vec![Ok("x"), Ok("y"), Ok("{}"), Ok("[1]")]));
        match c.complete(&goal_bundle(), parse_goal) {
            Err(PolicyError::GenerationFailed { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transport_errors_retry_then_abort() {
        let c = client(Scripted::new(vec![
            Err(TransportError::retryable("503")),
            Ok("{\"analysis_purpose\": \"ok\"}"),
        ]));
        assert_eq!(c.complete(&goal_bundle(), parse_goal).unwrap(), "ok");
        let c = client(Scripted::new(vec![Err(TransportError::fatal("401"))]));
        let err = c.complete(&goal_bundle(), parse_goal).unwrap_err();
        assert!(err.is_fatal());
    }

    #[test]
    fn duplicate_name_is_re_asked_then_accepted() {
        let existing: BTreeSet<String> = ["Nikkei225Daily".to_string()].into();
        let fields: Vec<String> = crate::config::DEFAULT_FIELDS.iter().map(|f| f.to_string()).collect();
        let req = MetadataRequest {
            field: "finance",
            existing_names: &existing,
            fields: &fields,
            serial: 0,
            step: 0,
        };
        let dup = r#"{"data_name": "Nikkei225Daily", "description": "d", "columns": ["date","close"], "tags": ["finance"], "data_price": 120, "update_frequency": "high"}"#;
        let fresh = r#"{"data_name": "Nikkei225Weekly", "description": "d", "columns": "date,close", "tags": ["stocks", "marketing"], "data_price": "1,200.5", "update_frequency": "High"}"#;
        let transcript = Arc::new(MemoryTranscript::default());
        let c = Arc::new(client(Scripted::new(vec![Ok(dup), Ok(fresh)])).with_transcript(transcript.clone()));
        let m = LlmDataGenerator::new(c)
            .generate(&req, &mut crate::rng::stream(0, "x"))
            .unwrap();
        assert_eq!(m.data_name, "Nikkei225Weekly");
        assert_eq!(m.tags, vec!["finance".to_string(), "stocks".to_string()]);
        assert_eq!(m.data_price, Money::from_cents(120_050));
        assert_eq!(m.columns, vec!["date".to_string(), "close".to_string()]);
        let records = transcript.records.lock().unwrap();
        assert_eq!(records.len(), 2);
        assert!(records[1].user.contains("duplicate name"));
    }

    fn seller_ctx() -> SellerContext {
        SellerContext {
            seller_id: SellerId(1),
            step: 2,
            revenue: Money::ZERO,
            listings: vec![crate::policies::OwnedListing {
                listing: crate::domain::ListingSnapshot {
                    dataset_id: DatasetId(3),
                    seller_id: SellerId(1),
                    data_name: "n".into(),
                    description: "d".into(),
                    columns: vec!["c".into()],
                    tags: vec!["sports".into()],
                    price: Money::from_units(10),
                    update_frequency: UpdateFrequency::Low,
                    version: 1,
                },
                field: "sports".into(),
                created_step: 0,
                last_updated_step: 0,
                sales_count: 0,
                consecutive_unsold_steps: 2,
            }],
            sales: vec![],
            action_history: vec![],
        }
    }

    #[test]
    fn seller_action_on_foreign_dataset_becomes_do_nothing() {
        let c = Arc::new(client(Scripted::new(vec![Ok(
            r#"{"action": "change_price", "dataset_id": "d9", "new_price": 5}"#,
        )])));
        let policy = LlmSellerPolicy::new(c);
        let d = policy.decide(&seller_ctx(), &mut crate::rng::stream(0, "x")).unwrap();
        assert_eq!(d, SellerDecision::DoNothing);

        let c = Arc::new(client(Scripted::new(vec![Ok(
            r#"{"action": "change_price", "dataset_id": "d3", "new_price": 7.5, "reasoning": "slow sales"}"#,
        )])));
        let d = LlmSellerPolicy::new(c).decide(&seller_ctx(), &mut crate::rng::stream(0, "x")).unwrap();
        assert_eq!(
            d,
            SellerDecision::ChangePrice {
                dataset_id: DatasetId(3),
                new_price: Money::from_cents(750)
            }
        );
    }

    #[test]
    fn replayed_transcript_reproduces_the_recorded_action() {
        let ctx = seller_ctx();
        let bundle = prompts::seller_prompt(&ctx).unwrap();
        let record = TranscriptRecord {
            system: bundle.system.clone(),
            user: bundle.user.clone(),
            schema: bundle.schema,
            attempt: 0,
            response: Some(r#"{"action": "update_data", "dataset_id": "d3"}"#.into()),
            error: None,
        };
        let c = Arc::new(client(Arc::new(ReplayService::new(vec![record]))));
        let d = LlmSellerPolicy::new(c).decide(&ctx, &mut crate::rng::stream(0, "x")).unwrap();
        assert_eq!(d, SellerDecision::UpdateData { dataset_id: DatasetId(3) });
    }

    #[test]
    fn buyer_parse_covers_every_action() {
        let parse = |s: &str| parse_buyer_action(&extract_json(s).unwrap());
        assert_eq!(parse(r#"{"action":"plan","plan":"p"}"#).unwrap(), BuyerAction::Plan { text: "p".into() });
        assert_eq!(
            parse(r#"{"action":"search","query":"q"}"#).unwrap(),
            BuyerAction::Search { query: "q".into() }
        );
        assert!(parse(r#"{"action":"search","query":"  "}"#).is_err());
        assert_eq!(
            parse(r#"{"action":"buy","dataset_id":"d12"}"#).unwrap(),
            BuyerAction::Buy { dataset_id: DatasetId(12) }
        );
        assert_eq!(parse(r#"{"action":"Analyze"}"#).unwrap(), BuyerAction::Analyze);
        assert_eq!(parse(r#"{"action":"do_nothing"}"#).unwrap(), BuyerAction::DoNothing);
        assert_eq!(parse(r#"{"action":"exit_market"}"#).unwrap(), BuyerAction::ExitMarket);
        assert!(parse(r#"{"action":"dance"}"#).is_err());
    }
}
