//! OpenAI-compatible HTTP providers for chat completions and embeddings.

use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::llm::{CompletionRequest, CompletionService, TransportError};
use crate::config::{EmbeddingConfig, LlmConfig};
use crate::vector_store::{EmbedError, Embedder, EmbeddingVector};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("credential missing: environment variable {0} is not set")]
    CredentialMissing(String),
}

fn credential(var: &str) -> Result<String, ProviderError> {
    match std::env::var(var) {
        Ok(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(ProviderError::CredentialMissing(var.to_string())),
    }
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::AgentBuilder::new().timeout(timeout).build()
}

fn post(agent: &ureq::Agent, url: &str, key: &str, body: Value) -> Result<Value, TransportError> {
    let response = agent
        .post(url)
        .set("Authorization", &format!("Bearer {key}"))
        .send_json(body);
    match response {
        Ok(r) => r
            .into_json::<Value>()
            .map_err(|e| TransportError::retryable(format!("unreadable response body: {e}"))),
        Err(ureq::Error::Status(code, r)) => {
            let detail = r.into_string().unwrap_or_default();
            let message = format!("HTTP {code}: {detail}");
            if code == 429 || code >= 500 {
                Err(TransportError::retryable(message))
            } else {
                Err(TransportError::fatal(message))
            }
        }
        Err(e) => Err(TransportError::retryable(e.to_string())),
    }
}

pub struct HttpCompletionService {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    key: String,
}

impl HttpCompletionService {
    pub fn from_config(cfg: &LlmConfig) -> Result<Self, ProviderError> {
        Ok(HttpCompletionService {
            agent: agent(Duration::from_secs(cfg.timeout_secs)),
            endpoint: cfg.endpoint.clone(),
            model: cfg.model.clone(),
            key: credential(&cfg.api_key_env)?,
        })
    }
}

impl CompletionService for HttpCompletionService {
    fn complete(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "response_format": {"type": "json_object"},
        });
        let reply = post(&self.agent, &self.endpoint, &self.key, body)?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError::retryable("completion reply has no message content"))
    }

    fn id(&self) -> String {
        format!("http:{}", self.endpoint)
    }
}

pub struct HttpEmbedder {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    key: String,
    dim: usize,
}

impl HttpEmbedder {
    pub fn from_config(cfg: &EmbeddingConfig, timeout: Duration) -> Result<Self, ProviderError> {
        Ok(HttpEmbedder {
            agent: agent(timeout),
            endpoint: cfg.endpoint.clone(),
            model: cfg.model.clone(),
            key: credential(&cfg.api_key_env)?,
            dim: cfg.dim,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let body = json!({"model": self.model, "input": text, "dimensions": self.dim});
        let reply = post(&self.agent, &self.endpoint, &self.key, body)
            .map_err(|e| EmbedError::ProviderUnavailable(e.message))?;
        let values: Vec<f64> = reply
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::ProviderUnavailable("embedding reply has no data".into()))?
            .iter()
            .map(|x| x.as_f64().unwrap_or(f64::NAN))
            .collect();
        if values.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        EmbeddingVector::new(values)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("http:{}:{}", self.model, self.dim)
    }
}
