//! HTTP providers speaking the chat-completion / embeddings JSON protocol.

use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    Embedder, EmbeddingVector, GenerationRequest, Generator, ProviderConfig, ProviderError,
};

enum Failure {
    Retryable(String),
    Fatal(ProviderError),
}

/// POSTs `body` to the configured endpoint, retrying transport errors,
/// 429 and 5xx responses with exponential backoff.
pub(crate) fn post_json(cfg: &ProviderConfig, body: &Value) -> Result<Value, ProviderError> {
    cfg.validate()?;
    let agent = ureq::AgentBuilder::new().timeout(cfg.timeout()).build();
    let attempts = cfg.retry_count + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let delay = cfg
                .backoff_base_ms
                .saturating_mul(1u64 << (attempt - 1).min(16));
            thread::sleep(Duration::from_millis(delay));
        }
        match post_once(&agent, cfg, body) {
            Ok(v) => return Ok(v),
            Err(Failure::Fatal(e)) => return Err(e),
            Err(Failure::Retryable(msg)) => last = msg,
        }
    }
    Err(ProviderError::Unavailable {
        attempts,
        message: last,
    })
}

fn post_once(agent: &ureq::Agent, cfg: &ProviderConfig, body: &Value) -> Result<Value, Failure> {
    let mut req = agent
        .post(&cfg.endpoint_url)
        .set("Content-Type", "application/json");
    if let Some(key) = cfg.api_key() {
        req = req.set("Authorization", &format!("Bearer {key}"));
    }
    match req.send_json(body.clone()) {
        Ok(resp) => resp
            .into_json::<Value>()
            .map_err(|e| Failure::Retryable(format!("unreadable response body: {e}"))),
        Err(ureq::Error::Status(code, resp)) => {
            let text = resp.into_string().unwrap_or_default();
            let msg = format!(
                "HTTP {code}: {}",
                text.chars().take(200).collect::<String>()
            );
            if code == 429 || code >= 500 {
                Err(Failure::Retryable(msg))
            } else {
                Err(Failure::Fatal(ProviderError::Unavailable {
                    attempts: 1,
                    message: msg,
                }))
            }
        }
        Err(ureq::Error::Transport(t)) => Err(Failure::Retryable(t.to_string())),
    }
}

/// Chat-completion generator: one system and one user message; the answer
/// is the first choice's message content.
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    config: ProviderConfig,
}

impl RemoteGenerator {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        Ok(RemoteGenerator { config })
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        req.validate()?;
        let body = json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": req.user_text},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let resp = post_json(&self.config, &body)?;
        let text = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .unwrap_or_default();
        if text.trim().is_empty() {
            return Err(ProviderError::ResponseEmpty);
        }
        Ok(text.to_string())
    }
}

/// Embeddings endpoint client (`{"model","input":[...]}` ->
/// `{"data":[{"embedding":[...],"index":i}]}`). Returned vectors are
/// re-normalized to unit length.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    config: ProviderConfig,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(config: ProviderConfig, dim: usize) -> Result<Self, ProviderError> {
        config.validate()?;
        if dim == 0 {
            return Err(ProviderError::InvalidConfig(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(RemoteEmbedder { config, dim })
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut out = self.embed_batch(&[text])?;
        Ok(out.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(ProviderError::EmptyInput);
        }
        let body = json!({"model": self.config.model_name, "input": texts});
        let resp = post_json(&self.config, &body)?;
        let data = resp.get("data").and_then(Value::as_array).ok_or_else(|| {
            ProviderError::Unavailable {
                attempts: 1,
                message: "response has no data array".into(),
            }
        })?;
        if data.len() != texts.len() {
            return Err(ProviderError::Unavailable {
                attempts: 1,
                message: format!("expected {} embeddings, got {}", texts.len(), data.len()),
            });
        }
        let mut indexed = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let idx = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(pos, |i| i as usize);
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_f64).collect())
                .unwrap_or_default();
            if values.len() != self.dim {
                return Err(ProviderError::Unavailable {
                    attempts: 1,
                    message: format!("expected dimension {}, got {}", self.dim, values.len()),
                });
            }
            let v = EmbeddingVector::normalized(values).ok_or(ProviderError::ResponseEmpty)?;
            indexed.push((idx, v));
        }
        indexed.sort_by_key(|(i, _)| *i);
        Ok(indexed.into_iter().map(|(_, v)| v).collect())
    }
}
