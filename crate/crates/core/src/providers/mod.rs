//! Embedding and text-generation provider abstractions.
//!
//! Everything downstream talks to [`Embedder`] and [`Generator`] trait
//! objects. The [`mock`] module has deterministic offline implementations
//! used by tests and by `--mock` runs; [`remote`] speaks chat-completion
//! style HTTP JSON.

pub mod mock;
pub mod remote;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{prompt_hash, MockEmbedder, MockGenerator, TableEmbedder};
pub use remote::{RemoteEmbedder, RemoteGenerator};

/// Default embedding dimension for providers that let the caller choose.
pub const DEFAULT_EMBEDDING_DIM: usize = 384;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("provider unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("provider returned an empty response")]
    ResponseEmpty,
    #[error("invalid provider request: {0}")]
    InvalidRequest(String),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
}

/// A unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values` to unit length. Returns `None` for an empty or
    /// zero (or non-finite) vector.
    pub fn normalized(mut values: Vec<f64>) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || norm == 0.0 || !norm.is_finite() {
            return None;
        }
        for v in &mut values {
            *v /= norm;
        }
        Some(EmbeddingVector(values))
    }

    /// Wraps values that are already unit-norm. Used by deserialization
    /// paths that have validated the norm themselves.
    pub fn from_unit(values: Vec<f64>) -> Self {
        EmbeddingVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity. Both vectors are unit-norm, so this is the dot
    /// product clamped into [-1, 1] against rounding.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim(), "embedding dimension mismatch");
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        dot.clamp(-1.0, 1.0)
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;

    /// Batched form of [`Embedder::embed`]. Any failure aborts the batch.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GenerationRequest {
    pub fn new(
        system_text: impl Into<String>,
        user_text: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Self, ProviderError> {
        let req = GenerationRequest {
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature,
            max_tokens,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.user_text.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("user_text is empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError>;
}

pub const MAX_RETRY_COUNT: u32 = 5;

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_secs() -> f64 {
    60.0
}

/// Connection settings for a remote provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    #[serde(default)]
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env_var: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub retry_count: u32,
    /// First retry delay; doubles on every subsequent attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

impl ProviderConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        ProviderConfig {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            api_key_env_var: String::new(),
            timeout_secs: default_timeout_secs(),
            retry_count: 0,
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.endpoint_url.trim().is_empty() {
            return Err(ProviderError::InvalidConfig("endpoint_url is empty".into()));
        }
        if self.retry_count > MAX_RETRY_COUNT {
            return Err(ProviderError::InvalidConfig(format!(
                "retry_count must be <= {MAX_RETRY_COUNT}, got {}",
                self.retry_count
            )));
        }
        if !self.timeout_secs.is_finite() || self.timeout_secs <= 0.0 {
            return Err(ProviderError::InvalidConfig(
                "timeout must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Bearer token read from the configured environment variable, if any.
    pub fn api_key(&self) -> Option<String> {
        if self.api_key_env_var.is_empty() {
            return None;
        }
        std::env::var(&self.api_key_env_var)
            .ok()
            .filter(|k| !k.is_empty())
    }
}
