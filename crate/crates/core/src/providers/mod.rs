//! Model provider interfaces.
//!
//! Three capabilities are abstracted: structured chat completion, image
//! generation and embedding. [`mock::MockProviders`] implements all three
//! deterministically; [`http::HttpProviders`] talks to an
//! OpenAI-compatible endpoint.

pub mod http;
pub mod mock;
pub mod schema;

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::prompts::RenderedPrompt;
pub use schema::{SchemaId, StructuredSchema};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("provider output violated schema {schema}: {detail}")]
    SchemaViolation { schema: String, detail: String },
    #[error("invalid provider input: {0}")]
    InvalidInput(String),
}

pub trait ChatModel: Send + Sync {
    /// Returns the raw JSON payload for `prompt`. Validation and retries are
    /// handled by [`complete_structured`].
    fn complete(&self, prompt: &RenderedPrompt, schema: &StructuredSchema) -> Result<Value, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedImage {
    pub bytes: Vec<u8>,
    pub media_type: String,
    pub width: u32,
    pub height: u32,
}

pub trait ImageModel: Send + Sync {
    /// `nonce` varies the sample for the same prompt; providers without
    /// explicit seeding may ignore it.
    fn generate(&self, prompt: &str, width: u32, height: u32, nonce: u64) -> Result<GeneratedImage, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn dims(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
    fn embed_image(&self, bytes: &[u8]) -> Result<EmbeddingVector, ProviderError>;
}

/// The provider set used by one engine.
#[derive(Clone)]
pub struct Providers {
    pub chat: Arc<dyn ChatModel>,
    pub images: Arc<dyn ImageModel>,
    pub embedder: Arc<dyn Embedder>,
}

impl Providers {
    pub fn from_mock(mock: Arc<mock::MockProviders>) -> Self {
        Self { chat: mock.clone(), images: mock.clone(), embedder: mock }
    }
}

/// A unit-norm feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit L2 norm. Fails on empty, zero or
    /// non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self, ProviderError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(ProviderError::InvalidInput("embedding must be finite with a positive norm".into()));
        }
        Ok(Self { values: values.into_iter().map(|v| v / norm).collect() })
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Retry knobs for [`complete_structured`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Extra attempts after a transport error.
    pub transport_retries: u32,
    /// Delay before the first transport retry; doubles on each further one.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { transport_retries: 1, backoff_ms: 250 }
    }
}

/// A validated payload and the number of model calls it took.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredOutput {
    pub payload: Value,
    pub attempts: u32,
}

pub const CORRECTIVE_SUFFIX: &str =
    "Your previous response did not match the required output structure. Respond again with output that matches it exactly.";

fn with_correction(prompt: &RenderedPrompt, detail: &str) -> RenderedPrompt {
    let mut corrected = prompt.clone();
    corrected.text = format!("{}\n\n{CORRECTIVE_SUFFIX}\nProblem: {detail}", prompt.text);
    corrected
}

fn call_with_backoff(
    chat: &dyn ChatModel,
    prompt: &RenderedPrompt,
    schema: &StructuredSchema,
    policy: RetryPolicy,
    attempts: &mut u32,
) -> Result<Value, ProviderError> {
    let mut delay = policy.backoff_ms;
    let mut retries_left = policy.transport_retries;
    loop {
        *attempts += 1;
        match chat.complete(prompt, schema) {
            Err(ProviderError::Transport(msg)) if retries_left > 0 => {
                tracing::warn!(%msg, "transport error, retrying");
                retries_left -= 1;
                if delay > 0 {
                    thread::sleep(Duration::from_millis(delay));
                }
                delay = delay.saturating_mul(2);
            }
            other => return other,
        }
    }
}

/// Calls `chat` and validates the payload. A schema violation earns one
/// retry with a corrective suffix; transport errors are retried per
/// `policy`. Never returns a payload that fails validation.
pub fn complete_structured(
    chat: &dyn ChatModel,
    prompt: &RenderedPrompt,
    schema: &StructuredSchema,
    policy: RetryPolicy,
) -> Result<StructuredOutput, (ProviderError, u32)> {
    let mut attempts = 0;
    let first = call_with_backoff(chat, prompt, schema, policy, &mut attempts).map_err(|e| (e, attempts))?;
    let detail = match schema.validate(&first) {
        Ok(()) => return Ok(StructuredOutput { payload: first, attempts }),
        Err(detail) => detail,
    };
    let corrected = with_correction(prompt, &detail);
    let second = call_with_backoff(chat, &corrected, schema, policy, &mut attempts).map_err(|e| (e, attempts))?;
    match schema.validate(&second) {
        Ok(()) => Ok(StructuredOutput { payload: second, attempts }),
        Err(detail) => Err((ProviderError::SchemaViolation { schema: schema.id.name().into(), detail }, attempts)),
    }
}
