//! Text-generation providers: an OpenAI-compatible HTTP client, a
//! deterministic fixture-backed mock and a persistent response cache.

mod cache;
mod mock;
mod remote;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{cached_complete, CacheEntry, CachedProvider, ResponseCache};
pub use mock::{MockCall, MockFixtureFile, MockProvider, MockRule};
pub use remote::{OpenAiProvider, ProviderConfig};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("no mock fixture for key {key}")]
    MissingFixture { key: String },
    #[error("provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionParams {
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 512,
            temperature: 0.0,
            stop_sequences: Vec::new(),
        }
    }
}

impl CompletionParams {
    pub fn with_max_new_tokens(&self, max_new_tokens: u32) -> Self {
        Self {
            max_new_tokens,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_new_tokens == 0 {
            return Err(LlmError::InvalidRequest(
                "max_new_tokens must be > 0".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }

    fn canonical(&self) -> serde_json::Value {
        json!({
            "max_new_tokens": self.max_new_tokens,
            "temperature": self.temperature,
            "stop": self.stop_sequences,
        })
    }
}

/// A text-generation backend. Implementations must tolerate concurrent calls.
pub trait TextProvider: Send + Sync {
    fn model_id(&self) -> &str;

    /// Raw provider output, before stop-sequence truncation.
    fn generate(&self, prompt: &str, params: &CompletionParams) -> Result<String, LlmError>;

    /// Validated call; the result is cut at the first stop sequence.
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, LlmError> {
        if prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompt is empty".into()));
        }
        params.validate()?;
        let text = self.generate(prompt, params)?;
        Ok(truncate_at_stop(&text, &params.stop_sequences).to_string())
    }
}

impl<T: TextProvider + ?Sized> TextProvider for std::sync::Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn generate(&self, prompt: &str, params: &CompletionParams) -> Result<String, LlmError> {
        (**self).generate(prompt, params)
    }

    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, LlmError> {
        (**self).complete(prompt, params)
    }
}

/// Text before the earliest occurrence of any stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stops: &[String]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min();
    match cut {
        Some(at) => &text[..at],
        None => text,
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Key of a mock fixture: hash of the prompt and decoding parameters.
pub fn fixture_key(prompt: &str, params: &CompletionParams) -> String {
    let canonical = json!({ "prompt": prompt, "params": params.canonical() });
    sha256_hex(canonical.to_string().as_bytes())
}

/// Key of a cache entry: hash of model, prompt and decoding parameters.
pub fn cache_key(model: &str, prompt: &str, params: &CompletionParams) -> String {
    let canonical = json!({ "model": model, "prompt": prompt, "params": params.canonical() });
    sha256_hex(canonical.to_string().as_bytes())
}
