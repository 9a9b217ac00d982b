use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionParams, LlmError, TextProvider};
use crate::http::{self, HttpFailure, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    /// Base URL such as `http://localhost:8000/v1`, or the full
    /// `.../chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; unset means no auth.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 120,
            retries: 3,
            backoff_ms: 1000,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.timeout_secs == 0 {
            return Err(LlmError::Config("timeout_secs must be > 0".into()));
        }
        if self.endpoint.trim().is_empty() {
            return Err(LlmError::Config("endpoint is empty".into()));
        }
        if self.model.trim().is_empty() {
            return Err(LlmError::Config("model is empty".into()));
        }
        Ok(())
    }

    pub fn chat_completions_url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Chat-completions client for OpenAI-compatible servers.
pub struct OpenAiProvider {
    config: ProviderConfig,
    client: Client,
    token: Option<String>,
}

impl OpenAiProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let client = http::build_client(Duration::from_secs(config.timeout_secs))
            .map_err(LlmError::Config)?;
        let token = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty());
        Ok(Self {
            config,
            client,
            token,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn request_body(&self, prompt: &str, params: &CompletionParams) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": params.temperature,
            "max_tokens": params.max_new_tokens,
        });
        if !params.stop_sequences.is_empty() {
            body["stop"] = json!(params.stop_sequences);
        }
        body
    }
}

impl TextProvider for OpenAiProvider {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn generate(&self, prompt: &str, params: &CompletionParams) -> Result<String, LlmError> {
        let policy = RetryPolicy {
            retries: self.config.retries,
            initial_backoff: Duration::from_millis(self.config.backoff_ms),
        };
        let text = http::post_json(
            &self.client,
            &self.config.chat_completions_url(),
            self.token.as_deref(),
            &self.request_body(prompt, params),
            policy,
        )
        .map_err(|failure| match failure {
            HttpFailure::Transport { attempts, message } => {
                LlmError::Transport { attempts, message }
            }
            HttpFailure::Status { code, body } => LlmError::Status { code, body },
        })?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| LlmError::Protocol(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Protocol("missing choices[0].message.content".into()))
    }
}
