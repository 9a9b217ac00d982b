use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{fixture_key, CompletionParams, LlmError, TextProvider};

/// Substring rule consulted when no exact fixture matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    /// Further substrings that must all be present too.
    #[serde(default)]
    pub and_contains: Vec<String>,
    #[serde(default)]
    pub response: Option<String>,
    /// When set, matching prompts fail with a 503 carrying this message.
    #[serde(default)]
    pub error: Option<String>,
}

impl MockRule {
    pub fn matches(&self, prompt: &str) -> bool {
        prompt.contains(&self.contains)
            && self
                .and_contains
                .iter()
                .all(|s| prompt.contains(s.as_str()))
    }
}

/// On-disk fixture set for the mock provider.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockFixtureFile {
    pub model: Option<String>,
    /// `fixture_key(prompt, params)` -> response.
    pub fixtures: HashMap<String, String>,
    pub rules: Vec<MockRule>,
    pub default: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub key: String,
    pub prompt: String,
    pub params: CompletionParams,
}

/// Deterministic provider for tests and offline runs.
///
/// Lookup order: exact fixture by [`fixture_key`], then the first matching
/// rule, then the default response. Every call is logged.
#[derive(Debug, Default)]
pub struct MockProvider {
    model: String,
    fixtures: HashMap<String, String>,
    rules: Vec<MockRule>,
    default_response: Option<String>,
    calls: Mutex<Vec<MockCall>>,
}

impl MockProvider {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            ..Self::default()
        }
    }

    pub fn from_fixture_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let file: MockFixtureFile = serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::from_fixtures(file))
    }

    pub fn from_fixtures(file: MockFixtureFile) -> Self {
        Self {
            model: file.model.unwrap_or_else(|| "mock".into()),
            fixtures: file.fixtures,
            rules: file.rules,
            default_response: file.default,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn insert(&mut self, prompt: &str, params: &CompletionParams, response: impl Into<String>) {
        self.fixtures
            .insert(fixture_key(prompt, params), response.into());
    }

    pub fn with_rule(mut self, contains: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            contains: contains.into(),
            and_contains: Vec::new(),
            response: Some(response.into()),
            error: None,
        });
        self
    }

    /// Rule matching prompts that contain every one of `needles`.
    pub fn with_rule_all(mut self, needles: &[&str], response: impl Into<String>) -> Self {
        let (first, rest) = needles.split_first().expect("at least one needle");
        self.rules.push(MockRule {
            contains: first.to_string(),
            and_contains: rest.iter().map(|s| s.to_string()).collect(),
            response: Some(response.into()),
            error: None,
        });
        self
    }

    pub fn with_failure(mut self, contains: impl Into<String>, message: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            contains: contains.into(),
            and_contains: Vec::new(),
            response: None,
            error: Some(message.into()),
        });
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().expect("call log").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("call log").len()
    }

    pub fn reset_calls(&self) {
        self.calls.lock().expect("call log").clear();
    }
}

impl TextProvider for MockProvider {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn generate(&self, prompt: &str, params: &CompletionParams) -> Result<String, LlmError> {
        let key = fixture_key(prompt, params);
        self.calls.lock().expect("call log").push(MockCall {
            key: key.clone(),
            prompt: prompt.to_string(),
            params: params.clone(),
        });
        if let Some(text) = self.fixtures.get(&key) {
            return Ok(text.clone());
        }
        if let Some(rule) = self.rules.iter().find(|r| r.matches(prompt)) {
            if let Some(message) = &rule.error {
                return Err(LlmError::Status {
                    code: 503,
                    body: message.clone(),
                });
            }
            if let Some(text) = &rule.response {
                return Ok(text.clone());
            }
        }
        self.default_response
            .clone()
            .ok_or(LlmError::MissingFixture { key })
    }
}
