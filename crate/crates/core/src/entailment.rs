//! Entailment judges over (answer, statement) pairs.
//!
//! [`MockEntailment`] is rule-based test scaffolding, not an NLI model.
//! [`RemoteEntailment`] talks to an HTTP classifier.

use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataset::QaPair;
use crate::http::{self, HttpFailure, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntailmentLabel {
    Entails,
    Contradicts,
    Neutral,
}

impl EntailmentLabel {
    /// Accepts the usual NLI label spellings.
    pub fn parse(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "entailment" | "entails" | "entail" => Some(Self::Entails),
            "contradiction" | "contradicts" | "contradict" => Some(Self::Contradicts),
            "neutral" => Some(Self::Neutral),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatementClass {
    /// Must have.
    MH,
    /// Nice to have.
    NH,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentJudgment {
    pub statement: String,
    pub class: StatementClass,
    pub label: EntailmentLabel,
    pub confidence: f64,
}

#[derive(Debug, Error)]
pub enum EntailmentError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("NLI endpoint returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed NLI response: {0}")]
    Protocol(String),
    #[error("judging statement {statement:?}: {source}")]
    Statement {
        statement: String,
        #[source]
        source: Box<EntailmentError>,
    },
    #[error("NLI configuration: {0}")]
    Config(String),
}

pub trait EntailmentProvider: Send + Sync {
    /// Label and confidence in [0, 1] for `answer` as premise and
    /// `statement` as hypothesis.
    fn judge(
        &self,
        answer: &str,
        statement: &str,
    ) -> Result<(EntailmentLabel, f64), EntailmentError>;
}

/// One judgment per statement, must-haves first, in dataset order. An empty
/// answer entails and contradicts nothing, so it is judged all Neutral
/// without consulting the provider.
pub fn judge_all(
    answer: &str,
    pair: &QaPair,
    provider: &dyn EntailmentProvider,
) -> Result<Vec<EntailmentJudgment>, EntailmentError> {
    let statements = pair
        .must_have
        .iter()
        .map(|s| (s, StatementClass::MH))
        .chain(pair.nice_to_have.iter().map(|s| (s, StatementClass::NH)));
    let mut judgments = Vec::with_capacity(pair.statement_count());
    for (statement, class) in statements {
        let (label, confidence) = if answer.trim().is_empty() {
            (EntailmentLabel::Neutral, 1.0)
        } else {
            provider
                .judge(answer, statement)
                .map_err(|e| EntailmentError::Statement {
                    statement: statement.clone(),
                    source: Box::new(e),
                })?
        };
        judgments.push(EntailmentJudgment {
            statement: statement.clone(),
            class,
            label,
            confidence,
        });
    }
    Ok(judgments)
}

// ---------------------------------------------------------------------------
// mock

const NEGATION_CUES: [&str; 3] = ["not", "no", "never"];

/// Lowercase, punctuation removed, whitespace collapsed.
pub fn normalize(text: &str) -> String {
    text.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Tokens with negation cues removed, each tagged with the number of cues
/// seen directly before it (a `cannot` counts as `can` plus one cue).
fn strip_negation(tokens: &[&str]) -> Vec<(String, usize)> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut pending = 0;
    for token in tokens {
        if NEGATION_CUES.contains(token) {
            pending += 1;
        } else if *token == "cannot" {
            out.push(("can".to_string(), pending));
            pending = 1;
        } else {
            out.push((token.to_string(), pending));
            pending = 0;
        }
    }
    out
}

/// Rule-based judge used for offline tests:
/// a normalised statement found in the normalised answer entails; a match
/// after removing negation cues with different negation parity contradicts;
/// anything else is neutral. Confidence is always 1.0.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEntailment;

impl MockEntailment {
    pub fn label(answer: &str, statement: &str) -> EntailmentLabel {
        let answer = normalize(answer);
        let statement = normalize(statement);
        if statement.is_empty() || answer.is_empty() {
            return EntailmentLabel::Neutral;
        }
        if format!(" {answer} ").contains(&format!(" {statement} ")) {
            return EntailmentLabel::Entails;
        }
        let answer_tokens: Vec<&str> = answer.split(' ').collect();
        let statement_tokens: Vec<&str> = statement.split(' ').collect();
        let a = strip_negation(&answer_tokens);
        let s = strip_negation(&statement_tokens);
        if s.is_empty() || s.len() > a.len() {
            return EntailmentLabel::Neutral;
        }
        let polarity = |span: &[(String, usize)]| span.iter().map(|(_, n)| n).sum::<usize>() % 2;
        let s_polarity = polarity(&s);
        for window in a.windows(s.len()) {
            let same_words = window.iter().zip(&s).all(|((x, _), (y, _))| x == y);
            if same_words && polarity(window) != s_polarity {
                return EntailmentLabel::Contradicts;
            }
        }
        EntailmentLabel::Neutral
    }
}

impl EntailmentProvider for MockEntailment {
    fn judge(
        &self,
        answer: &str,
        statement: &str,
    ) -> Result<(EntailmentLabel, f64), EntailmentError> {
        Ok((Self::label(answer, statement), 1.0))
    }
}

// ---------------------------------------------------------------------------
// remote

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NliConfig {
    pub endpoint: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for NliConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8080/nli".into(),
            api_key_env: None,
            timeout_secs: 60,
            retries: 3,
            backoff_ms: 500,
        }
    }
}

/// Client for an HTTP NLI service: POST `{premise, hypothesis}`, reply
/// `{label, score}`.
pub struct RemoteEntailment {
    config: NliConfig,
    client: Client,
    token: Option<String>,
}

impl RemoteEntailment {
    pub fn new(config: NliConfig) -> Result<Self, EntailmentError> {
        if config.timeout_secs == 0 {
            return Err(EntailmentError::Config("timeout_secs must be > 0".into()));
        }
        if config.endpoint.trim().is_empty() {
            return Err(EntailmentError::Config("endpoint is empty".into()));
        }
        let client = http::build_client(Duration::from_secs(config.timeout_secs))
            .map_err(EntailmentError::Config)?;
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
}

fn parse_nli_reply(text: &str) -> Result<(EntailmentLabel, f64), EntailmentError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| EntailmentError::Protocol(e.to_string()))?;
    let label = value["label"]
        .as_str()
        .and_then(EntailmentLabel::parse)
        .ok_or_else(|| EntailmentError::Protocol(format!("unknown label in {text}")))?;
    let score = match &value["score"] {
        Value::Null => 1.0,
        v => v
            .as_f64()
            .ok_or_else(|| EntailmentError::Protocol("score is not a number".into()))?,
    };
    if !(0.0..=1.0).contains(&score) {
        return Err(EntailmentError::Protocol(format!(
            "score {score} outside [0, 1]"
        )));
    }
    Ok((label, score))
}

impl EntailmentProvider for RemoteEntailment {
    fn judge(
        &self,
        answer: &str,
        statement: &str,
    ) -> Result<(EntailmentLabel, f64), EntailmentError> {
        if answer.trim().is_empty() || statement.trim().is_empty() {
            return Err(EntailmentError::InvalidRequest(
                "premise and hypothesis must be non-empty".into(),
            ));
        }
        let policy = RetryPolicy {
            retries: self.config.retries,
            initial_backoff: Duration::from_millis(self.config.backoff_ms),
        };
        let body = json!({ "premise": answer, "hypothesis": statement });
        let text = http::post_json(
            &self.client,
            &self.config.endpoint,
            self.token.as_deref(),
            &body,
            policy,
        )
        .map_err(|failure| match failure {
            HttpFailure::Transport { attempts, message } => {
                EntailmentError::Transport { attempts, message }
            }
            HttpFailure::Status { code, body } => EntailmentError::Status { code, body },
        })?;
        parse_nli_reply(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use EntailmentLabel::*;

    fn pair(mh: &[&str], nh: &[&str]) -> QaPair {
        QaPair {
            id: "p".into(),
            dataset: "d".into(),
            question: "q".into(),
            reference_answer: "r".into(),
            must_have: mh.iter().map(|s| s.to_string()).collect(),
            nice_to_have: nh.iter().map(|s| s.to_string()).collect(),
            ambiguous: None,
        }
    }

    #[test]
    fn mock_rules() {
        assert_eq!(
            MockEntailment::label("Indeed, X is safe for adults.", "x is safe"),
            Entails
        );
        assert_eq!(
            MockEntailment::label("X is not safe", "X is safe"),
            Contradicts
        );
        assert_eq!(
            MockEntailment::label("X is safe", "X is not safe"),
            Contradicts
        );
        assert_eq!(
            MockEntailment::label("X should be used daily", "X should not be used daily"),
            Contradicts
        );
        assert_eq!(
            MockEntailment::label("You cannot take it", "You can take it"),
            Contradicts
        );
        assert_eq!(
            MockEntailment::label("The sky is blue", "Aspirin thins blood"),
            Neutral
        );
        // double negation keeps polarity
        assert_eq!(
            MockEntailment::label("X is not never safe", "X is safe"),
            Neutral
        );
    }

    #[test]
    fn substring_respects_word_boundaries() {
        assert_eq!(MockEntailment::label("unknown risk", "known risk"), Neutral);
        assert_eq!(
            MockEntailment::label("risk does not exist", "risk does exist"),
            Contradicts
        );
    }

    #[test]
    fn judge_all_length_and_order() {
        let p = pair(&["a b", "c d"], &["e", "f", "g"]);
        let judgments = judge_all("a b and c d", &p, &MockEntailment).unwrap();
        assert_eq!(judgments.len(), 5);
        assert_eq!(judgments[0].class, StatementClass::MH);
        assert_eq!(judgments[4].class, StatementClass::NH);
        assert_eq!(judgments[0].label, Entails);
        assert_eq!(judgments[1].label, Entails);
    }

    #[test]
    fn empty_answer_is_all_neutral() {
        let p = pair(&["a"], &["b"]);
        let judgments = judge_all("  ", &p, &MockEntailment).unwrap();
        assert!(judgments.iter().all(|j| j.label == Neutral));
    }

    struct Failing;
    impl EntailmentProvider for Failing {
        fn judge(&self, _: &str, _: &str) -> Result<(EntailmentLabel, f64), EntailmentError> {
            Err(EntailmentError::Protocol("bad".into()))
        }
    }

    #[test]
    fn first_error_aborts_with_statement_context() {
        let err = judge_all("answer", &pair(&["s1"], &[]), &Failing).unwrap_err();
        assert!(err.to_string().contains("s1"));
    }

    #[test]
    fn nli_reply_parsing() {
        assert_eq!(
            parse_nli_reply(r#"{"label":"entailment","score":0.9}"#).unwrap(),
            (Entails, 0.9)
        );
        assert_eq!(
            parse_nli_reply(r#"{"label":"CONTRADICTION"}"#).unwrap(),
            (Contradicts, 1.0)
        );
        assert!(parse_nli_reply(r#"{"label":"maybe"}"#).is_err());
        assert!(parse_nli_reply(r#"{"label":"neutral","score":1.5}"#).is_err());
    }
}
