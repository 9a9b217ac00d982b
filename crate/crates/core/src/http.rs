//! Blocking JSON POST with retry on transport failures and 5xx responses.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;

#[derive(Debug, Clone, Copy)]
pub(crate) struct RetryPolicy {
    pub retries: u32,
    pub initial_backoff: Duration,
}

#[derive(Debug)]
pub(crate) enum HttpFailure {
    Transport { attempts: u32, message: String },
    Status { code: u16, body: String },
}

pub(crate) fn build_client(timeout: Duration) -> Result<Client, String> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| e.to_string())
}

/// POSTs `body` and returns the response text of the first 2xx reply.
/// 4xx replies are returned immediately; they are never retried.
pub(crate) fn post_json(
    client: &Client,
    url: &str,
    bearer: Option<&str>,
    body: &serde_json::Value,
    policy: RetryPolicy,
) -> Result<String, HttpFailure> {
    let mut backoff = policy.initial_backoff;
    let mut attempt = 0;
    loop {
        attempt += 1;
        let mut request = client.post(url).json(body);
        if let Some(token) = bearer {
            request = request.bearer_auth(token);
        }
        let failure = match request.send() {
            Ok(response) => {
                let status = response.status();
                let text = response.text().unwrap_or_default();
                if status.is_success() {
                    return Ok(text);
                }
                let failure = HttpFailure::Status {
                    code: status.as_u16(),
                    body: text,
                };
                if !status.is_server_error() {
                    return Err(failure);
                }
                failure
            }
            Err(err) => HttpFailure::Transport {
                attempts: attempt,
                message: err.to_string(),
            },
        };
        if attempt > policy.retries {
            return Err(match failure {
                HttpFailure::Transport { message, .. } => HttpFailure::Transport {
                    attempts: attempt,
                    message,
                },
                status => status,
            });
        }
        log::warn!("POST {url} failed (attempt {attempt}), retrying in {backoff:?}");
        thread::sleep(backoff);
        backoff = backoff.saturating_mul(2);
    }
}
