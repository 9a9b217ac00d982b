//! Remote providers against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use medsocot_core::entailment::NliConfig;
use medsocot_core::{
    CompletionParams, EntailmentLabel, EntailmentProvider, LlmError, OpenAiProvider,
    ProviderConfig, RemoteEntailment, TextProvider,
};
use serde_json::Value;

struct Stub {
    url: String,
    bodies: Arc<Mutex<Vec<Value>>>,
}

/// Serves one scripted `(status, body)` reply per connection, in order.
fn serve(script: Vec<(u16, &'static str)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = bodies.clone();
    thread::spawn(move || {
        for (status, reply) in script {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            seen.lock()
                .unwrap()
                .push(serde_json::from_slice(&body).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    Stub { url, bodies }
}

fn provider(url: &str, retries: u32) -> OpenAiProvider {
    OpenAiProvider::new(ProviderConfig {
        endpoint: format!("{url}/v1"),
        model: "stub-7b".into(),
        api_key_env: None,
        timeout_secs: 5,
        retries,
        backoff_ms: 1,
    })
    .unwrap()
}

const OK: &str =
    r#"{"choices":[{"message":{"role":"assistant","content":"Hello there. ### END tail"}}]}"#;

#[test]
fn request_carries_model_and_zero_temperature() {
    let stub = serve(vec![(200, OK)]);
    let params = CompletionParams {
        stop_sequences: vec!["### END".into()],
        ..CompletionParams::default()
    };
    let text = provider(&stub.url, 0).complete("Why?", &params).unwrap();
    assert_eq!(text, "Hello there. ");
    let body = stub.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "stub-7b");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 512);
    assert_eq!(body["messages"][0]["content"], "Why?");
    assert_eq!(body["stop"][0], "### END");
}

#[test]
fn server_errors_are_retried() {
    let stub = serve(vec![(503, "{}"), (500, "{}"), (200, OK)]);
    let text = provider(&stub.url, 3)
        .generate("Why?", &CompletionParams::default())
        .unwrap();
    assert!(text.starts_with("Hello"));
    assert_eq!(stub.bodies.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = serve(vec![(400, r#"{"error":"bad"}"#), (200, OK)]);
    let err = provider(&stub.url, 3)
        .generate("Why?", &CompletionParams::default())
        .unwrap_err();
    assert!(matches!(err, LlmError::Status { code: 400, .. }), "{err:?}");
    assert_eq!(stub.bodies.lock().unwrap().len(), 1);
}

#[test]
fn retries_run_out() {
    let stub = serve(vec![(502, "{}"), (502, "{}")]);
    let err = provider(&stub.url, 1)
        .generate("Why?", &CompletionParams::default())
        .unwrap_err();
    assert!(matches!(err, LlmError::Status { code: 502, .. }));
    assert_eq!(stub.bodies.lock().unwrap().len(), 2);
}

#[test]
fn malformed_reply_is_a_protocol_error() {
    let stub = serve(vec![(200, r#"{"choices":[]}"#)]);
    let err = provider(&stub.url, 0)
        .generate("Why?", &CompletionParams::default())
        .unwrap_err();
    assert!(matches!(err, LlmError::Protocol(_)));
}

#[test]
fn nli_service_round_trip() {
    let stub = serve(vec![
        (200, r#"{"label":"contradiction","score":0.9}"#),
        (503, "{}"),
        (200, r#"{"label":"entailment"}"#),
    ]);
    let nli = RemoteEntailment::new(NliConfig {
        endpoint: format!("{}/nli", stub.url),
        api_key_env: None,
        timeout_secs: 5,
        retries: 2,
        backoff_ms: 1,
    })
    .unwrap();
    let (label, score) = nli
        .judge("The drug is unsafe.", "The drug is safe.")
        .unwrap();
    assert_eq!((label, score), (EntailmentLabel::Contradicts, 0.9));
    let (label, score) = nli.judge("The drug is safe.", "The drug is safe.").unwrap();
    assert_eq!((label, score), (EntailmentLabel::Entails, 1.0));
    let bodies = stub.bodies.lock().unwrap();
    assert_eq!(bodies[0]["premise"], "The drug is unsafe.");
    assert_eq!(bodies[0]["hypothesis"], "The drug is safe.");
}
