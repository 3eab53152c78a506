use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use sast_triage::llm::{HttpTransport, LlmError, RetryPolicy, TransportKind};
use sast_triage::{ChatRequest, LlmClient, Mode, ReplayStore};

struct Captured {
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves `script` in order, one response per connection.
fn stub(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in script {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream);
            let mut len = 0usize;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut raw = vec![0; len];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Captured {
                authorization,
                body: serde_json::from_slice(&raw).unwrap(),
            });
            let mut stream = reader.into_inner();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn client(url: &str, store: &std::path::Path, mode: Mode) -> LlmClient {
    let transport = HttpTransport::new(url, Some("test-key".into()), Duration::from_secs(5)).unwrap();
    LlmClient::new(Arc::new(transport), ReplayStore::new(store), mode).with_retry(RetryPolicy {
        max_attempts: 3,
        initial_backoff: Duration::from_millis(1),
    })
}

fn request() -> ChatRequest {
    ChatRequest::single("gpt-3.5-turbo", "python code: ```x = 1```")
}

#[test]
fn live_call_is_recorded_then_replayed() {
    let dir = tempfile::tempdir().unwrap();
    let (url, seen) = stub(vec![(200, completion("None"))]);

    let live = client(&url, dir.path(), Mode::LiveRecord)
        .complete(&request())
        .unwrap();
    assert_eq!(live.response_text, "None");
    assert_eq!(live.transport, TransportKind::Live);
    {
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 1);
        assert_eq!(seen[0].authorization.as_deref(), Some("Bearer test-key"));
        assert_eq!(seen[0].body["model"], "gpt-3.5-turbo");
        assert_eq!(seen[0].body["temperature"], 0.0);
        assert_eq!(seen[0].body["messages"][0]["role"], "user");
    }

    let replay = client(&url, dir.path(), Mode::ReplayOnly)
        .complete(&request())
        .unwrap();
    assert_eq!(replay.response_text, "None");
    assert_eq!(replay.transport, TransportKind::Replay);
    assert_eq!(replay.cache_key, live.cache_key);
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn rejected_key_is_an_auth_error_without_retry() {
    let dir = tempfile::tempdir().unwrap();
    let (url, seen) = stub(vec![(401, "{}".into()), (200, completion("None"))]);
    let err = client(&url, dir.path(), Mode::LiveRecord)
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, LlmError::AuthError(_)), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
    assert!(!ReplayStore::new(dir.path()).contains(&live_key()));
}

fn live_key() -> String {
    sast_triage::llm::cache_key(&request())
}

#[test]
fn server_errors_are_retried() {
    let dir = tempfile::tempdir().unwrap();
    let (url, seen) = stub(vec![
        (500, "{}".into()),
        (503, "{}".into()),
        (200, completion("[]")),
    ]);
    let out = client(&url, dir.path(), Mode::LiveRecord)
        .complete(&request())
        .unwrap();
    assert_eq!(out.response_text, "[]");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_give_up_after_the_attempt_budget() {
    let dir = tempfile::tempdir().unwrap();
    let (url, _) = stub(vec![(429, "{}".into()); 3]);
    let err = client(&url, dir.path(), Mode::LiveRecord)
        .complete(&request())
        .unwrap_err();
    assert!(
        matches!(err, LlmError::TransportError { attempts: 3, .. }),
        "{err}"
    );
}

#[test]
fn replay_miss_never_reaches_the_server() {
    let dir = tempfile::tempdir().unwrap();
    let err = client("http://127.0.0.1:9/v1", dir.path(), Mode::ReplayOnly)
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, LlmError::CacheMiss(_)));
}
