use std::time::Duration;

use serde_json::Value;

use super::ChatRequest;

pub const ENV_KEY: &str = "SAST_TRIAGE_LLM_KEY";
pub const ENV_BASE_URL: &str = "SAST_TRIAGE_LLM_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    /// Network errors, 429 and 5xx.
    Retryable(String),
    /// 401 / 403.
    Auth(String),
    /// Anything retrying will not fix.
    Fatal(String),
}

/// Sends one chat request and returns the first choice's content.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFailure>;
}

/// A transport that refuses every call. Used for replay-only runs so that
/// any attempted network use is an error.
#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineTransport;

impl Transport for OfflineTransport {
    fn send(&self, _request: &ChatRequest) -> Result<String, TransportFailure> {
        Err(TransportFailure::Fatal(
            "network access is disabled for this run".into(),
        ))
    }
}

/// Blocking HTTP client for chat-completions style endpoints.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: api_key.filter(|k| !k.is_empty()),
        })
    }

    /// Base URL from `SAST_TRIAGE_LLM_BASE_URL` (else the public default),
    /// bearer token from `SAST_TRIAGE_LLM_KEY` unless `api_key` is given.
    pub fn from_env(api_key: Option<String>, timeout: Duration) -> Result<Self, String> {
        let base = std::env::var(ENV_BASE_URL).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        let key = api_key.or_else(|| std::env::var(ENV_KEY).ok());
        Self::new(&base, key, timeout)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn first_choice_content(body: &str) -> Result<String, TransportFailure> {
    let json: Value = serde_json::from_str(body)
        .map_err(|e| TransportFailure::Fatal(format!("response is not JSON: {e}")))?;
    json.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TransportFailure::Fatal("response has no choices[0].message.content".into()))
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFailure> {
        let body = serde_json::json!({
            "model": request.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| TransportFailure::Retryable(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| TransportFailure::Retryable(e.to_string()))?;
        match status.as_u16() {
            200..=299 => first_choice_content(&text),
            401 | 403 => Err(TransportFailure::Auth(format!("HTTP {status}"))),
            429 | 500..=599 => Err(TransportFailure::Retryable(format!("HTTP {status}"))),
            _ => Err(TransportFailure::Fatal(format!("HTTP {status}: {text}"))),
        }
    }
}
