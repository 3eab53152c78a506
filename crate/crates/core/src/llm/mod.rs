//! Chat-completion client with a content-addressed record/replay cache.
//!
//! Requests are keyed by a SHA-256 of their canonical JSON form (model,
//! temperature, messages), so the whole pipeline can be replayed offline
//! from a populated [`ReplayStore`].

mod client;
mod store;
mod transport;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use client::{LlmClient, RateLimit, RetryPolicy};
pub use store::{ReplayStore, StoreError};
pub use transport::{
    HttpTransport, OfflineTransport, Transport, TransportFailure, DEFAULT_BASE_URL, ENV_BASE_URL, ENV_KEY,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(rename = "model")]
    pub model_name: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub temperature: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum RequestError {
    #[error("a chat request needs at least one message")]
    NoMessages,
    #[error("temperature must be a finite non-negative number, got {0}")]
    BadTemperature(f64),
}

impl ChatRequest {
    pub fn new(
        model_name: impl Into<String>,
        messages: Vec<ChatMessage>,
        temperature: f64,
    ) -> Result<Self, RequestError> {
        let req = Self {
            model_name: model_name.into(),
            messages,
            temperature,
        };
        req.validate()?;
        Ok(req)
    }

    /// Single user message at temperature 0.
    pub fn single(model_name: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), RequestError> {
        if self.messages.is_empty() {
            return Err(RequestError::NoMessages);
        }
        // Upper bounds differ between endpoints and are left to them.
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(RequestError::BadTemperature(self.temperature));
        }
        Ok(())
    }

    /// Compact JSON with sorted keys; the input to [`cache_key`].
    pub fn canonical_json(&self) -> String {
        let messages: Vec<serde_json::Value> = self
            .messages
            .iter()
            .map(|m| serde_json::json!({ "content": m.content, "role": m.role }))
            .collect();
        // -0.0 and 0.0 must key identically.
        let temperature = if self.temperature == 0.0 {
            0.0
        } else {
            self.temperature
        };
        // serde_json's default map is ordered, so keys come out sorted.
        serde_json::json!({
            "messages": messages,
            "model": self.model_name,
            "temperature": temperature,
        })
        .to_string()
    }
}

/// SHA-256 hex of the canonical request. Depends only on model, temperature
/// and message roles/contents, never on how the request was serialized.
pub fn cache_key(request: &ChatRequest) -> String {
    hex::encode(Sha256::digest(request.canonical_json().as_bytes()))
}

/// Cache key of a request given as JSON in any key order or spacing.
pub fn cache_key_from_json(json: &str) -> Result<String, serde_json::Error> {
    let request: ChatRequest = serde_json::from_str(json)?;
    Ok(cache_key(&request))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatExchange {
    pub request: ChatRequest,
    pub response_text: String,
    pub cache_key: String,
    pub transport: TransportKind,
    pub latency: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Serve from the store when present, otherwise call live and record.
    #[serde(rename = "live")]
    LiveRecord,
    /// Store only; never touches the transport.
    #[serde(rename = "replay")]
    ReplayOnly,
    /// Always call live, never record.
    #[serde(rename = "passthrough")]
    LivePassthrough,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::LiveRecord => "live",
            Mode::ReplayOnly => "replay",
            Mode::LivePassthrough => "passthrough",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::LiveRecord),
            "replay" => Ok(Mode::ReplayOnly),
            "passthrough" => Ok(Mode::LivePassthrough),
            _ => Err(format!("unknown mode {s:?} (live|replay|passthrough)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no recorded response for cache key {0}")]
    CacheMiss(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    TransportError { attempts: u32, message: String },
    #[error("endpoint rejected credentials: {0}")]
    AuthError(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    InvalidRequest(#[from] RequestError),
}
