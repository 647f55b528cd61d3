//! Chat-completion transports: live HTTP, fixture replay, and recording.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::PromptStrategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of a chat-completion POST.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    /// Single user message, no system message.
    pub fn user(model: &str, prompt: &str, temperature: f64) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature,
        }
    }

    /// Hex SHA-256 of the serialized request body.
    pub fn request_hash(&self) -> String {
        let body = serde_json::to_string(self).expect("request serializes");
        hex::encode(Sha256::digest(body.as_bytes()))
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransportError {
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request timed out")]
    Timeout,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no fixture for request {hash} (slot {slot})")]
    MissingFixture { hash: String, slot: u64 },
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, TransportError::RateLimited { .. } | TransportError::Transient(_))
    }
}

/// Sends one chat request and returns the assistant message content.
///
/// `slot` is the query's position within an experiment. Live transports
/// ignore it; replay transports use it to pick the recorded response.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest, slot: u64) -> Result<String, TransportError>;

    /// True when responses are replayed from disk.
    fn is_replay(&self) -> bool {
        false
    }
}

/// Live endpoint speaking the chat-completion JSON protocol with bearer auth.
pub struct HttpTransport {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.to_string(),
            api_key: api_key.to_string(),
            agent,
        }
    }
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn extract_content(body: &str) -> Result<String, TransportError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| TransportError::Protocol(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| TransportError::Protocol("missing choices[0].message.content".into()))
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest, _slot: u64) -> Result<String, TransportError> {
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        let result = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(TransportError::Timeout),
            Err(e) => return Err(TransportError::Transient(e.to_string())),
        };
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|h| h.to_str().ok())
            .and_then(|s| s.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        match status {
            200..=299 => extract_content(&text),
            401 | 403 => Err(TransportError::Auth(format!("HTTP {status}"))),
            408 => Err(TransportError::Timeout),
            429 => Err(TransportError::RateLimited { retry_after }),
            500..=599 => Err(TransportError::Transient(format!("HTTP {status}"))),
            _ => Err(TransportError::Protocol(format!("HTTP {status}: {text}"))),
        }
    }
}

/// One recorded request/response pair (one JSON object per line on disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub request_hash: String,
    pub model: String,
    pub strategy: Option<PromptStrategy>,
    pub temperature: f64,
    pub slot: u64,
    pub response: String,
}

impl FixtureRecord {
    pub fn new(request: &ChatRequest, strategy: Option<PromptStrategy>, slot: u64, response: &str) -> Self {
        Self {
            request_hash: request.request_hash(),
            model: request.model.clone(),
            strategy,
            temperature: request.temperature,
            slot,
            response: response.to_string(),
        }
    }
}

pub fn write_fixtures<W: Write>(records: &[FixtureRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Replays recorded responses keyed by request hash and slot.
///
/// A slot with no exact recording falls back to the recordings for the
/// same request taken in slot order, cycling (`slot % n`).
#[derive(Debug, Default)]
pub struct ReplayTransport {
    by_hash: HashMap<String, BTreeMap<u64, String>>,
}

impl ReplayTransport {
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        let mut by_hash: HashMap<String, BTreeMap<u64, String>> = HashMap::new();
        for r in records {
            by_hash.entry(r.request_hash).or_default().insert(r.slot, r.response);
        }
        Self { by_hash }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let file = File::open(path)?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), i + 1),
                )
            })?;
            records.push(rec);
        }
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.by_hash.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_hash.is_empty()
    }
}

impl ChatTransport for ReplayTransport {
    fn complete(&self, request: &ChatRequest, slot: u64) -> Result<String, TransportError> {
        let hash = request.request_hash();
        let missing = || TransportError::MissingFixture {
            hash: hash.clone(),
            slot,
        };
        let recorded = self.by_hash.get(&hash).ok_or_else(missing)?;
        if let Some(r) = recorded.get(&slot) {
            return Ok(r.clone());
        }
        let idx = (slot % recorded.len() as u64) as usize;
        recorded.values().nth(idx).cloned().ok_or_else(missing)
    }

    fn is_replay(&self) -> bool {
        true
    }
}

/// Forwards to an inner transport and appends every successful exchange
/// to a fixture file.
pub struct RecordingTransport<T> {
    inner: T,
    sink: Mutex<File>,
    strategy_of: HashMap<String, PromptStrategy>,
}

impl<T: ChatTransport> RecordingTransport<T> {
    pub fn new(inner: T, path: &Path) -> std::io::Result<Self> {
        let sink = OpenOptions::new().create(true).append(true).open(path)?;
        let strategy_of = PromptStrategy::ALL
            .into_iter()
            .map(|s| (super::build_prompt(s).to_string(), s))
            .collect();
        Ok(Self {
            inner,
            sink: Mutex::new(sink),
            strategy_of,
        })
    }
}

impl<T: ChatTransport> ChatTransport for RecordingTransport<T> {
    fn complete(&self, request: &ChatRequest, slot: u64) -> Result<String, TransportError> {
        let response = self.inner.complete(request, slot)?;
        let strategy = request
            .messages
            .first()
            .and_then(|m| self.strategy_of.get(&m.content).copied());
        let rec = FixtureRecord::new(request, strategy, slot, &response);
        let mut sink = self.sink.lock().expect("fixture sink poisoned");
        write_fixtures(std::slice::from_ref(&rec), &mut *sink)
            .map_err(|e| TransportError::Protocol(format!("cannot record fixture: {e}")))?;
        Ok(response)
    }
}
