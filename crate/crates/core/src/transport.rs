//! Chat-completions transport shared by remote agents and remote predictors.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Sends one conversation and returns the assistant's reply text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, TransportError>;
}

impl<T: ChatTransport + ?Sized> ChatTransport for &T {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, TransportError> {
        (**self).complete(messages, temperature)
    }
}

impl<T: ChatTransport + ?Sized> ChatTransport for Box<T> {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, TransportError> {
        (**self).complete(messages, temperature)
    }
}

/// Counting semaphore bounding requests in flight.
#[derive(Debug)]
pub struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore { free: Mutex::new(permits.max(1)), cv: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

pub struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            model: "default".into(),
            api_key: None,
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
        }
    }

    /// Reads the bearer credential from `var` when set and non-empty.
    pub fn with_key_from_env(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok().filter(|k| !k.is_empty());
        self
    }
}

/// POSTs `{"model", "messages", "temperature"}` and reads
/// `choices[0].message.content` from the reply.
pub struct HttpTransport {
    cfg: HttpConfig,
    agent: ureq::Agent,
    permits: Semaphore,
}

impl HttpTransport {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let permits = Semaphore::new(cfg.max_in_flight);
        HttpTransport { cfg, agent, permits }
    }
}

#[derive(Deserialize)]
struct CompletionReply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

impl ChatTransport for HttpTransport {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, TransportError> {
        let _permit = self.permits.acquire();
        let body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": temperature,
        });
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| TransportError(format!("request to {} failed: {e}", self.cfg.endpoint)))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(TransportError(format!("HTTP {status}: {}", text.trim())));
        }
        let reply: CompletionReply = resp
            .body_mut()
            .read_json()
            .map_err(|e| TransportError(format!("unreadable completion body: {e}")))?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError("completion has no message content".into()))
    }
}
