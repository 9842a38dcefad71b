//! Chat-completion client shared by every LLM-backed agent.
//!
//! Wire format: `POST <base_url>/chat/completions` with
//! `{model, messages: [{role, content}], temperature}` and a bearer token.
//! The reply's final message must hold one JSON object or array. When the
//! text contains fenced blocks (```` ``` ````, optionally tagged `json`) the
//! last one is parsed; otherwise the span from the first `{` or `[` to the
//! last matching closer is.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const TOKEN_ENV: &str = "CGRA_LLM_TOKEN";
pub const URL_ENV: &str = "CGRA_LLM_URL";
pub const MODEL_ENV: &str = "CGRA_LLM_MODEL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("LLM_TRANSPORT: {0}")]
    Transport(String),
    #[error("LLM_STATUS {status}: {body}")]
    Status { status: u16, body: String },
    #[error("LLM_BAD_RESPONSE: {0}")]
    BadResponse(String),
    #[error("LLM_NO_JSON: reply holds no parseable JSON object or array")]
    NoJson,
}

impl LlmError {
    fn retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    #[serde(default = "d_url")]
    pub base_url: String,
    #[serde(default = "d_model")]
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "d_token_env")]
    pub token_env: String,
    #[serde(default = "d_timeout")]
    pub timeout_s: u64,
    #[serde(default = "d_retries")]
    pub max_retries: u32,
    #[serde(default = "d_temperature")]
    pub temperature: f64,
    /// Concurrent requests allowed per stage.
    #[serde(default = "d_in_flight")]
    pub max_in_flight: usize,
    /// Most recent judge lessons quoted in selection prompts.
    #[serde(default = "d_lessons")]
    pub lesson_window: usize,
}

fn d_url() -> String {
    "http://127.0.0.1:8000/v1".into()
}
fn d_model() -> String {
    "default".into()
}
fn d_token_env() -> String {
    TOKEN_ENV.into()
}
fn d_timeout() -> u64 {
    60
}
fn d_retries() -> u32 {
    2
}
fn d_temperature() -> f64 {
    0.2
}
fn d_in_flight() -> usize {
    4
}
fn d_lessons() -> usize {
    8
}

impl Default for LlmConfig {
    fn default() -> Self {
        serde_json::from_value(json!({})).expect("all fields defaulted")
    }
}

impl LlmConfig {
    /// Applies `CGRA_LLM_URL` and `CGRA_LLM_MODEL` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(u) = std::env::var(URL_ENV) {
            self.base_url = u;
        }
        if let Ok(m) = std::env::var(MODEL_ENV) {
            self.model = m;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

/// Sends one chat request and returns the assistant's text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, model: &str, messages: &[ChatMessage], temperature: f64) -> Result<String, LlmError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    token: Option<String>,
}

impl HttpTransport {
    pub fn new(cfg: &LlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_s.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let token = std::env::var(&cfg.token_env).ok().filter(|t| !t.is_empty());
        if token.is_none() {
            warn!("{} is not set; sending requests without a bearer token", cfg.token_env);
        }
        HttpTransport {
            agent,
            endpoint: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            token,
        }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, model: &str, messages: &[ChatMessage], temperature: f64) -> Result<String, LlmError> {
        let body = json!({ "model": model, "messages": messages, "temperature": temperature }).to_string();
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Status { status, body: text.chars().take(400).collect() });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))
    }
}

/// Replays canned replies in order; records every prompt it receives.
#[derive(Default)]
pub struct ScriptedTransport {
    replies: Mutex<VecDeque<Result<String, LlmError>>>,
    pub seen: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedTransport {
    pub fn new(replies: impl IntoIterator<Item = Result<String, LlmError>>) -> Self {
        ScriptedTransport { replies: Mutex::new(replies.into_iter().collect()), seen: Mutex::default() }
    }
}

impl ChatTransport for ScriptedTransport {
    fn complete(&self, _: &str, messages: &[ChatMessage], _: f64) -> Result<String, LlmError> {
        self.seen.lock().unwrap().push(messages.to_vec());
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(LlmError::Transport("script exhausted".into())))
    }
}

#[derive(Clone)]
pub struct LlmClient {
    pub config: LlmConfig,
    transport: Arc<dyn ChatTransport>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("config", &self.config).finish_non_exhaustive()
    }
}

impl LlmClient {
    pub fn new(config: LlmConfig, transport: Arc<dyn ChatTransport>) -> Self {
        LlmClient { config, transport }
    }

    pub fn http(config: LlmConfig) -> Self {
        let t = Arc::new(HttpTransport::new(&config));
        LlmClient::new(config, t)
    }

    /// Sends the prompt with retries and returns the extracted JSON value.
    pub fn ask_json(&self, system: &str, user: &str) -> Result<Value, LlmError> {
        let messages = [ChatMessage::system(system), ChatMessage::user(user)];
        let mut attempt = 0;
        loop {
            match self.transport.complete(&self.config.model, &messages, self.config.temperature) {
                Ok(text) => return extract_json(&text).ok_or(LlmError::NoJson),
                Err(e) if e.retryable() && attempt < self.config.max_retries => {
                    attempt += 1;
                    warn!("LLM request failed ({e}); retry {attempt}/{}", self.config.max_retries);
                    std::thread::sleep(Duration::from_millis(200 << attempt.min(4)));
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Pulls the JSON payload out of a model reply.
pub fn extract_json(text: &str) -> Option<Value> {
    let parse = |s: &str| serde_json::from_str::<Value>(s.trim()).ok().filter(|v| v.is_object() || v.is_array());

    let parts: Vec<&str> = text.split("```").collect();
    if parts.len() >= 3 {
        // odd-indexed parts sit inside fences
        let last = parts.iter().skip(1).step_by(2).take((parts.len() - 1) / 2).last()?;
        let body = last.strip_prefix("json").or_else(|| last.strip_prefix("JSON")).unwrap_or(last);
        return parse(body);
    }
    let start = text.find(['{', '['])?;
    let close = if text[start..].starts_with('{') { '}' } else { ']' };
    let end = text.rfind(close)?;
    (end > start).then(|| parse(&text[start..=end])).flatten()
}

/// Substitutes `{{name}}` placeholders.
pub fn render(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}
