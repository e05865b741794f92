//! Completion backends: scripted rules, transcript replay, a remote
//! chat-completions endpoint, and closures for test oracles.

use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use langdrive_core::metrics::GenerationStats;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl ChatRequest {
    pub fn new(user: impl Into<String>) -> Self {
        Self { system: String::new(), user: user.into(), max_tokens: DEFAULT_MAX_TOKENS, temperature: 0.0, stop: Vec::new() }
    }

    /// Full prompt text as hashed and recorded.
    pub fn prompt(&self) -> String {
        if self.system.is_empty() {
            self.user.clone()
        } else {
            format!("{}\n\n{}", self.system, self.user)
        }
    }

    /// Hex SHA-256 of [`ChatRequest::prompt`].
    pub fn hash(&self) -> String {
        hash_prompt(&self.prompt())
    }

    fn check(&self) -> Result<(), GatewayError> {
        if self.user.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn hash_prompt(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub stats: GenerationStats,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("{backend}: transport error: {message}")]
    Transport { backend: String, message: String },
    #[error("{backend}: unexpected response: {message}")]
    BadResponse { backend: String, message: String },
    #[error("replay exhausted: no recorded turn {turn}")]
    ReplayExhausted { turn: usize },
    #[error("replay diverged at turn {turn}: {reason}")]
    ReplayDivergence { turn: usize, reason: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait Backend: Send + Sync {
    fn tag(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError>;
}

pub type Gateway = Arc<dyn Backend>;

pub fn whitespace_tokens(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

fn canned(text: &str, latency: f64) -> Completion {
    Completion { text: text.to_string(), stats: GenerationStats { output_tokens: whitespace_tokens(text), latency } }
}

/// Prompt matcher: every `contains` substring must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRule {
    pub contains: Vec<String>,
    pub response: String,
}

impl ScriptedRule {
    pub fn new(contains: &[&str], response: &str) -> Self {
        Self { contains: contains.iter().map(|s| s.to_string()).collect(), response: response.into() }
    }

    pub fn matches(&self, prompt: &str) -> bool {
        self.contains.iter().all(|c| prompt.contains(c.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedBackend {
    pub rules: Vec<ScriptedRule>,
    pub default: String,
    /// Reported latency in seconds; headless runs use it as simulated time.
    #[serde(default)]
    pub latency: f64,
}

pub const BUNDLED_RULES: &str = include_str!("../data/scripted_rules.json");

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>, default: &str) -> Self {
        Self { rules, default: default.into(), latency: 0.0 }
    }

    pub fn with_latency(mut self, latency: f64) -> Self {
        self.latency = latency;
        self
    }

    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_RULES).expect("bundled rules parse")
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Always answers `text`.
    pub fn constant(text: &str) -> Self {
        Self::new(Vec::new(), text)
    }
}

impl Backend for ScriptedBackend {
    fn tag(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        request.check()?;
        let prompt = request.prompt();
        let text = self.rules.iter().find(|r| r.matches(&prompt)).map(|r| r.response.as_str()).unwrap_or(&self.default);
        Ok(canned(text, self.latency))
    }
}

/// One recorded exchange. A missing hash matches any prompt whose first line
/// equals the recorded prompt's first line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub request_hash: Option<String>,
    #[serde(default)]
    pub prompt: Option<String>,
    pub response: String,
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("").trim()
}

/// Plays recorded turns back strictly in order.
#[derive(Debug)]
pub struct ReplayBackend {
    turns: Vec<Turn>,
    cursor: Mutex<usize>,
    latency: f64,
}

impl ReplayBackend {
    pub fn new(turns: Vec<Turn>) -> Self {
        Self { turns, cursor: Mutex::new(0), latency: 0.0 }
    }

    pub fn with_latency(mut self, latency: f64) -> Self {
        self.latency = latency;
        self
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(Self::new(crate::io::read_jsonl(file)?))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(Self::new(crate::io::read_jsonl(text.as_bytes())?))
    }

    pub fn remaining(&self) -> usize {
        self.turns.len() - *self.cursor.lock().unwrap()
    }
}

impl Backend for ReplayBackend {
    fn tag(&self) -> String {
        "replay".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        request.check()?;
        let mut cur = self.cursor.lock().unwrap();
        let turn = self.turns.get(*cur).ok_or(GatewayError::ReplayExhausted { turn: *cur })?;
        let prompt = request.prompt();
        match (&turn.request_hash, &turn.prompt) {
            (Some(h), _) if *h != hash_prompt(&prompt) => {
                return Err(GatewayError::ReplayDivergence { turn: *cur, reason: "request hash differs".into() });
            }
            (None, Some(p)) if first_line(p) != first_line(&prompt) => {
                return Err(GatewayError::ReplayDivergence {
                    turn: *cur,
                    reason: format!("expected a prompt starting {:?}, got {:?}", first_line(p), first_line(&prompt)),
                });
            }
            _ => {}
        }
        *cur += 1;
        Ok(canned(&turn.response, self.latency))
    }
}

/// Wraps a backend and keeps every exchange as a replayable turn.
pub struct RecordingBackend {
    inner: Gateway,
    turns: Mutex<Vec<Turn>>,
}

impl RecordingBackend {
    pub fn new(inner: Gateway) -> Self {
        Self { inner, turns: Mutex::new(Vec::new()) }
    }

    pub fn turns(&self) -> Vec<Turn> {
        self.turns.lock().unwrap().clone()
    }
}

impl Backend for RecordingBackend {
    fn tag(&self) -> String {
        self.inner.tag()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let out = self.inner.complete(request)?;
        self.turns.lock().unwrap().push(Turn {
            request_hash: Some(request.hash()),
            prompt: Some(request.prompt()),
            response: out.text.clone(),
        });
        Ok(out)
    }
}

type ResponseFn = dyn Fn(&ChatRequest) -> Option<String> + Send + Sync;

/// Answers from a closure; `None` becomes a transport error. Used for
/// oracles that know the right answer for each prompt.
pub struct FnBackend {
    tag: String,
    f: Box<ResponseFn>,
    latency: f64,
}

impl FnBackend {
    pub fn new(tag: &str, f: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        Self { tag: tag.into(), f: Box::new(f), latency: 0.0 }
    }
}

impl Backend for FnBackend {
    fn tag(&self) -> String {
        self.tag.clone()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        request.check()?;
        let text = (self.f)(request).ok_or_else(|| GatewayError::Transport { backend: self.tag.clone(), message: "no answer".into() })?;
        Ok(canned(&text, self.latency))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    30.0
}

impl RemoteConfig {
    /// Fills unset fields from `LANGDRIVE_LLM_URL`, `LANGDRIVE_LLM_MODEL`
    /// and `LANGDRIVE_LLM_KEY`; the environment wins when set.
    pub fn from_env(base: Option<RemoteConfig>) -> Option<RemoteConfig> {
        let env = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let mut cfg = base.unwrap_or(RemoteConfig { url: String::new(), model: String::new(), api_key: None, timeout_s: default_timeout() });
        if let Some(u) = env("LANGDRIVE_LLM_URL") {
            cfg.url = u;
        }
        if let Some(m) = env("LANGDRIVE_LLM_MODEL") {
            cfg.model = m;
        }
        if let Some(k) = env("LANGDRIVE_LLM_KEY") {
            cfg.api_key = Some(k);
        }
        (!cfg.url.is_empty()).then_some(cfg)
    }
}

/// HTTP chat-completions client. One retry after a failed attempt; each
/// attempt is bounded by the timeout.
pub struct RemoteBackend {
    cfg: RemoteConfig,
    client: OnceLock<Result<reqwest::blocking::Client, String>>,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Self {
        Self { cfg, client: OnceLock::new() }
    }

    pub fn body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if !request.system.is_empty() {
            messages.push(serde_json::json!({"role": "system", "content": request.system}));
        }
        messages.push(serde_json::json!({"role": "user", "content": request.user}));
        let mut body = serde_json::json!({
            "model": self.cfg.model,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if !request.stop.is_empty() {
            body["stop"] = serde_json::json!(request.stop);
        }
        body
    }

    fn attempt(&self, client: &reqwest::blocking::Client, body: &serde_json::Value) -> Result<serde_json::Value, GatewayError> {
        let err = |message: String| GatewayError::Transport { backend: self.tag(), message };
        let mut req = client.post(&self.cfg.url).json(body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| err(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(err(format!("HTTP {status}")));
        }
        resp.json().map_err(|e| GatewayError::BadResponse { backend: self.tag(), message: e.to_string() })
    }
}

/// Reads `choices[0].message.content` and the completion token count.
pub fn parse_chat_response(v: &serde_json::Value) -> Option<(String, Option<u32>)> {
    let text = v.get("choices")?.get(0)?.get("message")?.get("content")?.as_str()?.to_string();
    let tokens = v.get("usage").and_then(|u| u.get("completion_tokens")).and_then(|t| t.as_u64()).map(|t| t as u32);
    Some((text, tokens))
}

impl Backend for RemoteBackend {
    fn tag(&self) -> String {
        format!("remote:{}", self.cfg.model)
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        request.check()?;
        let client = self
            .client
            .get_or_init(|| {
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs_f64(self.cfg.timeout_s))
                    .build()
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| GatewayError::Transport { backend: self.tag(), message: e.clone() })?;
        let body = self.body(request);
        let start = Instant::now();
        let value = match self.attempt(client, &body) {
            Ok(v) => v,
            Err(GatewayError::Transport { .. }) => self.attempt(client, &body)?,
            Err(e) => return Err(e),
        };
        let latency = start.elapsed().as_secs_f64();
        let (text, tokens) = parse_chat_response(&value)
            .ok_or_else(|| GatewayError::BadResponse { backend: self.tag(), message: "missing choices[0].message.content".into() })?;
        let output_tokens = tokens.unwrap_or_else(|| whitespace_tokens(&text));
        Ok(Completion { text, stats: GenerationStats { output_tokens, latency } })
    }
}
