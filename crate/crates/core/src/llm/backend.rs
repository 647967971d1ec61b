// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{code_blocks, Prompt};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub token: String,
    pub prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub prompt_hash: String,
    pub model_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probs: Option<Vec<TokenProb>>,
    pub decode: DecodeConfig,
    #[serde(default)]
    pub truncated: bool,
    /// Set when the backend gave up; `text` is empty then.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Generation {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 4, base_delay_ms: 500, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    /// Base URL of an OpenAI-compatible API; `CTXBUG_API_BASE` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_concurrency() -> usize {
    4
}

impl ModelConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        ModelConfig {
            model_id: model_id.into(),
            endpoint: None,
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
            concurrency: default_concurrency(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config(format!("{}: temperature must be >= 0", self.model_id)));
        }
        if self.concurrency == 0 {
            return Err(Error::Config(format!("{}: concurrency must be >= 1", self.model_id)));
        }
        Ok(())
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig { temperature: self.temperature, max_tokens: self.max_output_tokens }
    }
}

/// Raw backend answer.
#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub text: String,
    pub token_probs: Option<Vec<TokenProb>>,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying (rate limits, server errors, transport failures).
    Transient(String),
    Permanent(String),
}

pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &Prompt, cfg: &ModelConfig) -> std::result::Result<Completion, BackendError>;
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// A backend bound to one model, with retries and an in-flight cap.
pub struct Client {
    backend: Arc<dyn Backend>,
    cfg: ModelConfig,
    gate: Semaphore,
}

impl Client {
    pub fn new(backend: Arc<dyn Backend>, cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let gate = Semaphore { free: Mutex::new(cfg.concurrency), cv: Condvar::new() };
        Ok(Client { backend, cfg, gate })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// One completion for `prompt`. Failures after the retry budget are
    /// recorded in the returned generation rather than raised.
    pub fn generate(&self, prompt: &Prompt) -> Generation {
        let _slot = self.gate.acquire();
        let mut attempt = 0;
        let outcome = loop {
            match self.backend.complete(prompt, &self.cfg) {
                Ok(c) => break Ok(c),
                Err(BackendError::Transient(msg)) if attempt + 1 < self.cfg.retry.max_attempts => {
                    log::warn!("{}: attempt {} failed: {msg}", self.cfg.model_id, attempt + 1);
                    std::thread::sleep(self.cfg.retry.delay(attempt));
                    attempt += 1;
                }
                Err(BackendError::Transient(msg) | BackendError::Permanent(msg)) => break Err(msg),
            }
        };
        let mut g = Generation {
            prompt_hash: prompt.hash(),
            model_id: self.cfg.model_id.clone(),
            text: String::new(),
            token_probs: None,
            decode: self.cfg.decode(),
            truncated: false,
            error: None,
        };
        match outcome {
            Ok(c) => {
                g.text = c.text;
                g.token_probs = c.token_probs.filter(|p| p.iter().all(|t| t.prob > 0.0 && t.prob <= 1.0));
                g.truncated = c.truncated;
            }
            Err(msg) => g.error = Some(msg),
        }
        g
    }
}

/// A canned response. `model_id` "*" answers for every model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StubEntry {
    pub model_id: String,
    pub prompt_hash: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probs: Option<Vec<TokenProb>>,
}

/// Table-driven offline backend. Unknown prompts get the first code block of
/// the prompt echoed back, so the answer depends only on the prompt and model.
#[derive(Clone, Debug, Default)]
pub struct StubBackend {
    table: HashMap<(String, String), StubEntry>,
}

impl StubBackend {
    pub fn new(entries: impl IntoIterator<Item = StubEntry>) -> Self {
        let mut table = HashMap::new();
        for e in entries {
            table.insert((e.model_id.clone(), e.prompt_hash.clone()), e);
        }
        StubBackend { table }
    }

    /// Load a JSONL table of [`StubEntry`] records.
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::CorpusIo { path: path.to_path_buf(), source })?;
        let mut entries = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                entries.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn lookup(&self, model_id: &str, prompt_hash: &str) -> Option<&StubEntry> {
        self.table
            .get(&(model_id.to_string(), prompt_hash.to_string()))
            .or_else(|| self.table.get(&("*".to_string(), prompt_hash.to_string())))
    }
}

impl Backend for StubBackend {
    fn complete(&self, prompt: &Prompt, cfg: &ModelConfig) -> std::result::Result<Completion, BackendError> {
        if let Some(e) = self.lookup(&cfg.model_id, &prompt.hash()) {
            return Ok(Completion { text: e.text.clone(), token_probs: e.token_probs.clone(), truncated: false });
        }
        let echo = code_blocks(&prompt.text).into_iter().next().unwrap_or("");
        Ok(Completion { text: format!("```python\n{echo}```\n"), token_probs: None, truncated: false })
    }
}

/// Client for `POST {base}/chat/completions` on an OpenAI-compatible API.
pub struct HttpBackend {
    http: reqwest::blocking::Client,
    base: Option<String>,
    api_key: Option<String>,
}

impl HttpBackend {
    /// Reads `CTXBUG_API_BASE` and `CTXBUG_API_KEY`.
    pub fn from_env() -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(HttpBackend {
            http,
            base: std::env::var("CTXBUG_API_BASE").ok(),
            api_key: std::env::var("CTXBUG_API_KEY").ok(),
        })
    }

    pub fn request_body(prompt: &Prompt, cfg: &ModelConfig) -> serde_json::Value {
        serde_json::json!({
            "model": cfg.model_id,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_output_tokens,
            "logprobs": true,
        })
    }

    /// Text, per-token probabilities and truncation flag of a response body.
    pub fn parse_response(body: &serde_json::Value) -> std::result::Result<Completion, BackendError> {
        let choice =
            body.pointer("/choices/0").ok_or_else(|| BackendError::Permanent("response has no choices".into()))?;
        let text = choice
            .pointer("/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| BackendError::Permanent("response has no message content".into()))?
            .to_string();
        let token_probs = choice.pointer("/logprobs/content").and_then(|v| v.as_array()).map(|items| {
            items
                .iter()
                .filter_map(|t| {
                    let token = t.get("token")?.as_str()?.to_string();
                    let lp = t.get("logprob")?.as_f64()?;
                    Some(TokenProb { token, prob: lp.exp().min(1.0) })
                })
                .collect::<Vec<_>>()
        });
        let truncated = choice.get("finish_reason").and_then(|v| v.as_str()) == Some("length");
        Ok(Completion { text, token_probs: token_probs.filter(|p| !p.is_empty()), truncated })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, prompt: &Prompt, cfg: &ModelConfig) -> std::result::Result<Completion, BackendError> {
        let base = cfg
            .endpoint
            .as_deref()
            .or(self.base.as_deref())
            .ok_or_else(|| BackendError::Permanent("no endpoint configured (CTXBUG_API_BASE)".into()))?;
        let url = format!("{}/chat/completions", base.trim_end_matches('/'));
        let mut req = self.http.post(url).json(&Self::request_body(prompt, cfg));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Permanent(format!("HTTP {status}")));
        }
        let body: serde_json::Value = resp.json().map_err(|e| BackendError::Transient(e.to_string()))?;
        Self::parse_response(&body)
    }
}
