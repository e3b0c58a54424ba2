use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{LlmClient, LlmError, LlmRequest, LlmResponse};
use crate::http::{self, HttpSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteLlmConfig {
    pub url: String,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    200
}
fn default_max_tokens() -> u32 {
    256
}
fn default_concurrency() -> usize {
    4
}

impl RemoteLlmConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token_env: None,
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            max_tokens: default_max_tokens(),
            concurrency: default_concurrency(),
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// Counting semaphore capping in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// HTTP completion client: POST `{"prompt", "max_tokens", "temperature": 0}`,
/// reply `{"text"}`. Requests are read-only, so retries are safe.
#[derive(Debug)]
pub struct RemoteLlm {
    cfg: RemoteLlmConfig,
    settings: HttpSettings,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl RemoteLlm {
    pub fn new(cfg: RemoteLlmConfig) -> Result<Self, LlmError> {
        let settings = HttpSettings {
            url: cfg.url.clone(),
            bearer_token: cfg.token_env.as_deref().and_then(|k| std::env::var(k).ok()),
            timeout: Duration::from_millis(cfg.timeout_ms),
            retries: cfg.retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
        };
        let client = http::build_client(&settings).map_err(|message| LlmError::Transport {
            attempts: 0,
            status: None,
            message,
        })?;
        let gate = Gate {
            free: Mutex::new(cfg.concurrency.max(1)),
            cv: Condvar::new(),
        };
        Ok(Self {
            cfg,
            settings,
            client,
            gate,
        })
    }
}

impl LlmClient for RemoteLlm {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let _slot = self.gate.acquire();
        let started = Instant::now();
        let body = CompletionRequest {
            prompt: &req.prompt,
            max_tokens: self.cfg.max_tokens,
            temperature: 0.0,
        };
        let resp: CompletionResponse =
            http::post_json(&self.client, &self.settings, &body).map_err(|f| LlmError::Transport {
                attempts: f.attempts,
                status: f.status,
                message: f.message,
            })?;
        Ok(LlmResponse {
            text: resp.text,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn max_concurrency(&self) -> usize {
        self.cfg.concurrency.max(1)
    }
}
