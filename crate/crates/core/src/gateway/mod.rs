//! Chat-completion gateway: temperature-0 requests with retries, a
//! content-addressed cache, and bounded per-model concurrency.

mod cache;
mod http;
mod replay;

pub use cache::{cache_key, read_journal, CacheEntry, ResponseCache};
pub use http::HttpBackend;
pub use replay::ReplayBackend;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::prompting::PromptText;

/// Sampling temperature for every request. Not configurable.
pub const TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Openness {
    Open,
    #[default]
    Closed,
}

fn default_max_parallel() -> usize {
    4
}

/// One model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model_id: String,
    pub base_url: Url,
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default)]
    pub vote_weight: f64,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub openness: Openness,
}

impl ModelSpec {
    pub fn new(model_id: impl Into<String>, base_url: Url) -> Self {
        Self {
            model_id: model_id.into(),
            base_url,
            api_key_env: String::new(),
            vote_weight: 0.0,
            max_parallel: default_max_parallel(),
            openness: Openness::Closed,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |msg: String| Err(GatewayError::InvalidSpec { model: self.model_id.clone(), message: msg });
        if self.model_id.trim().is_empty() {
            return bad("model_id is empty".into());
        }
        if !(0.0..=1.0).contains(&self.vote_weight) {
            return bad(format!("vote_weight {} outside [0, 1]", self.vote_weight));
        }
        if self.max_parallel == 0 {
            return bad("max_parallel must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    TransportError,
    RefusalEmpty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub record_id: String,
    pub model_id: String,
    /// Non-empty iff `status` is `Ok`.
    pub text: String,
    pub status: ResponseStatus,
    pub latency_ms: u64,
    pub from_cache: bool,
    pub retry_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RawResponse {
    pub fn ok(record_id: &str, model_id: &str, text: impl Into<String>) -> Self {
        let text = text.into();
        let status = if text.trim().is_empty() { ResponseStatus::RefusalEmpty } else { ResponseStatus::Ok };
        Self {
            record_id: record_id.to_string(),
            model_id: model_id.to_string(),
            text: if status == ResponseStatus::Ok { text } else { String::new() },
            status,
            latency_ms: 0,
            from_cache: false,
            retry_count: 0,
            error: None,
        }
    }

    pub fn failed(record_id: &str, model_id: &str, error: &GatewayError) -> Self {
        Self {
            record_id: record_id.to_string(),
            model_id: model_id.to_string(),
            text: String::new(),
            status: ResponseStatus::TransportError,
            latency_ms: 0,
            from_cache: false,
            retry_count: match error {
                GatewayError::Transport { attempts, .. } => attempts.saturating_sub(1),
                _ => 0,
            },
            error: Some(error.to_string()),
        }
    }
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("rate limited: {0}")]
    RateLimited(String),
    /// Network failures, timeouts, and 5xx responses.
    #[error("{0}")]
    Retryable(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("{0}")]
    Fatal(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::RateLimited(_) | BackendError::Retryable(_))
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{model}: request failed after {attempts} attempt(s): {last}")]
    Transport { model: String, attempts: u32, last: BackendError },
    #[error("{model}: {message}")]
    Auth { model: String, message: String },
    #[error("{model}: {message}")]
    Rejected { model: String, message: String },
    #[error("invalid model spec {model:?}: {message}")]
    InvalidSpec { model: String, message: String },
    #[error("cache write failed: {0}")]
    Cache(#[from] std::io::Error),
}

/// Something that can answer a single-message chat request at temperature 0.
/// Returns the first choice's message content (possibly empty).
pub trait ChatBackend: Send + Sync {
    fn chat(&self, spec: &ModelSpec, prompt: &str) -> Result<String, BackendError>;
}

impl<F> ChatBackend for F
where
    F: Fn(&ModelSpec, &str) -> Result<String, BackendError> + Send + Sync,
{
    fn chat(&self, spec: &ModelSpec, prompt: &str) -> Result<String, BackendError> {
        self(spec, prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    /// Upper bound of the random extra fraction added to each delay.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay_ms: 1000, jitter: 0.25 }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        let base = self.base_delay_ms as f64 * 2f64.powi(retry as i32);
        let extra = if self.jitter > 0.0 { rand::rng().random_range(0.0..self.jitter) } else { 0.0 };
        Duration::from_secs_f64(base * (1.0 + extra) / 1000.0)
    }
}

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    cache: Arc<ResponseCache>,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn new(backend: impl ChatBackend + 'static) -> Self {
        Self { backend: Box::new(backend), cache: Arc::new(ResponseCache::in_memory()), retry: RetryPolicy::default() }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Cache first; on a miss one backend request (with retries). Non-empty
    /// responses are journaled before this returns.
    pub fn complete(&self, spec: &ModelSpec, prompt: &PromptText) -> Result<RawResponse, GatewayError> {
        let key = cache_key(&spec.model_id, &prompt.text, TEMPERATURE);
        if let Some(hit) = self.cache.get(&key) {
            let mut resp = RawResponse::ok(&prompt.record_id, &spec.model_id, hit.text);
            resp.from_cache = true;
            return Ok(resp);
        }

        let started = Instant::now();
        let mut attempt = 0u32;
        let text = loop {
            attempt += 1;
            match self.backend.chat(spec, &prompt.text) {
                Ok(text) => break text,
                Err(BackendError::Auth(message)) => {
                    return Err(GatewayError::Auth { model: spec.model_id.clone(), message })
                }
                Err(BackendError::Fatal(message)) => {
                    return Err(GatewayError::Rejected { model: spec.model_id.clone(), message })
                }
                Err(err) if attempt >= self.retry.max_attempts.max(1) => {
                    return Err(GatewayError::Transport { model: spec.model_id.clone(), attempts: attempt, last: err })
                }
                Err(err) => {
                    let wait = self.retry.delay(attempt - 1);
                    log::debug!("{}: attempt {attempt} failed ({err}); retrying in {wait:?}", spec.model_id);
                    std::thread::sleep(wait);
                }
            }
        };

        let mut resp = RawResponse::ok(&prompt.record_id, &spec.model_id, text);
        resp.latency_ms = started.elapsed().as_millis() as u64;
        resp.retry_count = attempt - 1;
        if resp.status == ResponseStatus::Ok {
            self.cache.put(CacheEntry {
                key,
                model: spec.model_id.clone(),
                text: resp.text.clone(),
                ts: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            })?;
        }
        Ok(resp)
    }

    /// Every (spec, prompt) pair, spec-major: all prompts for `specs[0]`,
    /// then `specs[1]`, and so on. At most `max_parallel` requests per spec
    /// are in flight. Failed pairs come back with `TransportError` status.
    pub fn complete_batch(&self, specs: &[ModelSpec], prompts: &[PromptText]) -> Vec<RawResponse> {
        let n = prompts.len();
        let mut slots: Vec<Option<RawResponse>> = vec![None; specs.len() * n];
        if n == 0 {
            return Vec::new();
        }
        let (tx, rx) = std::sync::mpsc::channel::<(usize, RawResponse)>();
        std::thread::scope(|scope| {
            for (s, spec) in specs.iter().enumerate() {
                let next = Arc::new(AtomicUsize::new(0));
                for _ in 0..spec.max_parallel.max(1).min(n) {
                    let next = Arc::clone(&next);
                    let tx = tx.clone();
                    scope.spawn(move || loop {
                        let p = next.fetch_add(1, Ordering::Relaxed);
                        if p >= n {
                            break;
                        }
                        let prompt = &prompts[p];
                        let resp = self
                            .complete(spec, prompt)
                            .unwrap_or_else(|e| RawResponse::failed(&prompt.record_id, &spec.model_id, &e));
                        if tx.send((s * n + p, resp)).is_err() {
                            break;
                        }
                    });
                }
            }
            drop(tx);
            for (idx, resp) in rx {
                slots[idx] = Some(resp);
            }
        });
        slots.into_iter().map(|r| r.expect("every batch slot is filled")).collect()
    }
}
