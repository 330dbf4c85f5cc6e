//! Completion backends with caching, retries, and latency accounting.
//!
//! [`complete`] is the single entry point: it consults the append-only
//! [`Cache`] first, otherwise calls the configured [`Backend`] under the
//! retry policy and persists the resulting [`CompletionRecord`]. Safe to
//! call from many worker threads at once.

mod cache;
mod http;
mod mock;

pub use cache::Cache;
pub use http::HttpBackend;
pub use mock::{parse_mock_endpoint, MockBackend, MockMode};

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{LabelScheme, PairKey};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend unavailable after {attempts} attempts: {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error("backend rejected request (http {status}): {message}")]
    BackendRejected { status: u16, message: String },
    #[error("backend failed: {0}")]
    BackendFailed(String),
    #[error("cache file corrupt at line {line}: {message}")]
    CacheCorrupt { line: usize, message: String },
    #[error("llm config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Model id, sampling parameters, and where to send requests. The endpoint
/// is either an HTTP URL or a `mock:` spec (see [`parse_mock_endpoint`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmConfig {
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    pub endpoint: String,
}

fn default_top_p() -> f64 {
    1.0
}

fn default_max_tokens() -> u32 {
    256
}

impl LlmConfig {
    /// Labeling wants mode-seeking determinism, so temperature defaults to 0
    /// and top_p to 1.
    pub fn new(model: impl Into<String>, endpoint: impl Into<String>) -> Self {
        LlmConfig {
            model: model.into(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: default_max_tokens(),
            endpoint: endpoint.into(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature < 0.0 {
            return Err(LlmError::BadConfig("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::BadConfig("top_p must be in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::BadConfig("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

/// One completed backend exchange, as persisted in the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub cache_key: String,
    pub prompt: String,
    pub response: String,
    pub model: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_counts: Option<TokenCounts>,
}

/// What [`complete`] hands back: the record (cached or fresh) plus whether a
/// backend call actually happened. `call_latency_ms` is 0 on cache hits; the
/// record itself keeps the latency measured when the response was first
/// fetched.
#[derive(Debug, Clone)]
pub struct CompletionOutcome {
    pub record: CompletionRecord,
    pub from_cache: bool,
    pub call_latency_ms: u64,
}

pub fn sha256_hex(data: &str) -> String {
    hex::encode(Sha256::digest(data.as_bytes()))
}

/// Content hash identifying a completion: SHA-256 over the fixed
/// serialization `model=..\ntemperature=..\ntop_p=..\nmax_tokens=..\n`
/// followed by the prompt bytes.
pub fn cache_key(config: &LlmConfig, prompt: &str) -> String {
    sha256_hex(&format!(
        "model={}\ntemperature={}\ntop_p={}\nmax_tokens={}\n{}",
        config.model, config.temperature, config.top_p, config.max_tokens, prompt
    ))
}

/// A raw completion transport: one prompt in, one text out.
pub trait Backend: Send + Sync {
    fn call(&self, prompt: &str, config: &LlmConfig) -> Result<BackendReply, BackendCallError>;
}

#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub token_counts: Option<TokenCounts>,
}

#[derive(Debug, Error)]
pub enum BackendCallError {
    /// 429, 5xx, or transport failure; retried under the policy.
    #[error("retryable ({status:?}): {message}")]
    Retryable { status: Option<u16>, message: String },
    /// Any other 4xx; never retried.
    #[error("rejected (http {status}): {message}")]
    Rejected { status: u16, message: String },
    /// Non-HTTP failure that retrying cannot fix (e.g. a mock oracle asked
    /// about an uncovered pair).
    #[error("{0}")]
    Fatal(String),
}

/// Exponential backoff: `base * 2^n` with +/-25% jitter, at most 4 attempts,
/// applied only to retryable failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::from_secs(1),
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    fn delay(&self, retry: u32) -> Duration {
        let base = self.base_delay.as_secs_f64() * f64::from(1u32 << retry.min(16));
        let factor = 1.0 + self.jitter * rand::rng().random_range(-1.0..=1.0);
        Duration::from_secs_f64((base * factor).max(0.0))
    }
}

/// Completes `prompt` against `backend`, serving from `cache` when the key
/// is already present and appending the record otherwise.
pub fn complete(
    backend: &dyn Backend,
    prompt: &str,
    config: &LlmConfig,
    cache: &Cache,
) -> Result<CompletionOutcome, LlmError> {
    complete_with_policy(backend, prompt, config, cache, &RetryPolicy::default())
}

pub fn complete_with_policy(
    backend: &dyn Backend,
    prompt: &str,
    config: &LlmConfig,
    cache: &Cache,
    policy: &RetryPolicy,
) -> Result<CompletionOutcome, LlmError> {
    let key = cache_key(config, prompt);
    if let Some(record) = cache.get(&key) {
        // 256-bit collisions are treated as impossible; check anyway in
        // debug runs.
        debug_assert_eq!(record.prompt, prompt, "cache key collision");
        return Ok(CompletionOutcome {
            record,
            from_cache: true,
            call_latency_ms: 0,
        });
    }

    let started = Instant::now();
    let mut last_message = String::new();
    for attempt in 0..policy.max_attempts {
        if attempt > 0 {
            std::thread::sleep(policy.delay(attempt - 1));
        }
        match backend.call(prompt, config) {
            Ok(reply) => {
                let latency_ms = started.elapsed().as_millis() as u64;
                let record = CompletionRecord {
                    cache_key: key,
                    prompt: prompt.to_string(),
                    response: reply.text,
                    model: config.model.clone(),
                    latency_ms,
                    token_counts: reply.token_counts,
                };
                cache.insert(&record)?;
                return Ok(CompletionOutcome {
                    record,
                    from_cache: false,
                    call_latency_ms: latency_ms,
                });
            }
            Err(BackendCallError::Retryable { message, .. }) => last_message = message,
            Err(BackendCallError::Rejected { status, message }) => {
                return Err(LlmError::BackendRejected { status, message })
            }
            Err(BackendCallError::Fatal(message)) => return Err(LlmError::BackendFailed(message)),
        }
    }
    Err(LlmError::BackendUnavailable {
        attempts: policy.max_attempts,
        message: last_message,
    })
}

/// Builds the backend named by `config.endpoint`: a `mock:` spec becomes a
/// [`MockBackend`] over `gold`, anything else an [`HttpBackend`].
pub fn backend_for(
    config: &LlmConfig,
    scheme: &LabelScheme,
    gold: &HashMap<PairKey, String>,
) -> Result<Box<dyn Backend>, LlmError> {
    if config.endpoint.starts_with("mock:") {
        let spec = parse_mock_endpoint(&config.endpoint)
            .ok_or_else(|| LlmError::BadConfig(format!("bad mock endpoint {:?}", config.endpoint)))?;
        let mut backend = MockBackend::new(spec.mode, scheme.clone(), gold.clone());
        if let Some(delay) = spec.delay {
            backend = backend.with_delay(delay);
        }
        Ok(Box::new(backend))
    } else {
        Ok(Box::new(HttpBackend::new(&config.endpoint)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn config() -> LlmConfig {
        LlmConfig::new("test-model", "mock:fixed:Exact")
    }

    fn fast_policy() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::from_millis(1),
            jitter: 0.25,
        }
    }

    /// Backend scripted to fail a fixed number of times before succeeding.
    struct Scripted {
        failures: AtomicU32,
        fail_with: fn() -> BackendCallError,
        calls: AtomicU32,
    }

    impl Scripted {
        fn new(failures: u32, fail_with: fn() -> BackendCallError) -> Self {
            Scripted {
                failures: AtomicU32::new(failures),
                fail_with,
                calls: AtomicU32::new(0),
            }
        }
    }

    impl Backend for Scripted {
        fn call(&self, _prompt: &str, _config: &LlmConfig) -> Result<BackendReply, BackendCallError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |f| f.checked_sub(1)).is_ok() {
                Err((self.fail_with)())
            } else {
                Ok(BackendReply {
                    text: "{'rating': 'Exact'}".into(),
                    token_counts: None,
                })
            }
        }
    }

    #[test]
    fn second_identical_call_is_served_from_cache() {
        let cache = Cache::in_memory();
        let backend = Scripted::new(0, || unreachable!());
        let a = complete_with_policy(&backend, "p", &config(), &cache, &fast_policy()).unwrap();
        let b = complete_with_policy(&backend, "p", &config(), &cache, &fast_policy()).unwrap();
        assert!(!a.from_cache);
        assert!(b.from_cache);
        assert_eq!(b.call_latency_ms, 0);
        assert_eq!(a.record.response, b.record.response);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn rate_limited_twice_then_succeeds_with_two_retries() {
        let cache = Cache::in_memory();
        let backend = Scripted::new(2, || BackendCallError::Retryable {
            status: Some(429),
            message: "too many requests".into(),
        });
        let out = complete_with_policy(&backend, "p", &config(), &cache, &fast_policy()).unwrap();
        assert!(!out.from_cache);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retries_exhaust_into_backend_unavailable() {
        let cache = Cache::in_memory();
        let backend = Scripted::new(99, || BackendCallError::Retryable {
            status: Some(503),
            message: "down".into(),
        });
        let err = complete_with_policy(&backend, "p", &config(), &cache, &fast_policy()).unwrap_err();
        assert!(matches!(err, LlmError::BackendUnavailable { attempts: 4, .. }));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn non_429_4xx_is_rejected_without_retry() {
        let cache = Cache::in_memory();
        let backend = Scripted::new(99, || BackendCallError::Rejected {
            status: 400,
            message: "bad request".into(),
        });
        let err = complete_with_policy(&backend, "p", &config(), &cache, &fast_policy()).unwrap_err();
        assert!(matches!(err, LlmError::BackendRejected { status: 400, .. }));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn cache_key_separates_model_params_and_prompt() {
        let base = config();
        let key = cache_key(&base, "prompt");
        assert_eq!(key.len(), 64);
        assert_eq!(key, cache_key(&base, "prompt"));
        let mut other = base.clone();
        other.temperature = 0.7;
        assert_ne!(key, cache_key(&other, "prompt"));
        let mut renamed = base.clone();
        renamed.model = "other-model".into();
        assert_ne!(key, cache_key(&renamed, "prompt"));
        assert_ne!(key, cache_key(&base, "prompt2"));
    }

    #[test]
    fn config_validation() {
        let mut c = config();
        assert!(c.validate().is_ok());
        c.top_p = 0.0;
        assert!(c.validate().is_err());
        c.top_p = 1.0;
        c.temperature = -0.5;
        assert!(c.validate().is_err());
    }
}
