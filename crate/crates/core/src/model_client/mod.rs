//! Inference backends behind a caching, retrying client.
//!
//! [`ModelClient`] wraps any [`Backend`]: the deterministic [`MockModel`]
//! used for tests and offline runs, or [`OpenAiBackend`] for an
//! OpenAI-compatible chat-completions endpoint.

mod cache;
mod mock;
mod openai;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::ResponseCache;
pub use mock::{ConfidenceBehavior, MockModel, MockModelSpec, CONFIDENCE_QUESTION};
pub use openai::OpenAiBackend;

pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    /// Greedy decoding by default.
    pub temperature: f64,
    pub logprob_request: bool,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: 0.0,
            logprob_request: false,
        }
    }

    pub fn with_logprobs(mut self) -> Self {
        self.logprob_request = true;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

/// An alternative token considered at one position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

/// One generated token with its log-probability and, when the backend
/// reports them, the most likely alternatives at that position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub top: Vec<TopLogprob>,
}

impl TokenLogprob {
    pub fn certain(token: impl Into<String>) -> Self {
        Self {
            token: token.into(),
            logprob: 0.0,
            top: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub backend_id: String,
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Connection, timeout, rate-limit or server-side failure. Retried.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed backend reply: {message}")]
    Decode { message: String, body: String },
    #[error("backend rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClientError {
    #[error("retry budget exhausted after {attempts} attempt(s): {message}")]
    RetriesExhausted { attempts: u32, message: String },
    #[error("malformed backend reply: {message}")]
    Decode { message: String, body: String },
    #[error("backend rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("response cache: {0}")]
    Cache(String),
}

impl ClientError {
    /// True when the failure came from the network rather than the content.
    pub fn is_transport(&self) -> bool {
        matches!(self, ClientError::RetriesExhausted { .. })
    }
}

/// A text-generation backend.
pub trait Backend: Send + Sync {
    /// Stable identifier; part of every cache key.
    fn id(&self) -> String;

    fn generate(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `attempt` (1-based), doubling each time.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32
            .checked_shl(attempt.saturating_sub(1))
            .unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Caching, retrying front end over a [`Backend`]. Safe to share across
/// threads.
pub struct ModelClient {
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    backend_calls: AtomicU64,
}

impl ModelClient {
    /// Client with an in-memory cache and the default retry policy.
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            cache: Some(ResponseCache::in_memory()),
            retry: RetryPolicy::default(),
            backend_calls: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: Option<ResponseCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    /// Number of requests that reached the backend (retries included).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
        let key = self
            .cache
            .as_ref()
            .map(|_| ResponseCache::key(&self.backend.id(), request));
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.get(key).map_err(ClientError::Cache)? {
                return Ok(hit);
            }
        }

        let response = self.generate_with_retry(request)?;

        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            cache.put(key, &response).map_err(ClientError::Cache)?;
        }
        Ok(response)
    }

    fn generate_with_retry(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, ClientError> {
        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.generate(request) {
                Ok(response) => return Ok(response),
                Err(BackendError::Transport(message)) => {
                    if attempt >= max_attempts {
                        return Err(ClientError::RetriesExhausted {
                            attempts: attempt,
                            message,
                        });
                    }
                    thread::sleep(self.retry.delay(attempt));
                }
                Err(BackendError::Decode { message, body }) => {
                    return Err(ClientError::Decode { message, body })
                }
                Err(BackendError::Rejected { status, body }) => {
                    return Err(ClientError::Rejected { status, body })
                }
            }
        }
    }

    /// Completes every request with at most `parallelism` in flight. Results
    /// come back in request order; a failure only affects its own slot.
    pub fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        parallelism: usize,
    ) -> Vec<Result<CompletionResponse, ClientError>> {
        let workers = parallelism.max(1).min(requests.len());
        if workers <= 1 {
            return requests.iter().map(|r| self.complete(r)).collect();
        }

        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<CompletionResponse, ClientError>>>> =
            Mutex::new(vec![None; requests.len()]);
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let result = self.complete(&requests[i]);
                    slots.lock().expect("batch slots poisoned")[i] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .expect("batch slots poisoned")
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flaky {
        failures_before_success: u64,
        calls: AtomicU64,
    }

    impl Backend for Flaky {
        fn id(&self) -> String {
            "flaky".into()
        }

        fn generate(
            &self,
            request: &CompletionRequest,
        ) -> Result<CompletionResponse, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures_before_success {
                return Err(BackendError::Transport("connection reset".into()));
            }
            Ok(CompletionResponse {
                text: request.prompt.to_uppercase(),
                token_logprobs: None,
                backend_id: self.id(),
            })
        }
    }

    fn flaky(failures: u64) -> Arc<Flaky> {
        Arc::new(Flaky {
            failures_before_success: failures,
            calls: AtomicU64::new(0),
        })
    }

    #[test]
    fn transport_errors_are_retried() {
        let client = ModelClient::new(flaky(2)).with_retry(RetryPolicy::no_delay(3));
        let out = client.complete(&CompletionRequest::new("hi")).unwrap();
        assert_eq!(out.text, "HI");
        assert_eq!(client.backend_calls(), 3);
    }

    #[test]
    fn retry_budget_exhausted() {
        let client = ModelClient::new(flaky(10)).with_retry(RetryPolicy::no_delay(3));
        let err = client.complete(&CompletionRequest::new("hi")).unwrap_err();
        assert_eq!(
            err,
            ClientError::RetriesExhausted {
                attempts: 3,
                message: "connection reset".into()
            }
        );
        assert!(err.is_transport());
    }

    #[test]
    fn decode_errors_are_not_retried() {
        struct Garbled;
        impl Backend for Garbled {
            fn id(&self) -> String {
                "garbled".into()
            }
            fn generate(&self, _: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
                Err(BackendError::Decode {
                    message: "expected value".into(),
                    body: "<html>".into(),
                })
            }
        }
        let client = ModelClient::new(Arc::new(Garbled)).with_retry(RetryPolicy::no_delay(5));
        let err = client.complete(&CompletionRequest::new("x")).unwrap_err();
        assert!(matches!(err, ClientError::Decode { ref body, .. } if body == "<html>"));
        assert_eq!(client.backend_calls(), 1);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(350));
        assert_eq!(p.delay(40), Duration::from_millis(350));
    }

    #[test]
    fn cache_hit_skips_backend() {
        let client = ModelClient::new(flaky(0));
        let req = CompletionRequest::new("same");
        let a = client.complete(&req).unwrap();
        let b = client.complete(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(client.backend_calls(), 1);
    }
}
