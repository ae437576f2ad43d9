//! Uniform access to language model backends.
//!
//! Two capability modes exist: *white-box* backends expose per-token
//! log-probabilities for prompts and completions, *black-box* backends
//! return sampled text only. Implementations here: an HTTP client speaking
//! a minimal completion protocol ([`http::HttpBackend`]), a deterministic
//! scripted mock ([`mock::ScriptedBackend`]), and a seeded format-aware
//! mock ([`mock::SeededMockBackend`]) for end-to-end runs without a model.
//! [`cache::ResponseCache`] persists responses content-addressed on disk.

pub mod cache;
pub mod http;
pub mod mock;

pub use cache::{request_key, ResponseCache};
pub use http::HttpBackend;
pub use mock::{ScriptedBackend, SeededMockBackend};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Capability mode of a backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    WhiteBox,
    BlackBox,
}

/// Identity and capability of a backend instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub mode: BackendMode,
    /// HTTP endpoint URL, or "mock".
    pub endpoint: String,
    pub model_id: String,
}

/// A completion request. Identical requests are cache hits; every field
/// participates in the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_k: u32,
    pub n_samples: u32,
    pub want_logprobs: bool,
    pub echo_prompt_logprobs: bool,
}

impl Default for CompletionRequest {
    fn default() -> Self {
        Self {
            prompt: String::new(),
            max_tokens: 16,
            temperature: 0.0,
            top_k: 5,
            n_samples: 1,
            want_logprobs: false,
            echo_prompt_logprobs: false,
        }
    }
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.n_samples < 1 {
            return Err(BackendError::InvalidRequest("n_samples must be >= 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// One (token, logprob) entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// One sampled completion. `token_logprobs` lists the chosen token per
/// generated position; `top_logprobs` lists the top-k distribution per
/// generated position (white-box backends only).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleOutput {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_logprobs: Option<Vec<Vec<TokenLogprob>>>,
}

/// Backend response: `n_samples` completions plus, when echo was requested,
/// per-token logprobs of the prompt itself.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub samples: Vec<SampleOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_logprobs: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after retries: {0}")]
    Transport(String),
    #[error("backend lacks capability: {0}")]
    CapabilityMissing(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("response carries no logprobs")]
    NoLogprobs,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache io: {0}")]
    CacheIo(String),
}

/// A completion backend. Implementations must be deterministic given their
/// configuration wherever they claim to be (mocks are; HTTP depends on the
/// server).
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

/// Bounded concurrency gate for in-flight requests.
struct RequestLimiter {
    permits: std::sync::Mutex<usize>,
    available: std::sync::Condvar,
}

impl RequestLimiter {
    fn new(limit: usize) -> Self {
        Self { permits: std::sync::Mutex::new(limit), available: std::sync::Condvar::new() }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a RequestLimiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.limiter.permits.lock().unwrap() += 1;
        self.limiter.available.notify_one();
    }
}

/// Shareable backend handle: validates requests against the backend's
/// capability mode, bounds in-flight concurrency, and counts calls so
/// cache-transparency can be asserted.
#[derive(Clone)]
pub struct BackendHandle {
    inner: Arc<dyn Backend>,
    limiter: Arc<RequestLimiter>,
    calls: Arc<AtomicU64>,
}

impl BackendHandle {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self::with_concurrency(backend, 8)
    }

    pub fn with_concurrency(backend: Arc<dyn Backend>, limit: usize) -> Self {
        Self {
            inner: backend,
            limiter: Arc::new(RequestLimiter::new(limit.max(1))),
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    /// Number of completions that actually reached the backend (cache hits
    /// do not count).
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        let descriptor = self.inner.descriptor();
        if descriptor.mode == BackendMode::BlackBox
            && (request.want_logprobs || request.echo_prompt_logprobs)
        {
            return Err(BackendError::CapabilityMissing(format!(
                "backend {} is black-box and cannot report logprobs",
                descriptor.name
            )));
        }
        let _guard = self.limiter.acquire();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let response = self.inner.complete(request)?;
        if request.want_logprobs
            && descriptor.mode == BackendMode::WhiteBox
            && response.samples.iter().any(|s| s.token_logprobs.is_none())
        {
            return Err(BackendError::MalformedResponse(
                "white-box backend omitted token logprobs".into(),
            ));
        }
        if response.samples.len() != request.n_samples as usize {
            return Err(BackendError::MalformedResponse(format!(
                "requested {} samples, received {}",
                request.n_samples,
                response.samples.len()
            )));
        }
        Ok(response)
    }
}

/// Normalize an answer-token surface form: strip surrounding whitespace and
/// lowercase. "True", " true", and "TRUE" all match.
pub fn normalize_token(token: &str) -> String {
    token.trim().to_lowercase()
}

/// Probability that the first generated token is `target`, read from the
/// top-k distribution of the first sample. Tokens outside the returned
/// top-k get probability 0 rather than a renormalized floor.
pub fn token_prob(response: &CompletionResponse, target: &str) -> Result<f64, BackendError> {
    let sample = response
        .samples
        .first()
        .ok_or_else(|| BackendError::MalformedResponse("response has no samples".into()))?;
    let tops = sample.top_logprobs.as_ref().ok_or(BackendError::NoLogprobs)?;
    let first = tops.first().ok_or(BackendError::NoLogprobs)?;
    let want = normalize_token(target);
    for entry in first {
        if normalize_token(&entry.token) == want {
            return Ok(entry.logprob.exp());
        }
    }
    Ok(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_prob_reads_first_token_distribution() {
        let response = CompletionResponse {
            samples: vec![SampleOutput {
                text: " true".into(),
                token_logprobs: Some(vec![TokenLogprob {
                    token: " true".into(),
                    logprob: -0.105,
                }]),
                top_logprobs: Some(vec![vec![
                    TokenLogprob { token: " true".into(), logprob: -0.105 },
                    TokenLogprob { token: " false".into(), logprob: -2.30 },
                ]]),
            }],
            prompt_logprobs: None,
        };
        let p = token_prob(&response, "True").unwrap();
        assert!((p - (-0.105f64).exp()).abs() < 1e-12);
        assert_eq!(format!("{:.3}", p), "0.900");
        // Target missing from top-k floors to zero.
        assert_eq!(token_prob(&response, "maybe").unwrap(), 0.0);
    }

    #[test]
    fn token_prob_of_logprob_zero_is_one() {
        let response = CompletionResponse {
            samples: vec![SampleOutput {
                text: "A".into(),
                token_logprobs: None,
                top_logprobs: Some(vec![vec![TokenLogprob {
                    token: "A".into(),
                    logprob: 0.0,
                }]]),
            }],
            prompt_logprobs: None,
        };
        assert_eq!(token_prob(&response, "a").unwrap(), 1.0);
    }

    #[test]
    fn token_prob_without_logprobs_errors() {
        let response = CompletionResponse {
            samples: vec![SampleOutput::default()],
            prompt_logprobs: None,
        };
        assert!(matches!(token_prob(&response, "x"), Err(BackendError::NoLogprobs)));
    }

    #[test]
    fn handle_rejects_logprob_requests_on_black_box() {
        let backend = mock::ScriptedBackend::black_box("bb");
        let handle = BackendHandle::new(Arc::new(backend));
        let request = CompletionRequest { want_logprobs: true, ..Default::default() };
        assert!(matches!(
            handle.complete(&request),
            Err(BackendError::CapabilityMissing(_))
        ));
    }
}
