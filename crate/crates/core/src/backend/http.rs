//! HTTP backend speaking a minimal completion protocol.
//!
//! Request body: `{prompt, max_tokens, temperature, top_k, n, logprobs,
//! echo}`. Response body mirrors [`CompletionResponse`]: `{samples:
//! [{text, token_logprobs, top_logprobs}], prompt_logprobs}`. This is the
//! least common denominator of open-source inference servers; adapting a
//! specific server means teaching it this shape, not teaching this client
//! every server.

use std::time::Duration;

use serde::Serialize;

use super::{Backend, BackendDescriptor, BackendError, CompletionRequest, CompletionResponse};

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    top_k: u32,
    n: u32,
    logprobs: bool,
    echo: bool,
}

pub struct HttpBackend {
    descriptor: BackendDescriptor,
    agent: ureq::Agent,
    max_retries: u32,
    base_backoff: Duration,
}

impl HttpBackend {
    pub fn new(descriptor: BackendDescriptor) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self { descriptor, agent, max_retries: 3, base_backoff: Duration::from_millis(100) }
    }

    pub fn with_retries(mut self, max_retries: u32, base_backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.base_backoff = base_backoff;
        self
    }

    fn post_once(&self, request: &CompletionRequest) -> Result<CompletionResponse, ureq::Error> {
        let wire = WireRequest {
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            top_k: request.top_k,
            n: request.n_samples,
            logprobs: request.want_logprobs,
            echo: request.echo_prompt_logprobs,
        };
        let mut response = self.agent.post(&self.descriptor.endpoint).send_json(&wire)?;
        response.body_mut().read_json::<CompletionResponse>()
    }
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let mut last_error = String::new();
        for attempt in 0..=self.max_retries {
            match self.post_once(request) {
                Ok(response) => return Ok(response),
                Err(ureq::Error::StatusCode(code)) if (400..500).contains(&code) => {
                    // Client errors will not heal on retry.
                    return Err(BackendError::MalformedResponse(format!(
                        "endpoint {} rejected request with status {code}",
                        self.descriptor.endpoint
                    )));
                }
                Err(e) => {
                    last_error = e.to_string();
                    if attempt < self.max_retries {
                        let backoff = self.base_backoff * 2u32.pow(attempt);
                        std::thread::sleep(backoff.min(Duration::from_secs(2)));
                    }
                }
            }
        }
        Err(BackendError::Transport(format!(
            "{} after {} retries: {last_error}",
            self.descriptor.endpoint, self.max_retries
        )))
    }
}
