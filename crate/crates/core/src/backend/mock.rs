//! Deterministic mock backends.
//!
//! [`ScriptedBackend`] replays an exact prompt-to-response table and is the
//! fixture vehicle for hand-computed scoring arithmetic.
//! [`SeededMockBackend`] is a format-aware pseudo-model: it reads the
//! *shape* of a prompt (true/false question, multiple-choice options,
//! confidence instruction, free generation) and fabricates well-formed,
//! seed-deterministic answers. It knows nothing about the task content, so
//! end-to-end runs exercise the full parsing and inference machinery on
//! reproducible noise.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{
    Backend, BackendDescriptor, BackendError, BackendMode, CompletionRequest,
    CompletionResponse, SampleOutput, TokenLogprob,
};

/// Exact prompt-to-response table. Unscripted prompts are an error so
/// fixtures cannot silently drift.
pub struct ScriptedBackend {
    descriptor: BackendDescriptor,
    responses: BTreeMap<String, CompletionResponse>,
}

impl ScriptedBackend {
    pub fn white_box(name: &str) -> Self {
        Self {
            descriptor: BackendDescriptor {
                name: name.into(),
                mode: BackendMode::WhiteBox,
                endpoint: "mock".into(),
                model_id: "scripted".into(),
            },
            responses: BTreeMap::new(),
        }
    }

    pub fn black_box(name: &str) -> Self {
        Self {
            descriptor: BackendDescriptor {
                name: name.into(),
                mode: BackendMode::BlackBox,
                endpoint: "mock".into(),
                model_id: "scripted".into(),
            },
            responses: BTreeMap::new(),
        }
    }

    pub fn script(mut self, prompt: impl Into<String>, response: CompletionResponse) -> Self {
        self.responses.insert(prompt.into(), response);
        self
    }

    /// Script a single-sample response whose first generated token has the
    /// given top-k distribution.
    pub fn script_first_token(
        self,
        prompt: impl Into<String>,
        top: &[(&str, f64)],
    ) -> Self {
        let tops: Vec<TokenLogprob> = top
            .iter()
            .map(|(t, lp)| TokenLogprob { token: (*t).into(), logprob: *lp })
            .collect();
        let chosen = tops
            .iter()
            .cloned()
            .max_by(|a, b| a.logprob.total_cmp(&b.logprob))
            .expect("top-k distribution must be non-empty");
        let response = CompletionResponse {
            samples: vec![SampleOutput {
                text: chosen.token.clone(),
                token_logprobs: Some(vec![chosen]),
                top_logprobs: Some(vec![tops]),
            }],
            prompt_logprobs: None,
        };
        self.script(prompt, response)
    }
}

impl Backend for ScriptedBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.responses
            .get(&request.prompt)
            .cloned()
            .ok_or_else(|| {
                BackendError::MalformedResponse(format!(
                    "unscripted prompt ({} chars): {:?}...",
                    request.prompt.len(),
                    request.prompt.chars().take(60).collect::<String>()
                ))
            })
    }
}

/// Uniform hash-derived value in [0, 1).
fn unit(seed: u64, parts: &[&str]) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for p in parts {
        hasher.update([0u8]);
        hasher.update(p.as_bytes());
    }
    let digest = hasher.finalize();
    let x = u64::from_le_bytes(digest[..8].try_into().unwrap());
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Whitespace tokenization in the style of subword vocabularies: every
/// token after the first carries its leading space, so concatenating the
/// tokens reconstructs a whitespace-normalized prompt.
pub fn mock_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        if out.is_empty() {
            out.push(word.to_string());
        } else {
            out.push(format!(" {word}"));
        }
    }
    out
}

/// Format-aware deterministic mock model.
pub struct SeededMockBackend {
    descriptor: BackendDescriptor,
    seed: u64,
    /// Candidate answers for free-generation prompts.
    answer_vocab: Vec<String>,
}

impl SeededMockBackend {
    pub fn new(mode: BackendMode, seed: u64) -> Self {
        let name = match mode {
            BackendMode::WhiteBox => "mock-white",
            BackendMode::BlackBox => "mock-black",
        };
        Self {
            descriptor: BackendDescriptor {
                name: name.into(),
                mode,
                endpoint: "mock".into(),
                model_id: format!("seeded-{seed}"),
            },
            seed,
            answer_vocab: Vec::new(),
        }
    }

    /// Set the candidate answers emitted for free-generation prompts.
    pub fn with_answer_vocab(mut self, vocab: Vec<String>) -> Self {
        self.answer_vocab = vocab;
        self
    }

    fn is_white_box(&self) -> bool {
        self.descriptor.mode == BackendMode::WhiteBox
    }

    /// First-token distribution over the given candidate tokens: random but
    /// deterministic per (seed, prompt), sharpened so argmaxes are usually
    /// unambiguous.
    fn candidate_distribution(&self, prompt: &str, tokens: &[String]) -> Vec<(String, f64)> {
        let mut raw: Vec<f64> = tokens
            .iter()
            .map(|t| {
                let u = unit(self.seed, &["dist", prompt, t]);
                u * u * u
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            raw = vec![1.0 / tokens.len() as f64; tokens.len()];
        } else {
            for r in &mut raw {
                *r /= sum;
            }
        }
        let mut pairs: Vec<(String, f64)> =
            tokens.iter().cloned().zip(raw).collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        pairs
    }

    fn distribution_samples(
        &self,
        request: &CompletionRequest,
        pairs: &[(String, f64)],
    ) -> Vec<SampleOutput> {
        let kept = pairs.len().min(request.top_k.max(1) as usize);
        let tops: Vec<TokenLogprob> = pairs[..kept]
            .iter()
            .map(|(t, p)| TokenLogprob { token: t.clone(), logprob: p.max(1e-300).ln() })
            .collect();
        (0..request.n_samples)
            .map(|i| {
                let token = if request.temperature == 0.0 {
                    pairs[0].0.clone()
                } else {
                    self.weighted_pick(&request.prompt, i, pairs)
                };
                let logprob = pairs
                    .iter()
                    .find(|(t, _)| *t == token)
                    .map(|(_, p)| p.max(1e-300).ln())
                    .unwrap_or(-30.0);
                SampleOutput {
                    text: token.clone(),
                    token_logprobs: self
                        .is_white_box()
                        .then(|| vec![TokenLogprob { token: token.clone(), logprob }]),
                    top_logprobs: self.is_white_box().then(|| vec![tops.clone()]),
                }
            })
            .collect()
    }

    fn weighted_pick(&self, prompt: &str, sample: u32, pairs: &[(String, f64)]) -> String {
        let u = unit(self.seed, &["pick", prompt, &sample.to_string()]);
        let mut acc = 0.0;
        for (t, p) in pairs {
            acc += p;
            if u < acc {
                return t.clone();
            }
        }
        pairs.last().expect("non-empty distribution").0.clone()
    }

    fn confidence_samples(&self, request: &CompletionRequest) -> Vec<SampleOutput> {
        let base = 100.0 * unit(self.seed, &["confbase", &request.prompt]);
        (0..request.n_samples)
            .map(|i| {
                let text = if request.temperature == 0.0 {
                    format!("Confidence: {}", base.round() as i64)
                } else if unit(self.seed, &["confjunk", &request.prompt, &i.to_string()]) < 0.08 {
                    "I would rather not commit to a number.".to_string()
                } else {
                    let wobble =
                        20.0 * (unit(self.seed, &["conf", &request.prompt, &i.to_string()]) - 0.5);
                    let v = (base + wobble).clamp(0.0, 100.0).round() as i64;
                    format!("Confidence: {v}")
                };
                SampleOutput { text, ..SampleOutput::default() }
            })
            .collect()
    }

    fn vocab_samples(&self, request: &CompletionRequest) -> Vec<SampleOutput> {
        let vocab = &self.answer_vocab;
        let preferred_idx = (unit(self.seed, &["preferred", &request.prompt])
            * vocab.len() as f64) as usize;
        let preferred = &vocab[preferred_idx.min(vocab.len() - 1)];
        (0..request.n_samples)
            .map(|i| {
                let text = if request.temperature == 0.0 {
                    preferred.clone()
                } else {
                    let u = unit(self.seed, &["gen", &request.prompt, &i.to_string()]);
                    if u < 0.05 {
                        "it is honestly hard to tell".to_string()
                    } else if u < 0.60 {
                        preferred.clone()
                    } else {
                        let alt = (unit(self.seed, &["alt", &request.prompt, &i.to_string()])
                            * vocab.len() as f64) as usize;
                        vocab[alt.min(vocab.len() - 1)].clone()
                    }
                };
                SampleOutput {
                    text: text.clone(),
                    token_logprobs: self.is_white_box().then(|| {
                        mock_tokenize(&text)
                            .into_iter()
                            .map(|t| TokenLogprob { token: t, logprob: -0.3 })
                            .collect()
                    }),
                    top_logprobs: None,
                }
            })
            .collect()
    }

    fn option_letters(prompt: &str) -> Vec<String> {
        let mut letters = Vec::new();
        for line in prompt.lines() {
            let line = line.trim_start();
            if line.len() >= 3 && line.starts_with('(') && line.as_bytes()[2] == b')' {
                let c = line.as_bytes()[1] as char;
                if c.is_ascii_uppercase() {
                    let token = format!(" {c}");
                    if !letters.contains(&token) {
                        letters.push(token);
                    }
                }
            }
        }
        letters
    }
}

impl Backend for SeededMockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let prompt = &request.prompt;
        let lower = prompt.to_lowercase();

        let samples = if lower.contains("true or false?") {
            let p_true = 0.02 + 0.96 * unit(self.seed, &["tf", prompt]);
            let pairs = {
                let mut pairs =
                    vec![(" true".to_string(), p_true), (" false".to_string(), 1.0 - p_true)];
                pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
                pairs
            };
            self.distribution_samples(request, &pairs)
        } else if !Self::option_letters(prompt).is_empty() {
            let letters = Self::option_letters(prompt);
            let pairs = self.candidate_distribution(prompt, &letters);
            self.distribution_samples(request, &pairs)
        } else if lower.contains("confidence:") {
            self.confidence_samples(request)
        } else if !self.answer_vocab.is_empty() {
            self.vocab_samples(request)
        } else {
            (0..request.n_samples)
                .map(|_| SampleOutput {
                    text: "ok".into(),
                    token_logprobs: self
                        .is_white_box()
                        .then(|| vec![TokenLogprob { token: "ok".into(), logprob: -0.5 }]),
                    top_logprobs: None,
                })
                .collect()
        };

        let prompt_logprobs = (request.echo_prompt_logprobs && self.is_white_box()).then(|| {
            mock_tokenize(prompt)
                .into_iter()
                .enumerate()
                .map(|(i, token)| {
                    let u = unit(self.seed, &["echo", prompt, &i.to_string(), &token]);
                    TokenLogprob { token, logprob: -(0.05 + 2.95 * u) }
                })
                .collect()
        });

        Ok(CompletionResponse { samples, prompt_logprobs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::token_prob;

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest { prompt: prompt.into(), ..Default::default() }
    }

    #[test]
    fn scripted_responses_are_byte_identical() {
        let backend = ScriptedBackend::white_box("s")
            .script_first_token("P", &[(" true", -0.105), (" false", -2.30)]);
        let a = backend.complete(&request("P")).unwrap();
        let b = backend.complete(&request("P")).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn unscripted_prompt_is_an_error() {
        let backend = ScriptedBackend::white_box("s");
        assert!(matches!(
            backend.complete(&request("unknown")),
            Err(BackendError::MalformedResponse(_))
        ));
    }

    #[test]
    fn seeded_mock_is_deterministic() {
        let backend = SeededMockBackend::new(BackendMode::WhiteBox, 7);
        let req = CompletionRequest {
            prompt: "Is water wet? - true or false? A.".into(),
            want_logprobs: true,
            n_samples: 3,
            temperature: 0.5,
            ..Default::default()
        };
        let a = backend.complete(&req).unwrap();
        let b = backend.complete(&req).unwrap();
        assert_eq!(a, b);
        let other = SeededMockBackend::new(BackendMode::WhiteBox, 8);
        assert_ne!(a, other.complete(&req).unwrap());
    }

    #[test]
    fn true_false_prompts_yield_complementary_probabilities() {
        let backend = SeededMockBackend::new(BackendMode::WhiteBox, 7);
        let resp = backend
            .complete(&request("statement - true or false? A."))
            .unwrap();
        let p_true = token_prob(&resp, "true").unwrap();
        let p_false = token_prob(&resp, "false").unwrap();
        assert!((p_true + p_false - 1.0).abs() < 1e-9);
        assert!(p_true > 0.0 && p_false > 0.0);
    }

    #[test]
    fn option_prompts_yield_letter_distributions() {
        let backend = SeededMockBackend::new(BackendMode::WhiteBox, 7);
        let prompt = "Pick one:\n(A) Coreferent\n(B) Distinct\n";
        let resp = backend.complete(&request(prompt)).unwrap();
        let pa = token_prob(&resp, "A").unwrap();
        let pb = token_prob(&resp, "B").unwrap();
        assert!(pa + pb <= 1.0 + 1e-9);
        assert!(pa > 0.0 || pb > 0.0);
    }

    #[test]
    fn temperature_zero_generation_is_constant() {
        let backend = SeededMockBackend::new(BackendMode::BlackBox, 7)
            .with_answer_vocab(vec!["coreferent".into(), "distinct".into()]);
        let req = CompletionRequest {
            prompt: "are they the same?".into(),
            n_samples: 10,
            temperature: 0.0,
            ..Default::default()
        };
        let resp = backend.complete(&req).unwrap();
        assert_eq!(resp.samples.len(), 10);
        let first = &resp.samples[0].text;
        assert!(resp.samples.iter().all(|s| s.text == *first));
    }

    #[test]
    fn echo_returns_prompt_tokens() {
        let backend = SeededMockBackend::new(BackendMode::WhiteBox, 7);
        let req = CompletionRequest {
            prompt: "label description. the example text".into(),
            echo_prompt_logprobs: true,
            ..Default::default()
        };
        let resp = backend.complete(&req).unwrap();
        let echoed: String = resp
            .prompt_logprobs
            .unwrap()
            .iter()
            .map(|t| t.token.as_str())
            .collect();
        assert_eq!(echoed, "label description. the example text");
    }

    #[test]
    fn mock_tokenizer_round_trips_normalized_whitespace() {
        let tokens = mock_tokenize("a  b\n c");
        assert_eq!(tokens.concat(), "a b c");
    }
}
