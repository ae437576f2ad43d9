//! Confidence-elicitation strategies.
//!
//! Each strategy turns one task decision into backend prompts and emits a
//! normalized [`ScoreTable`] over the decision's labels:
//!
//! - **true/false**: one true/false question per candidate label; the
//!   probability of the "true" token, normalized across labels.
//! - **multiple choice**: one prompt listing lettered options; the
//!   first-token probability of each option letter.
//! - **generative classification**: the label description becomes the
//!   prompt and the classified text's sequence log-likelihood (from echoed
//!   prompt logprobs) scores the label, averaged over description
//!   paraphrases and softmax-normalized.
//! - **generation sampling**: sample n generations, parse each to a label,
//!   score by match fraction.
//! - **verbalized confidence**: ask the model for a 0-100 confidence per
//!   label, average the parsed values.
//!
//! The first three require a white-box backend; the last two work with any
//! backend. Requests route through the response cache when one is
//! configured.

pub mod parse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    BackendError, BackendHandle, CompletionRequest, CompletionResponse, ResponseCache,
};
use crate::model::{DecisionId, DecisionScores, StrategyId};
use crate::util::softmax;

/// The five elicitation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TrueFalse,
    MultipleChoice,
    GenerativeClassification,
    GenerationSampling,
    VerbalizedConfidence,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::TrueFalse,
        Strategy::MultipleChoice,
        Strategy::GenerativeClassification,
        Strategy::GenerationSampling,
        Strategy::VerbalizedConfidence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::TrueFalse => "true_false",
            Strategy::MultipleChoice => "multiple_choice",
            Strategy::GenerativeClassification => "generative_classification",
            Strategy::GenerationSampling => "generation_sampling",
            Strategy::VerbalizedConfidence => "verbalized_confidence",
        }
    }

    pub fn from_name(name: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Whether the strategy needs token logprobs from the backend.
    pub fn is_white_box(self) -> bool {
        matches!(
            self,
            Strategy::TrueFalse | Strategy::MultipleChoice | Strategy::GenerativeClassification
        )
    }

    /// Zero-shot-only strategies (no exemplars are prepended).
    pub fn is_zero_shot_only(self) -> bool {
        matches!(self, Strategy::GenerativeClassification | Strategy::VerbalizedConfidence)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Elicitation knobs. Defaults: temperature 0.5, top-k 5, 10 samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub temperature: f64,
    pub top_k: u32,
    pub n_samples: u32,
    pub max_tokens: u32,
    /// Normalize multiple-choice option scores over the options (raw
    /// values are kept either way).
    pub normalize_multiple_choice: bool,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            top_k: 5,
            n_samples: 10,
            max_tokens: 64,
            normalize_multiple_choice: true,
        }
    }
}

/// Provenance kept alongside the normalized scores.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawScores {
    /// Pre-normalization per-label values (probabilities, fractions, or
    /// mean log-likelihoods depending on the strategy).
    pub unnormalized: Vec<f64>,
    /// Generations drawn per label (sampling strategies) or prompts issued.
    pub sample_count: u32,
    /// Generations that could not be parsed to a label/value.
    pub failed_parses: u32,
    /// True when the uniform fallback replaced an all-zero table.
    pub degenerate: bool,
}

/// Per-decision, per-strategy confidence scores over labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub decision: DecisionId,
    pub strategy: StrategyId,
    pub scores: Vec<f64>,
    pub raw: RawScores,
}

impl ScoreTable {
    /// Validate the table invariant: finite non-negative scores that sum
    /// to 1 within 1e-6 unless flagged degenerate.
    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(ScoringError::InvalidScore(self.decision.to_string()));
        }
        let sum: f64 = self.scores.iter().sum();
        if !self.raw.degenerate && (sum - 1.0).abs() > 1e-6 {
            return Err(ScoringError::NotNormalized { decision: self.decision.to_string(), sum });
        }
        Ok(())
    }

    pub fn to_decision_scores(&self) -> DecisionScores {
        DecisionScores {
            decision: self.decision.clone(),
            strategy: self.strategy.clone(),
            scores: self.scores.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("two options map to the same answer token {0:?}")]
    OptionCollision(String),
    #[error("empty text for generative classification of {0}")]
    EmptyText(String),
    #[error("no prompts supplied for {0}")]
    NoPrompts(String),
    #[error("prompt count mismatch for {decision}: got {got}, expected {expected}")]
    PromptCount { decision: String, got: usize, expected: usize },
    #[error("echoed prompt does not end with the classified text for {0}")]
    EchoMismatch(String),
    #[error("score table for {0} contains a non-finite or negative value")]
    InvalidScore(String),
    #[error("score table for {decision} sums to {sum}, expected 1")]
    NotNormalized { decision: String, sum: f64 },
}

/// Shared scoring environment: backend handle, optional persistent cache,
/// and elicitation parameters.
pub struct ScoringContext<'a> {
    pub backend: &'a BackendHandle,
    pub cache: Option<&'a ResponseCache>,
    pub params: ScoringParams,
}

impl<'a> ScoringContext<'a> {
    pub fn new(backend: &'a BackendHandle) -> Self {
        Self { backend, cache: None, params: ScoringParams::default() }
    }

    pub fn with_cache(mut self, cache: &'a ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_params(mut self, params: ScoringParams) -> Self {
        self.params = params;
        self
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ScoringError> {
        let response = match self.cache {
            Some(cache) => cache.get_or_compute(self.backend.descriptor(), request, || {
                self.backend.complete(request)
            })?,
            None => self.backend.complete(request)?,
        };
        Ok(response)
    }

    fn logprob_request(&self, prompt: &str) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.to_string(),
            max_tokens: 1,
            temperature: self.params.temperature,
            top_k: self.params.top_k,
            n_samples: 1,
            want_logprobs: true,
            echo_prompt_logprobs: false,
        }
    }

    fn sampling_request(&self, prompt: &str, n_samples: u32) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.to_string(),
            max_tokens: self.params.max_tokens,
            temperature: self.params.temperature,
            top_k: self.params.top_k,
            n_samples,
            want_logprobs: false,
            echo_prompt_logprobs: false,
        }
    }
}

/// Normalize `raw` into a distribution. All-zero tables fall back to
/// uniform and are flagged degenerate.
fn normalize_or_uniform(raw: &[f64]) -> (Vec<f64>, bool) {
    let sum: f64 = raw.iter().sum();
    if sum > 0.0 {
        (raw.iter().map(|&v| v / sum).collect(), false)
    } else {
        (vec![1.0 / raw.len() as f64; raw.len()], true)
    }
}

/// True/false elicitation: one prompt per candidate label, each asking
/// whether that label holds. The score of label `c` is
/// `p(true | prompt_c)` normalized over all labels.
pub fn score_true_false(
    ctx: &ScoringContext,
    decision: &DecisionId,
    strategy: &StrategyId,
    label_prompts: &[String],
) -> Result<ScoreTable, ScoringError> {
    if label_prompts.is_empty() {
        return Err(ScoringError::NoPrompts(decision.to_string()));
    }
    let mut raw = Vec::with_capacity(label_prompts.len());
    for prompt in label_prompts {
        let response = ctx.complete(&ctx.logprob_request(prompt))?;
        raw.push(crate::backend::token_prob(&response, "true")?);
    }
    let (scores, degenerate) = normalize_or_uniform(&raw);
    let table = ScoreTable {
        decision: decision.clone(),
        strategy: strategy.clone(),
        scores,
        raw: RawScores {
            unnormalized: raw,
            sample_count: label_prompts.len() as u32,
            failed_parses: 0,
            degenerate,
        },
    };
    table.validate()?;
    Ok(table)
}

/// Option letters for a multiple-choice prompt: "A", "B", ...
pub fn option_letters(n: usize) -> Vec<String> {
    (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect()
}

/// Multiple-choice elicitation: a single prompt lists one lettered option
/// per label; the score of label `k` is the first-token probability of its
/// option letter. Letters absent from the returned top-k floor to zero.
pub fn score_multiple_choice(
    ctx: &ScoringContext,
    decision: &DecisionId,
    strategy: &StrategyId,
    prompt: &str,
    num_labels: usize,
) -> Result<ScoreTable, ScoringError> {
    let letters = option_letters(num_labels);
    {
        let mut seen = std::collections::BTreeSet::new();
        for l in &letters {
            if !seen.insert(crate::backend::normalize_token(l)) {
                return Err(ScoringError::OptionCollision(l.clone()));
            }
        }
    }
    let response = ctx.complete(&ctx.logprob_request(prompt))?;
    let raw: Vec<f64> = letters
        .iter()
        .map(|l| crate::backend::token_prob(&response, l))
        .collect::<Result<_, _>>()?;
    let (scores, degenerate) = if ctx.params.normalize_multiple_choice {
        normalize_or_uniform(&raw)
    } else {
        let degenerate = raw.iter().all(|&v| v == 0.0);
        (raw.clone(), degenerate)
    };
    let table = ScoreTable {
        decision: decision.clone(),
        strategy: strategy.clone(),
        scores,
        raw: RawScores { unnormalized: raw, sample_count: 1, failed_parses: 0, degenerate },
    };
    if ctx.params.normalize_multiple_choice {
        table.validate()?;
    }
    Ok(table)
}

/// Sum of the logprobs of the echoed prompt tokens that spell `text` at the
/// end of the prompt. Comparison is whitespace-normalized; the text must
/// start at a token boundary.
fn suffix_logprob_sum(
    response: &CompletionResponse,
    text: &str,
    decision: &DecisionId,
) -> Result<f64, ScoringError> {
    let tokens = response.prompt_logprobs.as_ref().ok_or(BackendError::NoLogprobs)?;
    let target: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut suffix = String::new();
    let mut sum = 0.0;
    for t in tokens.iter().rev() {
        suffix.insert_str(0, &t.token);
        sum += t.logprob;
        let normalized: String = suffix.split_whitespace().collect::<Vec<_>>().join(" ");
        if normalized == target {
            return Ok(sum);
        }
        if normalized.len() > target.len() {
            break;
        }
    }
    Err(ScoringError::EchoMismatch(decision.to_string()))
}

/// Generative classification: for each label, `m` description paraphrases
/// each produce a prompt that ends with the text to classify; the label's
/// raw score is the mean over paraphrases of the text's sequence
/// log-likelihood (sum of echoed token logprobs), and the table is the
/// softmax of the per-label means.
pub fn score_generative_classification(
    ctx: &ScoringContext,
    decision: &DecisionId,
    strategy: &StrategyId,
    prompts_per_label: &[Vec<String>],
    text: &str,
) -> Result<ScoreTable, ScoringError> {
    if text.trim().is_empty() {
        return Err(ScoringError::EmptyText(decision.to_string()));
    }
    if prompts_per_label.is_empty() || prompts_per_label.iter().any(|p| p.is_empty()) {
        return Err(ScoringError::NoPrompts(decision.to_string()));
    }
    let mut means = Vec::with_capacity(prompts_per_label.len());
    for prompts in prompts_per_label {
        let mut sums = Vec::with_capacity(prompts.len());
        for prompt in prompts {
            let request = CompletionRequest {
                prompt: prompt.clone(),
                max_tokens: 1,
                temperature: ctx.params.temperature,
                top_k: ctx.params.top_k,
                n_samples: 1,
                want_logprobs: false,
                echo_prompt_logprobs: true,
            };
            let response = ctx.complete(&request)?;
            sums.push(suffix_logprob_sum(&response, text, decision)?);
        }
        means.push(crate::util::mean(&sums));
    }
    let scores = softmax(&means);
    let table = ScoreTable {
        decision: decision.clone(),
        strategy: strategy.clone(),
        scores,
        raw: RawScores {
            unnormalized: means,
            sample_count: prompts_per_label.iter().map(|p| p.len() as u32).sum(),
            failed_parses: 0,
            degenerate: false,
        },
    };
    table.validate()?;
    Ok(table)
}

/// Generation sampling: draw `n` generations from one prompt, parse each to
/// a label, and score each label by its share of the parsed generations.
/// Unparseable generations count toward no label; the parsed mass is
/// renormalized, and an all-unparseable draw falls back to uniform.
pub fn score_generation_sampling(
    ctx: &ScoringContext,
    decision: &DecisionId,
    strategy: &StrategyId,
    prompt: &str,
    labels: &[&str],
) -> Result<ScoreTable, ScoringError> {
    if labels.is_empty() {
        return Err(ScoringError::NoPrompts(decision.to_string()));
    }
    let n = ctx.params.n_samples.max(1);
    let response = ctx.complete(&ctx.sampling_request(prompt, n))?;
    let mut counts = vec![0u32; labels.len()];
    let mut failed = 0u32;
    for sample in &response.samples {
        match parse::match_label(&sample.text, labels) {
            Some(i) => counts[i] += 1,
            None => failed += 1,
        }
    }
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let (scores, degenerate) = normalize_or_uniform(&fractions);
    let table = ScoreTable {
        decision: decision.clone(),
        strategy: strategy.clone(),
        scores,
        raw: RawScores {
            unnormalized: fractions,
            sample_count: n,
            failed_parses: failed,
            degenerate,
        },
    };
    table.validate()?;
    Ok(table)
}

/// Verbalized confidence: per label, ask `n` times for a 0-100 confidence,
/// average the parseable replies, and normalize the per-label means into
/// the table. A label whose replies all fail to parse scores zero.
pub fn score_verbalized_confidence(
    ctx: &ScoringContext,
    decision: &DecisionId,
    strategy: &StrategyId,
    label_prompts: &[String],
) -> Result<ScoreTable, ScoringError> {
    if label_prompts.is_empty() {
        return Err(ScoringError::NoPrompts(decision.to_string()));
    }
    let n = ctx.params.n_samples.max(1);
    let mut means = Vec::with_capacity(label_prompts.len());
    let mut failed = 0u32;
    for prompt in label_prompts {
        let response = ctx.complete(&ctx.sampling_request(prompt, n))?;
        let parsed: Vec<f64> = response
            .samples
            .iter()
            .filter_map(|s| parse::parse_confidence(&s.text))
            .collect();
        failed += (response.samples.len() - parsed.len()) as u32;
        if parsed.is_empty() {
            means.push(0.0);
        } else {
            means.push(crate::util::mean(&parsed) / 100.0);
        }
    }
    let (scores, degenerate) = normalize_or_uniform(&means);
    let table = ScoreTable {
        decision: decision.clone(),
        strategy: strategy.clone(),
        scores,
        raw: RawScores {
            unnormalized: means,
            sample_count: n * label_prompts.len() as u32,
            failed_parses: failed,
            degenerate,
        },
    };
    table.validate()?;
    Ok(table)
}
