//! Task adapters: dataset ingestion, prompt rendering, decision extraction,
//! and task-specific constraint attachment.
//!
//! Two tasks are built in: [`morality`] (joint moral-foundation and
//! moral-role prediction over tweets, coupled by alignment and
//! role-uniqueness constraints) and [`coref`] (pairwise coreference with
//! transitivity). [`conll`] reads CoNLL-2012 coreference annotations into
//! the coref document model.

pub mod conll;
pub mod coref;
pub mod data;
pub mod morality;
pub mod templates;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::Strategy;

/// Context variant for morality prompts: tweet only, or tweet plus author
/// ideology and topic. Each variant is a separate prompting strategy whose
/// outcomes the decision constraints join.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextVariant {
    Plain,
    IdeologyTopic,
}

impl ContextVariant {
    pub fn suffix(self) -> &'static str {
        match self {
            ContextVariant::Plain => "plain",
            ContextVariant::IdeologyTopic => "context",
        }
    }
}

/// The rendered prompt payload, shaped for whichever scoring function will
/// consume it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RenderedPrompts {
    /// One prompt per candidate label (true/false, verbalized confidence).
    PerLabel(Vec<String>),
    /// A single prompt (multiple choice, generation sampling).
    Single(String),
    /// Several prompts per label (generative classification paraphrases).
    PerLabelMulti(Vec<Vec<String>>),
}

/// Deterministically rendered prompts for one decision under one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_id: String,
    pub strategy: Strategy,
    pub shots: u32,
    pub variant: ContextVariant,
    pub prompts: RenderedPrompts,
    /// The text whose likelihood generative classification scores.
    pub scored_text: Option<String>,
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("{path}:{line}: {message}")]
    Schema { path: String, line: usize, message: String },
    #[error("unknown role label {0:?}")]
    RoleOutOfVocabulary(String),
    #[error("unknown foundation label {0:?}")]
    FoundationOutOfVocabulary(String),
    #[error("instance {instance}: {message}")]
    InvalidInstance { instance: String, message: String },
    #[error("context variant needs {field} but instance {instance} lacks it")]
    MissingField { instance: String, field: &'static str },
    #[error("candidate pair references mention {index} of {count}")]
    PairIndexError { index: usize, count: usize },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}
