//! Combines confidence scores elicited from language models with exact
//! combinatorial inference so that joint predictions respect structural
//! constraints, and trains lightweight calibrators on top of the raw scores.
//!
//! The crate is organized around a small factor-graph data model:
//!
//! - [`model`] — decisions, outcome variables, weights, assignments, and
//!   problem instances.
//! - [`constraints`] — compilation of constraint families (multi-class,
//!   decision linking, horn clauses, mutual exclusion, alignment,
//!   transitivity) into linear inequalities over binary variables.
//! - [`solver`] — exact MAP inference by branch-and-bound, a brute-force
//!   oracle for small instances, and the unconstrained per-decision argmax
//!   baseline.
//! - [`backend`] — uniform access to white-box (token logprobs) and
//!   black-box (text only) language model backends, with a deterministic
//!   mock, an HTTP client, and a persistent response cache.
//! - [`scoring`] — the five confidence-elicitation strategies that turn
//!   prompts into per-label score tables.
//! - [`calibration`] — trainable per-strategy calibrators with local
//!   cross-entropy and global structured-hinge objectives.
//! - [`tasks`] — adapters for the morality-frames and coreference tasks:
//!   datasets, prompt templates, and task constraints.
//! - [`experiments`] — configuration, fold orchestration, metrics, and
//!   report emission.

pub mod backend;
pub mod calibration;
pub mod constraints;
pub mod experiments;
pub mod model;
pub mod scoring;
pub mod seeds;
pub mod solver;
pub mod tasks;
mod util;

pub use model::{
    Assignment, DecisionId, DecisionScores, DecisionSpec, ModelError, OutcomeVariable,
    ProblemSpec, StrategyId, StructuredProblem, VarId,
};
pub use solver::{SolveLimits, SolveResult, SolverError};
