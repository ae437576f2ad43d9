//! Factor-graph data model shared by every other module: decisions,
//! outcomes, weights, assignments, and problem instances.
//!
//! A problem is a set of multi-class *decisions*. Each decision has labels
//! `0..K-1` and, per label, one binary decision variable `d` plus one binary
//! *outcome* variable `p` per scoring strategy that scored it. Outcome
//! variables carry the confidence weights; decision variables carry none and
//! exist to tie strategies together through linking constraints. The MAP
//! objective is the weighted sum over outcome variables.

mod json;

pub use json::{AssignmentDoc, PROBLEM_SCHEMA};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{self, ConstraintError, ConstraintSpec, LinearConstraint};

/// Identifies one multi-class decision within a problem.
///
/// Ordering is lexicographic on (task_instance, subproblem, locus), which
/// fixes the canonical decision order used for solving and tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DecisionId {
    /// Opaque identifier of the task instance (tweet id, document id, ...).
    pub task_instance: String,
    /// Sub-problem this decision belongs to, e.g. "moral_foundation",
    /// "moral_role", or "coref_pair".
    pub subproblem: String,
    /// Task-specific key within the instance (entity index, mention pair).
    pub locus: String,
}

impl DecisionId {
    pub fn new(
        task_instance: impl Into<String>,
        subproblem: impl Into<String>,
        locus: impl Into<String>,
    ) -> Self {
        Self {
            task_instance: task_instance.into(),
            subproblem: subproblem.into(),
            locus: locus.into(),
        }
    }
}

impl fmt::Display for DecisionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.task_instance, self.subproblem, self.locus)
    }
}

/// Identifier of a prompting strategy (the `p` index of outcome variables).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyId(pub String);

impl StrategyId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Identity of a single binary variable.
///
/// Decision variables sort before outcome variables; within each kind the
/// order is lexicographic on (decision, label[, strategy]).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarId {
    Decision {
        decision: DecisionId,
        label: u32,
    },
    Outcome {
        decision: DecisionId,
        label: u32,
        strategy: StrategyId,
    },
}

impl VarId {
    pub fn decision_id(&self) -> &DecisionId {
        match self {
            VarId::Decision { decision, .. } | VarId::Outcome { decision, .. } => decision,
        }
    }

    pub fn label(&self) -> u32 {
        match self {
            VarId::Decision { label, .. } | VarId::Outcome { label, .. } => *label,
        }
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarId::Decision { decision, label } => write!(f, "d[{decision}#{label}]"),
            VarId::Outcome { decision, label, strategy } => {
                write!(f, "p[{decision}#{label}@{strategy}]")
            }
        }
    }
}

/// A weighted binary outcome variable: strategy `strategy` assigning label
/// `label` to `decision`, with confidence weight in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeVariable {
    pub decision: DecisionId,
    pub label: u32,
    pub strategy: StrategyId,
    weight: f64,
}

impl OutcomeVariable {
    pub fn new(
        decision: DecisionId,
        label: u32,
        strategy: StrategyId,
        weight: f64,
    ) -> Result<Self, ModelError> {
        if !weight.is_finite() || !(0.0..=1.0).contains(&weight) {
            return Err(ModelError::InvalidWeight {
                var: format!("({decision}, {label}, {strategy})"),
                weight,
            });
        }
        Ok(Self { decision, label, strategy, weight })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn var_id(&self) -> VarId {
        VarId::Outcome {
            decision: self.decision.clone(),
            label: self.label,
            strategy: self.strategy.clone(),
        }
    }
}

/// A strategy-agnostic decision variable `d` for (decision, label), linked
/// to one outcome variable per strategy that scored the decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionVariable {
    pub decision: DecisionId,
    pub label: u32,
    /// Strategies with a linked outcome variable; never empty.
    pub strategies: Vec<StrategyId>,
}

impl DecisionVariable {
    pub fn var_id(&self) -> VarId {
        VarId::Decision { decision: self.decision.clone(), label: self.label }
    }

    pub fn linked_outcomes(&self) -> impl Iterator<Item = VarId> + '_ {
        self.strategies.iter().map(|s| VarId::Outcome {
            decision: self.decision.clone(),
            label: self.label,
            strategy: s.clone(),
        })
    }
}

/// Declares a decision and its label count when building a problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSpec {
    pub id: DecisionId,
    pub num_labels: u32,
}

/// Raw per-label scores one strategy produced for one decision. This is the
/// minimal input the problem builder needs; `scoring::ScoreTable` converts
/// into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionScores {
    pub decision: DecisionId,
    pub strategy: StrategyId,
    pub scores: Vec<f64>,
}

/// Full input to [`StructuredProblem::build`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub decisions: Vec<DecisionSpec>,
    pub scores: Vec<DecisionScores>,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    /// Gold label per decision, if known.
    #[serde(default)]
    pub gold: Option<BTreeMap<DecisionId, u32>>,
    /// When set, every decision must be covered by every listed strategy
    /// unless `allow_partial_coverage` is true.
    #[serde(default)]
    pub expected_strategies: Option<BTreeSet<StrategyId>>,
    /// Permit decisions scored by a strict subset of the expected
    /// strategies.
    #[serde(default)]
    pub allow_partial_coverage: bool,
}

/// A total 0/1 assignment over the variables of a problem.
///
/// Serializes as a sorted list of `[variable, value]` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    values: BTreeMap<VarId, bool>,
}

impl Serialize for Assignment {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.values.iter())
    }
}

impl<'de> Deserialize<'de> for Assignment {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let pairs = Vec::<(VarId, bool)>::deserialize(deserializer)?;
        Ok(Self { values: pairs.into_iter().collect() })
    }
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, var: VarId, value: bool) {
        self.values.insert(var, value);
    }

    pub fn get(&self, var: &VarId) -> Option<bool> {
        self.values.get(var).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VarId, bool)> {
        self.values.iter().map(|(k, &v)| (k, v))
    }

    /// The label whose decision variable is active for `decision`, if
    /// exactly the multiclass convention holds.
    pub fn label_of(&self, decision: &DecisionId, num_labels: u32) -> Option<u32> {
        (0..num_labels).find(|&k| {
            self.get(&VarId::Decision { decision: decision.clone(), label: k })
                .unwrap_or(false)
        })
    }

    /// Merge two assignments over disjoint variable sets.
    pub fn union(mut self, other: Assignment) -> Assignment {
        self.values.extend(other.values);
        self
    }
}

/// Internal per-decision bookkeeping: canonical strategies and the weight
/// of each (label, strategy) outcome.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DecisionGroup {
    pub id: DecisionId,
    pub num_labels: u32,
    /// Strategies covering this decision, sorted.
    pub strategies: Vec<StrategyId>,
    /// `weights[label][strategy_index]`.
    pub weights: Vec<Vec<f64>>,
}

impl DecisionGroup {
    /// Total weight across strategies if this decision takes `label`.
    pub fn label_weight(&self, label: u32) -> f64 {
        self.weights[label as usize].iter().sum()
    }

    /// Best achievable weight over labels, ignoring constraints.
    pub fn max_label_weight(&self) -> f64 {
        (0..self.num_labels).map(|k| self.label_weight(k)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// An immutable factor-graph instance: decisions, weighted outcomes,
/// compiled linear constraints, and an optional gold assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredProblem {
    pub(crate) groups: Vec<DecisionGroup>,
    pub(crate) constraints: Vec<LinearConstraint>,
    /// Number of auto-attached structural constraints (multiclass +
    /// linking) at the head of `constraints`.
    pub(crate) n_structural: usize,
    pub(crate) gold_labels: Option<BTreeMap<DecisionId, u32>>,
    index: BTreeMap<DecisionId, usize>,
}

/// Constraint tags that are always recognized even when no constraint
/// carries them.
pub const STANDARD_TAGS: &[&str] =
    &["multiclass", "link_ub", "link_lb", "C1", "C2", "transitivity"];

impl StructuredProblem {
    /// Build a problem from decision specs, score tables, and declarative
    /// constraint specs. Standard multiclass and linking constraints are
    /// attached automatically; the given specs are compiled after them.
    ///
    /// Construction is deterministic: decisions, outcomes, and constraints
    /// come out in canonical (sorted) order regardless of input order.
    pub fn build(spec: ProblemSpec) -> Result<Self, ModelError> {
        let ProblemSpec {
            mut decisions,
            scores,
            constraints: constraint_specs,
            gold,
            expected_strategies,
            allow_partial_coverage,
        } = spec;

        decisions.sort_by(|a, b| a.id.cmp(&b.id));
        decisions.dedup_by(|a, b| a.id == b.id);

        let mut index = BTreeMap::new();
        for (i, d) in decisions.iter().enumerate() {
            if d.num_labels == 0 {
                return Err(ModelError::ZeroLabels(d.id.to_string()));
            }
            index.insert(d.id.clone(), i);
        }

        // Collect scores per decision, validating references and lengths.
        let mut per_decision: Vec<BTreeMap<StrategyId, Vec<f64>>> =
            vec![BTreeMap::new(); decisions.len()];
        for s in &scores {
            let &i = index
                .get(&s.decision)
                .ok_or_else(|| ModelError::DanglingReference(s.decision.to_string()))?;
            let expected = decisions[i].num_labels as usize;
            if s.scores.len() != expected {
                return Err(ModelError::ScoreLength {
                    decision: s.decision.to_string(),
                    strategy: s.strategy.to_string(),
                    got: s.scores.len(),
                    expected,
                });
            }
            if per_decision[i].insert(s.strategy.clone(), s.scores.clone()).is_some() {
                return Err(ModelError::DuplicateScores {
                    decision: s.decision.to_string(),
                    strategy: s.strategy.to_string(),
                });
            }
        }

        let mut groups = Vec::with_capacity(decisions.len());
        for (i, d) in decisions.iter().enumerate() {
            let tables = &per_decision[i];
            if tables.is_empty() {
                return Err(ModelError::MissingScore(d.id.to_string()));
            }
            if let Some(expected) = &expected_strategies {
                if !allow_partial_coverage {
                    for strat in expected {
                        if !tables.contains_key(strat) {
                            return Err(ModelError::MissingStrategy {
                                decision: d.id.to_string(),
                                strategy: strat.to_string(),
                            });
                        }
                    }
                }
            }
            let strategies: Vec<StrategyId> = tables.keys().cloned().collect();
            let mut weights = vec![Vec::with_capacity(strategies.len()); d.num_labels as usize];
            for (strat, table) in tables {
                for (k, &w) in table.iter().enumerate() {
                    // Validate through the outcome constructor so the
                    // weight invariant lives in one place.
                    OutcomeVariable::new(d.id.clone(), k as u32, strat.clone(), w)?;
                    weights[k].push(w);
                }
            }
            groups.push(DecisionGroup {
                id: d.id.clone(),
                num_labels: d.num_labels,
                strategies,
                weights,
            });
        }

        // Structural constraints: multiclass per decision, then linking per
        // (decision, label).
        let mut compiled = Vec::new();
        for g in &groups {
            compiled.push(constraints::compile_multiclass(&g.id, g.num_labels)?);
        }
        for g in &groups {
            for k in 0..g.num_labels {
                compiled.extend(constraints::compile_decision_link(&g.id, k, &g.strategies)?);
            }
        }
        let n_structural = compiled.len();

        let lookup = |id: &DecisionId| -> Option<u32> {
            index.get(id).map(|&i| groups[i].num_labels)
        };
        for cs in &constraint_specs {
            compiled.extend(constraints::compile_spec(cs, &lookup)?);
        }
        // Every compiled constraint must reference known variables.
        for c in &compiled[n_structural..] {
            for (var, _) in c.terms() {
                let Some(&i) = index.get(var.decision_id()) else {
                    return Err(ModelError::DanglingReference(var.decision_id().to_string()));
                };
                if var.label() >= groups[i].num_labels {
                    return Err(ModelError::LabelOutOfRange {
                        var: var.to_string(),
                        num_labels: groups[i].num_labels,
                    });
                }
            }
        }

        if let Some(gold) = &gold {
            for (id, &label) in gold {
                let Some(&i) = index.get(id) else {
                    return Err(ModelError::DanglingReference(id.to_string()));
                };
                if label >= groups[i].num_labels {
                    return Err(ModelError::LabelOutOfRange {
                        var: format!("gold label for {id}"),
                        num_labels: groups[i].num_labels,
                    });
                }
            }
        }

        Ok(Self { groups, constraints: compiled, n_structural, gold_labels: gold, index })
    }

    pub fn num_decisions(&self) -> usize {
        self.groups.len()
    }

    pub fn num_outcomes(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.num_labels as usize * g.strategies.len())
            .sum()
    }

    pub fn num_decision_variables(&self) -> usize {
        self.groups.iter().map(|g| g.num_labels as usize).sum()
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    /// Constraints beyond the auto-attached multiclass/linking ones.
    pub fn hard_constraints(&self) -> &[LinearConstraint] {
        &self.constraints[self.n_structural..]
    }

    pub fn decision_ids(&self) -> impl Iterator<Item = &DecisionId> {
        self.groups.iter().map(|g| &g.id)
    }

    pub fn num_labels_of(&self, id: &DecisionId) -> Option<u32> {
        self.index.get(id).map(|&i| self.groups[i].num_labels)
    }

    pub fn strategies_of(&self, id: &DecisionId) -> Option<&[StrategyId]> {
        self.index.get(id).map(|&i| self.groups[i].strategies.as_slice())
    }

    pub(crate) fn group(&self, id: &DecisionId) -> Option<&DecisionGroup> {
        self.index.get(id).map(|&i| &self.groups[i])
    }

    pub(crate) fn group_index(&self, id: &DecisionId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// All decision variables in canonical order.
    pub fn decision_variables(&self) -> Vec<DecisionVariable> {
        let mut out = Vec::with_capacity(self.num_decision_variables());
        for g in &self.groups {
            for k in 0..g.num_labels {
                out.push(DecisionVariable {
                    decision: g.id.clone(),
                    label: k,
                    strategies: g.strategies.clone(),
                });
            }
        }
        out
    }

    /// All outcome variables in canonical order.
    pub fn outcome_variables(&self) -> Vec<OutcomeVariable> {
        let mut out = Vec::with_capacity(self.num_outcomes());
        for g in &self.groups {
            for k in 0..g.num_labels {
                for (si, s) in g.strategies.iter().enumerate() {
                    out.push(OutcomeVariable {
                        decision: g.id.clone(),
                        label: k,
                        strategy: s.clone(),
                        weight: g.weights[k as usize][si],
                    });
                }
            }
        }
        out
    }

    /// All variable identities in canonical order (decision variables
    /// first, then outcomes).
    pub fn var_ids(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        for g in &self.groups {
            for k in 0..g.num_labels {
                out.push(VarId::Decision { decision: g.id.clone(), label: k });
            }
        }
        for g in &self.groups {
            for k in 0..g.num_labels {
                for s in &g.strategies {
                    out.push(VarId::Outcome {
                        decision: g.id.clone(),
                        label: k,
                        strategy: s.clone(),
                    });
                }
            }
        }
        out
    }

    /// The gold assignment, if gold labels were provided. Outcome variables
    /// follow the canonical completion: every strategy's outcome at the
    /// gold label is active.
    pub fn gold_assignment(&self) -> Option<Assignment> {
        let gold = self.gold_labels.as_ref()?;
        let labels: Vec<u32> = self
            .groups
            .iter()
            .map(|g| gold.get(&g.id).copied())
            .collect::<Option<_>>()?;
        Some(self.assignment_from_labels_full(&labels))
    }

    pub fn gold_labels(&self) -> Option<&BTreeMap<DecisionId, u32>> {
        self.gold_labels.as_ref()
    }

    /// Construct a total assignment from a label choice per decision (in
    /// canonical decision order), activating every outcome of the chosen
    /// label.
    pub(crate) fn assignment_from_labels_full(&self, labels: &[u32]) -> Assignment {
        let mut a = Assignment::new();
        for (g, &label) in self.groups.iter().zip(labels) {
            for k in 0..g.num_labels {
                a.set(VarId::Decision { decision: g.id.clone(), label: k }, k == label);
                for s in &g.strategies {
                    a.set(
                        VarId::Outcome {
                            decision: g.id.clone(),
                            label: k,
                            strategy: s.clone(),
                        },
                        k == label,
                    );
                }
            }
        }
        a
    }

    /// Labels per decision (canonical order) extracted from a total
    /// assignment.
    pub fn labels_from_assignment(
        &self,
        assignment: &Assignment,
    ) -> Result<Vec<u32>, ModelError> {
        self.groups
            .iter()
            .map(|g| {
                (0..g.num_labels)
                    .find(|&k| {
                        assignment
                            .get(&VarId::Decision { decision: g.id.clone(), label: k })
                            .unwrap_or(false)
                    })
                    .ok_or_else(|| ModelError::PartialAssignment(g.id.to_string()))
            })
            .collect()
    }

    /// A copy of this problem with every outcome weight replaced by
    /// `f(outcome)`. Constraints, gold, and ordering are preserved.
    pub fn reweighted(
        &self,
        mut f: impl FnMut(&OutcomeVariable) -> f64,
    ) -> Result<StructuredProblem, ModelError> {
        let mut clone = self.clone();
        for g in &mut clone.groups {
            for k in 0..g.num_labels {
                for (si, s) in g.strategies.iter().enumerate() {
                    let current = OutcomeVariable {
                        decision: g.id.clone(),
                        label: k,
                        strategy: s.clone(),
                        weight: g.weights[k as usize][si],
                    };
                    let w = f(&current);
                    // Re-validate through the constructor.
                    OutcomeVariable::new(g.id.clone(), k, s.clone(), w)?;
                    g.weights[k as usize][si] = w;
                }
            }
        }
        Ok(clone)
    }

    /// Check that `assignment` is total over this problem's variables.
    pub fn check_total(&self, assignment: &Assignment) -> Result<(), ModelError> {
        for var in self.var_ids() {
            if assignment.get(&var).is_none() {
                return Err(ModelError::PartialAssignment(var.to_string()));
            }
        }
        Ok(())
    }

    /// Objective value of a total assignment: the weighted sum over active
    /// outcome variables. Decision variables contribute nothing.
    pub fn objective_value(&self, assignment: &Assignment) -> Result<f64, ModelError> {
        self.check_total(assignment)?;
        let mut total = 0.0;
        for o in self.outcome_variables() {
            if assignment.get(&o.var_id()).unwrap_or(false) {
                total += o.weight();
            }
        }
        Ok(total)
    }

    /// Number of constraints with the given tag that the assignment
    /// violates. The tag must either be standard or appear on some
    /// constraint of this problem.
    pub fn count_violations(
        &self,
        assignment: &Assignment,
        tag: &str,
    ) -> Result<usize, ModelError> {
        self.check_total(assignment)?;
        if !STANDARD_TAGS.contains(&tag) && !self.constraints.iter().any(|c| c.tag() == tag) {
            return Err(ModelError::UnknownTag(tag.to_string()));
        }
        let mut count = 0;
        for c in self.constraints.iter().filter(|c| c.tag() == tag) {
            if !self.constraint_satisfied(c, assignment)? {
                count += 1;
            }
        }
        Ok(count)
    }

    /// Violation counts for every tag present on this problem's
    /// constraints.
    pub fn violations_by_tag(
        &self,
        assignment: &Assignment,
    ) -> Result<BTreeMap<String, usize>, ModelError> {
        self.check_total(assignment)?;
        let mut out: BTreeMap<String, usize> = BTreeMap::new();
        for c in &self.constraints {
            let entry = out.entry(c.tag().to_string()).or_insert(0);
            if !self.constraint_satisfied(c, assignment)? {
                *entry += 1;
            }
        }
        Ok(out)
    }

    /// Whether the assignment satisfies every constraint.
    pub fn is_feasible(&self, assignment: &Assignment) -> Result<bool, ModelError> {
        self.check_total(assignment)?;
        for c in &self.constraints {
            if !self.constraint_satisfied(c, assignment)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn constraint_satisfied(
        &self,
        c: &LinearConstraint,
        assignment: &Assignment,
    ) -> Result<bool, ModelError> {
        c.satisfied_by(|var| assignment.get(var))
            .ok_or_else(|| ModelError::PartialAssignment(c.tag().to_string()))
    }
}

/// Errors raised by model construction and evaluation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("decision {0} has no scores from any strategy")]
    MissingScore(String),
    #[error("decision {decision} is not covered by strategy {strategy}")]
    MissingStrategy { decision: String, strategy: String },
    #[error("reference to unknown decision {0}")]
    DanglingReference(String),
    #[error("{var} exceeds the decision's label range (K={num_labels})")]
    LabelOutOfRange { var: String, num_labels: u32 },
    #[error("decision {0} declared with zero labels")]
    ZeroLabels(String),
    #[error("score vector for {decision} ({strategy}) has length {got}, expected {expected}")]
    ScoreLength { decision: String, strategy: String, got: usize, expected: usize },
    #[error("duplicate score table for {decision} ({strategy})")]
    DuplicateScores { decision: String, strategy: String },
    #[error("weight {weight} for {var} is not a finite value in [0, 1]")]
    InvalidWeight { var: String, weight: f64 },
    #[error("assignment is not total: missing {0}")]
    PartialAssignment(String),
    #[error("unknown constraint tag {0}")]
    UnknownTag(String),
    #[error("constraint error: {0}")]
    Constraint(#[from] ConstraintError),
    #[error("invalid problem document: {0}")]
    Document(String),
}

#[cfg(test)]
mod tests;
