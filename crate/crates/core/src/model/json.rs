//! Problem document serialization: a versioned JSON snapshot of a compiled
//! problem with stable field names.

use serde::{Deserialize, Serialize};

use super::{
    Assignment, DecisionGroup, DecisionId, ModelError, OutcomeVariable, StrategyId,
    StructuredProblem, VarId,
};
use crate::constraints::LinearConstraint;

pub const PROBLEM_SCHEMA: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DecisionDoc {
    task_instance: String,
    subproblem: String,
    locus: String,
    num_labels: u32,
    strategies: Vec<StrategyId>,
}

#[derive(Serialize, Deserialize)]
struct OutcomeDoc {
    decision: usize,
    label: u32,
    strategy: StrategyId,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct GoldDoc {
    decision: usize,
    label: u32,
}

#[derive(Serialize, Deserialize)]
struct ProblemDoc {
    schema: u32,
    decisions: Vec<DecisionDoc>,
    outcomes: Vec<OutcomeDoc>,
    constraints: Vec<LinearConstraint>,
    n_structural: usize,
    gold: Option<Vec<GoldDoc>>,
}

impl StructuredProblem {
    /// Serialize to the versioned JSON document format.
    pub fn to_json(&self) -> String {
        let decisions = self
            .groups
            .iter()
            .map(|g| DecisionDoc {
                task_instance: g.id.task_instance.clone(),
                subproblem: g.id.subproblem.clone(),
                locus: g.id.locus.clone(),
                num_labels: g.num_labels,
                strategies: g.strategies.clone(),
            })
            .collect();
        let mut outcomes = Vec::new();
        for (i, g) in self.groups.iter().enumerate() {
            for k in 0..g.num_labels {
                for (si, s) in g.strategies.iter().enumerate() {
                    outcomes.push(OutcomeDoc {
                        decision: i,
                        label: k,
                        strategy: s.clone(),
                        weight: g.weights[k as usize][si],
                    });
                }
            }
        }
        let gold = self.gold_labels.as_ref().map(|gold| {
            self.groups
                .iter()
                .enumerate()
                .filter_map(|(i, g)| {
                    gold.get(&g.id).map(|&label| GoldDoc { decision: i, label })
                })
                .collect()
        });
        let doc = ProblemDoc {
            schema: PROBLEM_SCHEMA,
            decisions,
            outcomes,
            constraints: self.constraints.clone(),
            n_structural: self.n_structural,
            gold,
        };
        serde_json::to_string_pretty(&doc).expect("problem serialization cannot fail")
    }

    /// Reconstruct a problem from its JSON document, re-validating
    /// referential integrity and weight invariants.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: ProblemDoc =
            serde_json::from_str(text).map_err(|e| ModelError::Document(e.to_string()))?;
        if doc.schema != PROBLEM_SCHEMA {
            return Err(ModelError::Document(format!(
                "unsupported schema {} (expected {PROBLEM_SCHEMA})",
                doc.schema
            )));
        }

        let mut groups = Vec::with_capacity(doc.decisions.len());
        for d in &doc.decisions {
            if d.num_labels == 0 {
                return Err(ModelError::ZeroLabels(d.locus.clone()));
            }
            let id = DecisionId::new(&*d.task_instance, &*d.subproblem, &*d.locus);
            groups.push(DecisionGroup {
                id,
                num_labels: d.num_labels,
                strategies: d.strategies.clone(),
                weights: vec![vec![f64::NAN; d.strategies.len()]; d.num_labels as usize],
            });
        }

        for o in &doc.outcomes {
            let group = groups
                .get_mut(o.decision)
                .ok_or_else(|| ModelError::Document(format!("outcome references decision {}", o.decision)))?;
            if o.label >= group.num_labels {
                return Err(ModelError::LabelOutOfRange {
                    var: format!("outcome for {}", group.id),
                    num_labels: group.num_labels,
                });
            }
            let si = group
                .strategies
                .iter()
                .position(|s| *s == o.strategy)
                .ok_or_else(|| {
                    ModelError::Document(format!(
                        "outcome strategy {} not declared for {}",
                        o.strategy, group.id
                    ))
                })?;
            OutcomeVariable::new(group.id.clone(), o.label, o.strategy.clone(), o.weight)?;
            let slot = &mut group.weights[o.label as usize][si];
            if !slot.is_nan() {
                return Err(ModelError::DuplicateScores {
                    decision: group.id.to_string(),
                    strategy: o.strategy.to_string(),
                });
            }
            *slot = o.weight;
        }
        for g in &groups {
            for row in &g.weights {
                if row.iter().any(|w| w.is_nan()) {
                    return Err(ModelError::Document(format!(
                        "incomplete outcome weights for {}",
                        g.id
                    )));
                }
            }
        }

        let index = groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.id.clone(), i))
            .collect::<std::collections::BTreeMap<_, _>>();
        if index.len() != groups.len() {
            return Err(ModelError::Document("duplicate decision ids".into()));
        }
        let mut sorted: Vec<&DecisionGroup> = groups.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        if sorted.iter().zip(&groups).any(|(a, b)| a.id != b.id) {
            return Err(ModelError::Document("decisions are not in canonical order".into()));
        }

        if doc.n_structural > doc.constraints.len() {
            return Err(ModelError::Document("n_structural exceeds constraint count".into()));
        }
        for c in &doc.constraints {
            for (var, _) in c.terms() {
                let Some(&i) = index.get(var.decision_id()) else {
                    return Err(ModelError::DanglingReference(var.decision_id().to_string()));
                };
                let g = &groups[i];
                if var.label() >= g.num_labels {
                    return Err(ModelError::LabelOutOfRange {
                        var: var.to_string(),
                        num_labels: g.num_labels,
                    });
                }
                if let VarId::Outcome { strategy, .. } = var {
                    if !g.strategies.contains(strategy) {
                        return Err(ModelError::Document(format!(
                            "constraint references unknown strategy {strategy} for {}",
                            g.id
                        )));
                    }
                }
            }
        }

        let gold_labels = match doc.gold {
            None => None,
            Some(entries) => {
                let mut map = std::collections::BTreeMap::new();
                for e in entries {
                    let g = groups.get(e.decision).ok_or_else(|| {
                        ModelError::Document(format!("gold references decision {}", e.decision))
                    })?;
                    if e.label >= g.num_labels {
                        return Err(ModelError::LabelOutOfRange {
                            var: format!("gold label for {}", g.id),
                            num_labels: g.num_labels,
                        });
                    }
                    map.insert(g.id.clone(), e.label);
                }
                Some(map)
            }
        };

        Ok(StructuredProblem {
            groups,
            constraints: doc.constraints,
            n_structural: doc.n_structural,
            gold_labels,
            index,
        })
    }
}

/// Compact assignment document: label per decision plus explicit variable
/// values for anything beyond the canonical completion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentDoc {
    pub labels: Vec<u32>,
}

impl AssignmentDoc {
    pub fn from_assignment(
        problem: &StructuredProblem,
        assignment: &Assignment,
    ) -> Result<Self, ModelError> {
        Ok(Self { labels: problem.labels_from_assignment(assignment)? })
    }

    pub fn to_assignment(&self, problem: &StructuredProblem) -> Result<Assignment, ModelError> {
        if self.labels.len() != problem.num_decisions() {
            return Err(ModelError::Document(format!(
                "assignment has {} labels for {} decisions",
                self.labels.len(),
                problem.num_decisions()
            )));
        }
        for (g, &label) in problem.groups.iter().zip(&self.labels) {
            if label >= g.num_labels {
                return Err(ModelError::LabelOutOfRange {
                    var: format!("label for {}", g.id),
                    num_labels: g.num_labels,
                });
            }
        }
        Ok(problem.assignment_from_labels_full(&self.labels))
    }
}
