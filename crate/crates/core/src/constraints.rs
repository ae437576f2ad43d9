//! Compiles constraint families into linear inequalities over binary
//! variables.
//!
//! Families covered: multi-class (exactly one label per decision), decision
//! linking (a decision variable is the OR of its per-strategy outcomes),
//! horn clauses, pairwise mutual exclusion, role/foundation alignment, and
//! coreference transitivity. Each compiles to one or more
//! [`LinearConstraint`]s with integer (rational) coefficients. Compilation
//! is pure: identical inputs yield identical outputs.

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DecisionId, StrategyId, VarId};

/// Comparison relation of a linear constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

mod rat_serde {
    use num_rational::Rational64;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational64, s: S) -> Result<S::Ok, S::Error> {
        [*r.numer(), *r.denom()].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational64, D::Error> {
        let [numer, denom] = <[i64; 2]>::deserialize(d)?;
        if denom == 0 {
            return Err(D::Error::custom("rational with zero denominator"));
        }
        Ok(Rational64::new(numer, denom))
    }
}

/// One weighted variable occurrence in a constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub var: VarId,
    #[serde(with = "rat_serde")]
    pub coef: Rational64,
}

/// A linear inequality or equality over binary variables:
/// `sum(coef_i * var_i) <relation> bound`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearConstraint {
    terms: Vec<Term>,
    relation: Relation,
    #[serde(with = "rat_serde")]
    bound: Rational64,
    tag: String,
}

impl LinearConstraint {
    /// Build a constraint, rejecting duplicate variables within the terms.
    pub fn new(
        terms: Vec<(VarId, Rational64)>,
        relation: Relation,
        bound: Rational64,
        tag: impl Into<String>,
    ) -> Result<Self, ConstraintError> {
        for (i, (v, _)) in terms.iter().enumerate() {
            if terms[i + 1..].iter().any(|(w, _)| w == v) {
                return Err(ConstraintError::DuplicateTerm(v.to_string()));
            }
        }
        Ok(Self {
            terms: terms.into_iter().map(|(var, coef)| Term { var, coef }).collect(),
            relation,
            bound,
            tag: tag.into(),
        })
    }

    pub fn terms(&self) -> impl Iterator<Item = (&VarId, Rational64)> {
        self.terms.iter().map(|t| (&t.var, t.coef))
    }

    pub fn relation(&self) -> Relation {
        self.relation
    }

    pub fn bound(&self) -> Rational64 {
        self.bound
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Evaluate against a (possibly partial) valuation. Returns `None` if
    /// any referenced variable has no value.
    pub fn satisfied_by(&self, lookup: impl Fn(&VarId) -> Option<bool>) -> Option<bool> {
        let mut lhs = Rational64::from_integer(0);
        for t in &self.terms {
            if lookup(&t.var)? {
                lhs += t.coef;
            }
        }
        Some(match self.relation {
            Relation::Le => lhs <= self.bound,
            Relation::Eq => lhs == self.bound,
            Relation::Ge => lhs >= self.bound,
        })
    }
}

impl std::fmt::Display for LinearConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            if t.coef == Rational64::from_integer(1) {
                write!(f, "{}", t.var)?;
            } else {
                write!(f, "{}*{}", t.coef, t.var)?;
            }
        }
        write!(f, " {} {} [{}]", self.relation.symbol(), self.bound, self.tag)
    }
}

/// An if-then rule `body_1 AND ... AND body_n => head` over decision
/// variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HornClause {
    body: Vec<VarId>,
    head: VarId,
}

impl HornClause {
    pub fn new(body: Vec<VarId>, head: VarId) -> Result<Self, ConstraintError> {
        if body.is_empty() {
            return Err(ConstraintError::EmptyHornBody);
        }
        if body.contains(&head) {
            return Err(ConstraintError::HeadInBody(head.to_string()));
        }
        Ok(Self { body, head })
    }

    pub fn body(&self) -> &[VarId] {
        &self.body
    }

    pub fn head(&self) -> &VarId {
        &self.head
    }
}

fn one() -> Rational64 {
    Rational64::from_integer(1)
}

fn int(i: i64) -> Rational64 {
    Rational64::from_integer(i)
}

fn dvar(decision: &DecisionId, label: u32) -> VarId {
    VarId::Decision { decision: decision.clone(), label }
}

fn pvar(decision: &DecisionId, label: u32, strategy: &StrategyId) -> VarId {
    VarId::Outcome { decision: decision.clone(), label, strategy: strategy.clone() }
}

/// Exactly one of the decision's `num_labels` variables is active:
/// `sum_k d_k = 1`, tagged "multiclass".
pub fn compile_multiclass(
    decision: &DecisionId,
    num_labels: u32,
) -> Result<LinearConstraint, ConstraintError> {
    if num_labels == 0 {
        return Err(ConstraintError::ZeroLabels(decision.to_string()));
    }
    let terms = (0..num_labels).map(|k| (dvar(decision, k), one())).collect();
    LinearConstraint::new(terms, Relation::Eq, one(), "multiclass")
}

/// Link a decision variable to its per-strategy outcomes so that at the
/// boolean points the decision variable is exactly the OR of the outcomes:
///
/// - `d - sum_p p <= 0` (active decision needs at least one active
///   outcome), tagged "link_ub";
/// - `p - d <= 0` for each strategy (an active outcome activates the
///   decision), tagged "link_lb".
///
/// With a single strategy the pair collapses to `d = p`.
pub fn compile_decision_link(
    decision: &DecisionId,
    label: u32,
    strategies: &[StrategyId],
) -> Result<Vec<LinearConstraint>, ConstraintError> {
    if strategies.is_empty() {
        return Err(ConstraintError::EmptyOutcomeSet(decision.to_string()));
    }
    let mut out = Vec::with_capacity(strategies.len() + 1);
    let mut ub_terms = vec![(dvar(decision, label), one())];
    for s in strategies {
        ub_terms.push((pvar(decision, label, s), -one()));
    }
    out.push(LinearConstraint::new(ub_terms, Relation::Le, int(0), "link_ub")?);
    for s in strategies {
        out.push(LinearConstraint::new(
            vec![(pvar(decision, label, s), one()), (dvar(decision, label), -one())],
            Relation::Le,
            int(0),
            "link_lb",
        )?);
    }
    Ok(out)
}

/// Compile a horn clause `d_1 AND ... AND d_n => d_h` into
/// `sum_i d_i - d_h <= n - 1`. The inequality is violated at a boolean
/// point iff the body is all-true and the head false.
pub fn compile_horn(clause: &HornClause, tag: &str) -> Result<LinearConstraint, ConstraintError> {
    let n = clause.body.len() as i64;
    let mut terms: Vec<(VarId, Rational64)> =
        clause.body.iter().map(|v| (v.clone(), one())).collect();
    terms.push((clause.head.clone(), -one()));
    LinearConstraint::new(terms, Relation::Le, int(n - 1), tag)
}

/// Two decisions may not both take label `k`: `d_a,k + d_b,k <= 1`.
pub fn compile_mutual_exclusion(
    a: &DecisionId,
    b: &DecisionId,
    label: u32,
    tag: &str,
) -> Result<LinearConstraint, ConstraintError> {
    if a == b {
        return Err(ConstraintError::SelfExclusion(a.to_string()));
    }
    LinearConstraint::new(
        vec![(dvar(a, label), one()), (dvar(b, label), one())],
        Relation::Le,
        one(),
        tag,
    )
}

/// Mutual exclusion over every unordered pair of `decisions` and every
/// label in `0..num_labels`. With fewer than two decisions this is empty.
pub fn compile_mutual_exclusion_all(
    decisions: &[DecisionId],
    num_labels: u32,
    tag: &str,
) -> Result<Vec<LinearConstraint>, ConstraintError> {
    let mut out = Vec::new();
    for (i, a) in decisions.iter().enumerate() {
        for b in &decisions[i + 1..] {
            for k in 0..num_labels {
                out.push(compile_mutual_exclusion(a, b, k, tag)?);
            }
        }
    }
    Ok(out)
}

/// Align each label of a dependent decision with the label of an owner
/// decision: `d_dep,r <= d_owner,owner_of[r]`, tagged "C1" by default.
///
/// `owner_of[r]` gives the owner label for dependent label `r`; any entry
/// outside `0..owner_labels` is an orphan.
pub fn compile_alignment(
    owner: &DecisionId,
    owner_labels: u32,
    dependent: &DecisionId,
    owner_of: &[u32],
    tag: &str,
) -> Result<Vec<LinearConstraint>, ConstraintError> {
    let mut out = Vec::with_capacity(owner_of.len());
    for (r, &f) in owner_of.iter().enumerate() {
        if f >= owner_labels {
            return Err(ConstraintError::OrphanRole { role: r as u32, owner: f });
        }
        out.push(LinearConstraint::new(
            vec![(dvar(dependent, r as u32), one()), (dvar(owner, f), -one())],
            Relation::Le,
            int(0),
            tag,
        )?);
    }
    Ok(out)
}

/// Transitivity among three pairwise coreference decisions, emitted for all
/// three rotations of the triple: ab AND bc => ac, ab AND ac => bc,
/// ac AND bc => ab. `coref_label` selects which label means "coreferent".
pub fn compile_transitivity(
    pair_ab: &DecisionId,
    pair_bc: &DecisionId,
    pair_ac: &DecisionId,
    coref_label: u32,
) -> Result<Vec<LinearConstraint>, ConstraintError> {
    let rotations = [
        (pair_ab, pair_bc, pair_ac),
        (pair_ab, pair_ac, pair_bc),
        (pair_ac, pair_bc, pair_ab),
    ];
    rotations
        .iter()
        .map(|(x, y, z)| {
            let clause = HornClause::new(
                vec![dvar(x, coref_label), dvar(y, coref_label)],
                dvar(z, coref_label),
            )?;
            compile_horn(&clause, "transitivity")
        })
        .collect()
}

/// Declarative constraint schema used in problem specs and config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintSpec {
    /// `body => head` over (decision, label) pairs.
    Horn {
        body: Vec<(DecisionId, u32)>,
        head: (DecisionId, u32),
        tag: String,
    },
    /// At most one of `decisions` takes each label. `label` restricts the
    /// exclusion to a single label; otherwise all labels are covered.
    Mutex {
        decisions: Vec<DecisionId>,
        #[serde(default)]
        label: Option<u32>,
        tag: String,
    },
    /// Each label of `dependent` implies the owner label given by
    /// `owner_of`.
    Alignment {
        owner: DecisionId,
        dependent: DecisionId,
        owner_of: Vec<u32>,
        tag: String,
    },
    /// All three rotations of a coreference triple.
    Transitivity {
        pair_ab: DecisionId,
        pair_bc: DecisionId,
        pair_ac: DecisionId,
        #[serde(default)]
        coref_label: u32,
    },
    /// An explicit linear constraint.
    Raw { constraint: LinearConstraint },
}

/// Compile a declarative spec into linear constraints. `num_labels_of`
/// resolves decision ids; unknown decisions are reported as dangling.
pub fn compile_spec(
    spec: &ConstraintSpec,
    num_labels_of: &impl Fn(&DecisionId) -> Option<u32>,
) -> Result<Vec<LinearConstraint>, ConstraintError> {
    let resolve = |id: &DecisionId| -> Result<u32, ConstraintError> {
        num_labels_of(id).ok_or_else(|| ConstraintError::UnknownDecision(id.to_string()))
    };
    match spec {
        ConstraintSpec::Horn { body, head, tag } => {
            for (id, _) in body.iter().chain(std::iter::once(head)) {
                resolve(id)?;
            }
            let clause = HornClause::new(
                body.iter().map(|(id, k)| dvar(id, *k)).collect(),
                dvar(&head.0, head.1),
            )?;
            Ok(vec![compile_horn(&clause, tag)?])
        }
        ConstraintSpec::Mutex { decisions, label, tag } => {
            let mut k_min = u32::MAX;
            for id in decisions {
                k_min = k_min.min(resolve(id)?);
            }
            match label {
                Some(k) => {
                    if decisions.len() < 2 {
                        return Ok(Vec::new());
                    }
                    let mut out = Vec::new();
                    for (i, a) in decisions.iter().enumerate() {
                        for b in &decisions[i + 1..] {
                            out.push(compile_mutual_exclusion(a, b, *k, tag)?);
                        }
                    }
                    Ok(out)
                }
                None => {
                    // Shared label space required; use the common K.
                    let mut ks = decisions.iter().map(|id| num_labels_of(id).unwrap());
                    let first = ks.next().unwrap_or(k_min);
                    if ks.any(|k| k != first) {
                        return Err(ConstraintError::LabelSpaceMismatch);
                    }
                    compile_mutual_exclusion_all(decisions, first, tag)
                }
            }
        }
        ConstraintSpec::Alignment { owner, dependent, owner_of, tag } => {
            let owner_labels = resolve(owner)?;
            let dep_labels = resolve(dependent)?;
            if owner_of.len() != dep_labels as usize {
                return Err(ConstraintError::LabelSpaceMismatch);
            }
            compile_alignment(owner, owner_labels, dependent, owner_of, tag)
        }
        ConstraintSpec::Transitivity { pair_ab, pair_bc, pair_ac, coref_label } => {
            for id in [pair_ab, pair_bc, pair_ac] {
                resolve(id)?;
            }
            compile_transitivity(pair_ab, pair_bc, pair_ac, *coref_label)
        }
        ConstraintSpec::Raw { constraint } => {
            for (var, _) in constraint.terms() {
                resolve(var.decision_id())?;
            }
            Ok(vec![constraint.clone()])
        }
    }
}

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("multiclass constraint over zero labels for {0}")]
    ZeroLabels(String),
    #[error("decision link with empty outcome set for {0}")]
    EmptyOutcomeSet(String),
    #[error("horn clause with empty body")]
    EmptyHornBody,
    #[error("horn head {0} also appears in the body")]
    HeadInBody(String),
    #[error("duplicate variable {0} within constraint terms")]
    DuplicateTerm(String),
    #[error("mutual exclusion of {0} with itself")]
    SelfExclusion(String),
    #[error("role {role} maps to nonexistent owner label {owner}")]
    OrphanRole { role: u32, owner: u32 },
    #[error("constraint spans mismatched label spaces")]
    LabelSpaceMismatch,
    #[error("constraint references unknown decision {0}")]
    UnknownDecision(String),
}
