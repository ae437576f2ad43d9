//! Exact MAP inference over a [`StructuredProblem`].
//!
//! [`solve_map`] runs branch-and-bound over *decisions* (label choices), not
//! over the individual binary variables: multiclass constraints hold by
//! construction and the linking constraints determine all outcome values
//! from the chosen labels. The canonical completion activates every
//! strategy's outcome at the chosen label, which is always optimal because
//! weights are non-negative.
//!
//! [`brute_force_map`] enumerates per-decision label choices exhaustively
//! and is the verification oracle for small instances. Both solvers use the
//! same acceptance rule (strict improvement beyond [`OBJECTIVE_TOLERANCE`],
//! candidates visited in lexicographic label order), so they return
//! identical assignments: the lexicographically smallest optimum under the
//! canonical variable order.
//!
//! [`local_argmax`] is the unconstrained per-decision baseline whose
//! constraint violations the experiment reports count.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Assignment, ModelError, StructuredProblem, VarId};

/// Absolute tolerance for objective comparisons during search. Candidates
/// within this tolerance of the incumbent count as ties and do not replace
/// it.
pub const OBJECTIVE_TOLERANCE: f64 = 1e-9;

/// Search budget for one solve call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveLimits {
    pub max_nodes: u64,
    pub time_limit: Duration,
}

impl Default for SolveLimits {
    fn default() -> Self {
        Self { max_nodes: 1_000_000, time_limit: Duration::from_secs(30) }
    }
}

/// Outcome of a MAP solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub assignment: Assignment,
    /// Objective re-evaluated on the final assignment.
    pub objective: f64,
    pub nodes_explored: u64,
    pub proven_optimal: bool,
    /// Wall time of the solve; excluded from serialized artifacts so that
    /// repeated runs produce identical files.
    #[serde(skip, default)]
    pub wall_time: Duration,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("constraint set admits no assignment")]
    Infeasible,
    #[error("search budget exhausted before any feasible assignment was found")]
    BudgetExceeded,
    #[error("instance too large to enumerate: ~{0:.3e} candidate assignments")]
    TooLarge(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn improves(candidate: f64, best: Option<f64>) -> bool {
    match best {
        None => true,
        Some(b) => candidate > b + OBJECTIVE_TOLERANCE,
    }
}

/// A hard constraint in index form. Under the canonical completion both the
/// decision variable and the outcome variables of (decision, label) share
/// the value `[chosen label == label]`, so every term reduces to a
/// per-decision contribution table over labels.
struct CompiledConstraint {
    /// (decision index, contribution per label, min over labels, max over
    /// labels).
    parts: Vec<(usize, Vec<Rational64>, Rational64, Rational64)>,
    relation: crate::constraints::Relation,
    bound: Rational64,
}

impl CompiledConstraint {
    fn compile(
        c: &crate::constraints::LinearConstraint,
        problem: &StructuredProblem,
    ) -> Self {
        let mut by_decision: BTreeMap<usize, Vec<Rational64>> = BTreeMap::new();
        for (var, coef) in c.terms() {
            let d = problem
                .group_index(var.decision_id())
                .expect("constraint references checked at build time");
            let num_labels = problem.groups[d].num_labels as usize;
            let entry = by_decision
                .entry(d)
                .or_insert_with(|| vec![Rational64::from_integer(0); num_labels]);
            entry[var.label() as usize] += coef;
        }
        let parts = by_decision
            .into_iter()
            .map(|(d, contrib)| {
                // The decision takes exactly one label, so its achievable
                // contribution is one entry of `contrib` (labels without
                // terms contribute zero and are already present).
                let min = contrib.iter().copied().reduce(|a, b| a.min(b)).unwrap();
                let max = contrib.iter().copied().reduce(|a, b| a.max(b)).unwrap();
                (d, contrib, min, max)
            })
            .collect();
        Self { parts, relation: c.relation(), bound: c.bound() }
    }

    /// Can the constraint still be satisfied given the partial labeling?
    /// Assigned decisions contribute exactly; unassigned ones contribute
    /// anywhere in [min, max].
    fn feasible(&self, labels: &[Option<u32>]) -> bool {
        let mut lo = Rational64::from_integer(0);
        let mut hi = Rational64::from_integer(0);
        for (d, contrib, min, max) in &self.parts {
            match labels[*d] {
                Some(k) => {
                    let c = contrib[k as usize];
                    lo += c;
                    hi += c;
                }
                None => {
                    lo += *min;
                    hi += *max;
                }
            }
        }
        use crate::constraints::Relation::*;
        match self.relation {
            Le => lo <= self.bound,
            Ge => hi >= self.bound,
            Eq => lo <= self.bound && hi >= self.bound,
        }
    }
}

/// Mutable search state shared across components.
struct Budget {
    nodes: u64,
    max_nodes: u64,
    deadline: Instant,
    exhausted: bool,
}

impl Budget {
    fn tick(&mut self) -> bool {
        if self.exhausted {
            return false;
        }
        self.nodes += 1;
        if self.nodes > self.max_nodes || (self.nodes % 1024 == 0 && Instant::now() > self.deadline)
        {
            self.exhausted = true;
            return false;
        }
        true
    }
}

struct ComponentSearch<'a> {
    problem: &'a StructuredProblem,
    /// Decision indices of this component, canonical order.
    members: Vec<usize>,
    constraints: Vec<&'a CompiledConstraint>,
    /// For each member position, the constraints touching that decision.
    touching: Vec<Vec<usize>>,
    /// suffix_bound[i] = max achievable weight of members[i..], ignoring
    /// hard constraints.
    suffix_bound: Vec<f64>,
    labels: Vec<Option<u32>>,
    chosen: Vec<u32>,
    best: Option<(Vec<u32>, f64)>,
}

impl<'a> ComponentSearch<'a> {
    fn dfs(&mut self, pos: usize, partial: f64, budget: &mut Budget) {
        if !budget.tick() {
            return;
        }
        if pos == self.members.len() {
            let best_obj = self.best.as_ref().map(|(_, o)| *o);
            if improves(partial, best_obj) {
                self.best = Some((self.chosen.clone(), partial));
            }
            return;
        }
        // Admissible upper bound: current value plus the unconstrained
        // per-decision maxima of everything still unassigned.
        let best_obj = self.best.as_ref().map(|(_, o)| *o);
        if !improves(partial + self.suffix_bound[pos], best_obj) {
            return;
        }
        let d = self.members[pos];
        let group = &self.problem.groups[d];
        for k in 0..group.num_labels {
            self.labels[d] = Some(k);
            self.chosen.push(k);
            let ok = self.touching[pos]
                .iter()
                .all(|&ci| self.constraints[ci].feasible(&self.labels));
            if ok {
                self.dfs(pos + 1, partial + group.label_weight(k), budget);
            }
            self.chosen.pop();
            self.labels[d] = None;
            if budget.exhausted {
                return;
            }
        }
    }
}

/// Exact MAP inference by branch-and-bound with constraint propagation.
///
/// Connected components of the hard-constraint graph are solved
/// independently and merged. Ties are broken toward the lexicographically
/// smallest label vector in canonical decision order, which the
/// depth-first, label-ascending search finds first.
pub fn solve_map(
    problem: &StructuredProblem,
    limits: SolveLimits,
) -> Result<SolveResult, SolverError> {
    let start = Instant::now();
    let n = problem.num_decisions();
    let compiled: Vec<CompiledConstraint> = problem
        .hard_constraints()
        .iter()
        .map(|c| CompiledConstraint::compile(c, problem))
        .collect();

    // Union-find over decisions through shared constraints.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for c in &compiled {
        if let Some((first, rest)) = c.parts.split_first() {
            for (d, ..) in rest {
                let a = find(&mut parent, first.0);
                let b = find(&mut parent, *d);
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for d in 0..n {
        let root = find(&mut parent, d);
        components.entry(root).or_default().push(d);
    }

    let mut budget = Budget {
        nodes: 0,
        max_nodes: limits.max_nodes,
        deadline: start + limits.time_limit,
        exhausted: false,
    };
    let mut labels = vec![0u32; n];
    let mut all_proven = true;
    let mut any_infeasible = false;

    for members in components.into_values() {
        let member_set: Vec<usize> = members.clone();
        let constraints: Vec<&CompiledConstraint> = compiled
            .iter()
            .filter(|c| c.parts.iter().any(|(d, ..)| member_set.contains(d)))
            .collect();
        let touching: Vec<Vec<usize>> = member_set
            .iter()
            .map(|&d| {
                constraints
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.parts.iter().any(|(cd, ..)| *cd == d))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let mut suffix_bound = vec![0.0; member_set.len() + 1];
        for (i, &d) in member_set.iter().enumerate().rev() {
            suffix_bound[i] = suffix_bound[i + 1] + problem.groups[d].max_label_weight();
        }
        let mut search = ComponentSearch {
            problem,
            members: member_set,
            constraints,
            touching,
            suffix_bound,
            labels: vec![None; n],
            chosen: Vec::new(),
            best: None,
        };
        search.dfs(0, 0.0, &mut budget);
        match search.best {
            Some((chosen, _)) => {
                for (pos, &d) in search.members.iter().enumerate() {
                    labels[d] = chosen[pos];
                }
                if budget.exhausted {
                    all_proven = false;
                }
            }
            None => {
                if budget.exhausted {
                    return Err(SolverError::BudgetExceeded);
                }
                any_infeasible = true;
                break;
            }
        }
    }

    if any_infeasible {
        return Err(SolverError::Infeasible);
    }
    let assignment = problem.assignment_from_labels_full(&labels);
    let objective = problem.objective_value(&assignment)?;
    Ok(SolveResult {
        assignment,
        objective,
        nodes_explored: budget.nodes,
        proven_optimal: all_proven,
        wall_time: start.elapsed(),
    })
}

/// Exhaustive enumeration over per-decision label choices, filtering by
/// hard constraints. The verification oracle for small instances.
pub fn brute_force_map(problem: &StructuredProblem) -> Result<SolveResult, SolverError> {
    let start = Instant::now();
    let n = problem.num_decisions();
    let candidates: f64 = problem.groups.iter().map(|g| g.num_labels as f64).product();
    if candidates > (1u64 << 24) as f64 {
        return Err(SolverError::TooLarge(candidates));
    }
    let compiled: Vec<CompiledConstraint> = problem
        .hard_constraints()
        .iter()
        .map(|c| CompiledConstraint::compile(c, problem))
        .collect();

    // Advance the label odometer in lexicographic order (the last decision
    // is the least significant digit). Returns false after wrapping.
    fn advance(labels: &mut [u32], problem: &StructuredProblem) -> bool {
        for pos in (0..labels.len()).rev() {
            labels[pos] += 1;
            if labels[pos] < problem.groups[pos].num_labels {
                return true;
            }
            labels[pos] = 0;
        }
        false
    }

    let mut labels = vec![0u32; n];
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut visited: u64 = 0;
    loop {
        visited += 1;
        let full: Vec<Option<u32>> = labels.iter().map(|&k| Some(k)).collect();
        if compiled.iter().all(|c| c.feasible(&full)) {
            let obj: f64 = problem
                .groups
                .iter()
                .zip(&labels)
                .map(|(g, &k)| g.label_weight(k))
                .sum();
            if improves(obj, best.as_ref().map(|(_, o)| *o)) {
                best = Some((labels.clone(), obj));
            }
        }
        if !advance(&mut labels, problem) {
            break;
        }
    }

    match best {
        None if n == 0 => {
            let assignment = Assignment::new();
            Ok(SolveResult {
                assignment,
                objective: 0.0,
                nodes_explored: visited,
                proven_optimal: true,
                wall_time: start.elapsed(),
            })
        }
        None => Err(SolverError::Infeasible),
        Some((labels, _)) => {
            let assignment = problem.assignment_from_labels_full(&labels);
            let objective = problem.objective_value(&assignment)?;
            Ok(SolveResult {
                assignment,
                objective,
                nodes_explored: visited,
                proven_optimal: true,
                wall_time: start.elapsed(),
            })
        }
    }
}

/// Per-decision independent argmax over strategy-summed weights, ignoring
/// hard constraints. Ties go to the lowest label index. This is the
/// unconstrained baseline whose violations the reports count.
pub fn local_argmax(problem: &StructuredProblem) -> Assignment {
    let labels: Vec<u32> = problem
        .groups
        .iter()
        .map(|g| {
            let mut best_k = 0u32;
            let mut best_w = f64::NEG_INFINITY;
            for k in 0..g.num_labels {
                let w = g.label_weight(k);
                if w > best_w {
                    best_w = w;
                    best_k = k;
                }
            }
            best_k
        })
        .collect();
    problem.assignment_from_labels_full(&labels)
}

/// Export the instance in LP text format for cross-checking against
/// external solvers. Variable names encode canonical indices:
/// `d_<decision>_<label>` and `p_<decision>_<label>_<strategy>`.
pub fn to_lp_string(problem: &StructuredProblem) -> String {
    use std::fmt::Write;

    let mut name_of = BTreeMap::new();
    let mut names = Vec::new();
    for (i, g) in problem.groups.iter().enumerate() {
        for k in 0..g.num_labels {
            let name = format!("d_{i}_{k}");
            name_of.insert(VarId::Decision { decision: g.id.clone(), label: k }, name.clone());
            names.push(name);
        }
    }
    for (i, g) in problem.groups.iter().enumerate() {
        for k in 0..g.num_labels {
            for (si, s) in g.strategies.iter().enumerate() {
                let name = format!("p_{i}_{k}_{si}");
                name_of.insert(
                    VarId::Outcome { decision: g.id.clone(), label: k, strategy: s.clone() },
                    name.clone(),
                );
                names.push(name);
            }
        }
    }

    let mut out = String::new();
    writeln!(out, "\\ MAP instance, {} decisions", problem.num_decisions()).unwrap();
    for (i, g) in problem.groups.iter().enumerate() {
        writeln!(out, "\\ decision {i}: {} (K={})", g.id, g.num_labels).unwrap();
    }
    writeln!(out, "Maximize").unwrap();
    let mut obj_terms = Vec::new();
    for (i, g) in problem.groups.iter().enumerate() {
        for k in 0..g.num_labels {
            for (si, _) in g.strategies.iter().enumerate() {
                let w = g.weights[k as usize][si];
                if w != 0.0 {
                    obj_terms.push(format!("{w} p_{i}_{k}_{si}"));
                }
            }
        }
    }
    if obj_terms.is_empty() {
        obj_terms.push("0 d_0_0".to_string());
    }
    writeln!(out, " obj: {}", obj_terms.join(" + ")).unwrap();
    writeln!(out, "Subject To").unwrap();
    for (ci, c) in problem.constraints().iter().enumerate() {
        let mut terms = Vec::new();
        for (var, coef) in c.terms() {
            let v = (*coef.numer() as f64) / (*coef.denom() as f64);
            let sign = if v < 0.0 { "-" } else { "+" };
            terms.push(format!("{sign} {} {}", v.abs(), name_of[var]));
        }
        let body = terms.join(" ").trim_start_matches("+ ").to_string();
        let bound = (*c.bound().numer() as f64) / (*c.bound().denom() as f64);
        writeln!(out, " c{ci}: {body} {} {bound}", c.relation().symbol()).unwrap();
    }
    writeln!(out, "Binaries").unwrap();
    writeln!(out, " {}", names.join(" ")).unwrap();
    writeln!(out, "End").unwrap();
    out
}
