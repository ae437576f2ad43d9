use std::collections::BTreeMap;

use super::*;
use crate::constraints::ConstraintSpec;

fn id(locus: &str) -> DecisionId {
    DecisionId::new("t0", "test", locus)
}

fn strat(s: &str) -> StrategyId {
    StrategyId::new(s)
}

fn scores(locus: &str, s: &str, values: &[f64]) -> DecisionScores {
    DecisionScores { decision: id(locus), strategy: strat(s), scores: values.to_vec() }
}

fn spec(decisions: Vec<DecisionSpec>, score_list: Vec<DecisionScores>) -> ProblemSpec {
    ProblemSpec { decisions, scores: score_list, ..ProblemSpec::default() }
}

fn binary_decision(locus: &str) -> DecisionSpec {
    DecisionSpec { id: id(locus), num_labels: 2 }
}

#[test]
fn one_decision_two_labels_one_strategy_counts() {
    let p = StructuredProblem::build(spec(
        vec![binary_decision("x")],
        vec![scores("x", "tf", &[0.7, 0.3])],
    ))
    .unwrap();
    assert_eq!(p.num_outcomes(), 2);
    assert_eq!(p.num_decision_variables(), 2);
    let multiclass = p.constraints().iter().filter(|c| c.tag() == "multiclass").count();
    let linking = p
        .constraints()
        .iter()
        .filter(|c| c.tag() == "link_ub" || c.tag() == "link_lb")
        .count();
    assert_eq!(multiclass, 1);
    assert_eq!(linking, 4);
}

#[test]
fn two_strategies_double_the_outcomes() {
    let p = StructuredProblem::build(spec(
        vec![binary_decision("x")],
        vec![scores("x", "a", &[0.7, 0.3]), scores("x", "b", &[0.6, 0.4])],
    ))
    .unwrap();
    assert_eq!(p.num_outcomes(), 4);
    assert_eq!(p.num_decision_variables(), 2);
}

#[test]
fn morality_shaped_problem_attaches_c1_and_c2() {
    // One 5-label foundation decision plus two 16-label role decisions.
    let foundation = DecisionId::new("tweet1", "moral_foundation", "tweet");
    let role0 = DecisionId::new("tweet1", "moral_role", "e0");
    let role1 = DecisionId::new("tweet1", "moral_role", "e1");
    let owner_of: Vec<u32> = vec![0, 0, 0, 1, 1, 1, 4, 4, 4, 2, 2, 2, 2, 3, 3, 3];
    let uniform5 = vec![0.2; 5];
    let uniform16 = vec![1.0 / 16.0; 16];
    let mut constraints = vec![ConstraintSpec::Mutex {
        decisions: vec![role0.clone(), role1.clone()],
        label: None,
        tag: "C2".into(),
    }];
    for role in [&role0, &role1] {
        constraints.push(ConstraintSpec::Alignment {
            owner: foundation.clone(),
            dependent: role.clone(),
            owner_of: owner_of.clone(),
            tag: "C1".into(),
        });
    }
    let p = StructuredProblem::build(ProblemSpec {
        decisions: vec![
            DecisionSpec { id: foundation.clone(), num_labels: 5 },
            DecisionSpec { id: role0.clone(), num_labels: 16 },
            DecisionSpec { id: role1.clone(), num_labels: 16 },
        ],
        scores: vec![
            DecisionScores { decision: foundation, strategy: strat("tf"), scores: uniform5 },
            DecisionScores {
                decision: role0,
                strategy: strat("tf"),
                scores: uniform16.clone(),
            },
            DecisionScores { decision: role1, strategy: strat("tf"), scores: uniform16 },
        ],
        constraints,
        ..ProblemSpec::default()
    })
    .unwrap();
    assert_eq!(p.num_decisions(), 3);
    assert_eq!(p.num_decision_variables(), 5 + 16 + 16);
    let c1 = p.constraints().iter().filter(|c| c.tag() == "C1").count();
    let c2 = p.constraints().iter().filter(|c| c.tag() == "C2").count();
    assert_eq!(c1, 32);
    assert_eq!(c2, 16);
}

#[test]
fn objective_examples() {
    let p = StructuredProblem::build(spec(
        vec![binary_decision("a"), binary_decision("b"), binary_decision("c")],
        vec![
            scores("a", "tf", &[0.9, 0.0]),
            scores("b", "tf", &[0.9, 0.0]),
            scores("c", "tf", &[0.2, 0.0]),
        ],
    ))
    .unwrap();

    // All label-1 outcomes have weight zero.
    let zeros = p.assignment_from_labels_full(&[1, 1, 1]);
    assert_eq!(p.objective_value(&zeros).unwrap(), 0.0);

    // Selecting every weighted outcome sums the weights.
    let all = p.assignment_from_labels_full(&[0, 0, 0]);
    assert!((p.objective_value(&all).unwrap() - 2.0).abs() < 1e-12);

    let single = p.assignment_from_labels_full(&[1, 1, 0]);
    assert!((p.objective_value(&single).unwrap() - 0.2).abs() < 1e-12);
}

#[test]
fn objective_is_linear_over_disjoint_unions() {
    let pa = StructuredProblem::build(spec(
        vec![binary_decision("a")],
        vec![scores("a", "tf", &[0.7, 0.3])],
    ))
    .unwrap();
    let pb = StructuredProblem::build(spec(
        vec![binary_decision("b")],
        vec![scores("b", "tf", &[0.6, 0.4])],
    ))
    .unwrap();
    let joint = StructuredProblem::build(spec(
        vec![binary_decision("a"), binary_decision("b")],
        vec![scores("a", "tf", &[0.7, 0.3]), scores("b", "tf", &[0.6, 0.4])],
    ))
    .unwrap();
    let a = pa.assignment_from_labels_full(&[0]);
    let b = pb.assignment_from_labels_full(&[1]);
    let ab = joint.assignment_from_labels_full(&[0, 1]);
    let sum = pa.objective_value(&a).unwrap() + pb.objective_value(&b).unwrap();
    assert!((joint.objective_value(&ab).unwrap() - sum).abs() < 1e-12);
}

#[test]
fn partial_assignment_is_rejected() {
    let p = StructuredProblem::build(spec(
        vec![binary_decision("x")],
        vec![scores("x", "tf", &[0.7, 0.3])],
    ))
    .unwrap();
    let mut a = Assignment::new();
    a.set(VarId::Decision { decision: id("x"), label: 0 }, true);
    assert!(matches!(p.objective_value(&a), Err(ModelError::PartialAssignment(_))));
}

#[test]
fn count_violations_with_no_constraints_of_tag_is_zero() {
    let p = StructuredProblem::build(spec(
        vec![binary_decision("x")],
        vec![scores("x", "tf", &[0.7, 0.3])],
    ))
    .unwrap();
    let a = p.assignment_from_labels_full(&[0]);
    assert_eq!(p.count_violations(&a, "transitivity").unwrap(), 0);
    assert!(matches!(
        p.count_violations(&a, "no_such_tag"),
        Err(ModelError::UnknownTag(_))
    ));
}

#[test]
fn count_violations_detects_broken_horn() {
    let mut s = spec(
        vec![binary_decision("a"), binary_decision("b")],
        vec![scores("a", "tf", &[0.9, 0.1]), scores("b", "tf", &[0.1, 0.9])],
    );
    s.constraints.push(ConstraintSpec::Horn {
        body: vec![(id("a"), 0)],
        head: (id("b"), 0),
        tag: "hard".into(),
    });
    let p = StructuredProblem::build(s).unwrap();
    let bad = p.assignment_from_labels_full(&[0, 1]);
    assert_eq!(p.count_violations(&bad, "hard").unwrap(), 1);
    let good = p.assignment_from_labels_full(&[0, 0]);
    assert_eq!(p.count_violations(&good, "hard").unwrap(), 0);
}

#[test]
fn missing_scores_are_rejected() {
    let err = StructuredProblem::build(spec(
        vec![binary_decision("x"), binary_decision("y")],
        vec![scores("x", "tf", &[0.7, 0.3])],
    ))
    .unwrap_err();
    assert!(matches!(err, ModelError::MissingScore(_)));
}

#[test]
fn missing_strategy_is_rejected_under_full_coverage() {
    let mut s = spec(
        vec![binary_decision("x")],
        vec![scores("x", "a", &[0.7, 0.3])],
    );
    s.expected_strategies = Some([strat("a"), strat("b")].into_iter().collect());
    assert!(matches!(
        StructuredProblem::build(s.clone()),
        Err(ModelError::MissingStrategy { .. })
    ));
    s.allow_partial_coverage = true;
    assert!(StructuredProblem::build(s).is_ok());
}

#[test]
fn dangling_constraint_reference_is_rejected() {
    let mut s = spec(
        vec![binary_decision("x")],
        vec![scores("x", "tf", &[0.7, 0.3])],
    );
    s.constraints.push(ConstraintSpec::Horn {
        body: vec![(id("x"), 0)],
        head: (id("ghost"), 0),
        tag: "hard".into(),
    });
    assert!(StructuredProblem::build(s).is_err());
}

#[test]
fn non_finite_weights_are_rejected() {
    let err = StructuredProblem::build(spec(
        vec![binary_decision("x")],
        vec![scores("x", "tf", &[f64::NAN, 0.3])],
    ))
    .unwrap_err();
    assert!(matches!(err, ModelError::InvalidWeight { .. }));
    let err = StructuredProblem::build(spec(
        vec![binary_decision("x")],
        vec![scores("x", "tf", &[1.5, 0.3])],
    ))
    .unwrap_err();
    assert!(matches!(err, ModelError::InvalidWeight { .. }));
}

#[test]
fn build_is_deterministic_under_input_permutation() {
    let forward = spec(
        vec![binary_decision("a"), binary_decision("b")],
        vec![scores("a", "x", &[0.7, 0.3]), scores("b", "y", &[0.6, 0.4])],
    );
    let reversed = spec(
        vec![binary_decision("b"), binary_decision("a")],
        vec![scores("b", "y", &[0.6, 0.4]), scores("a", "x", &[0.7, 0.3])],
    );
    let p1 = StructuredProblem::build(forward).unwrap();
    let p2 = StructuredProblem::build(reversed).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(p1.to_json(), p2.to_json());
}

#[test]
fn json_document_round_trips() {
    let mut s = spec(
        vec![binary_decision("a"), binary_decision("b")],
        vec![
            scores("a", "x", &[0.7, 0.3]),
            scores("a", "y", &[0.5, 0.5]),
            scores("b", "x", &[0.6, 0.4]),
            scores("b", "y", &[0.2, 0.8]),
        ],
    );
    s.constraints.push(ConstraintSpec::Mutex {
        decisions: vec![id("a"), id("b")],
        label: Some(0),
        tag: "C2".into(),
    });
    s.gold = Some(BTreeMap::from([(id("a"), 0), (id("b"), 1)]));
    let p = StructuredProblem::build(s).unwrap();
    let text = p.to_json();
    let back = StructuredProblem::from_json(&text).unwrap();
    assert_eq!(p, back);
    assert_eq!(text, back.to_json());
}

#[test]
fn gold_assignment_uses_full_completion() {
    let mut s = spec(
        vec![binary_decision("x")],
        vec![scores("x", "a", &[0.7, 0.3]), scores("x", "b", &[0.0, 1.0])],
    );
    s.gold = Some(BTreeMap::from([(id("x"), 0)]));
    let p = StructuredProblem::build(s).unwrap();
    let gold = p.gold_assignment().unwrap();
    // Both strategies' outcomes at the gold label are active, including the
    // zero-weight one.
    assert_eq!(
        gold.get(&VarId::Outcome { decision: id("x"), label: 0, strategy: strat("a") }),
        Some(true)
    );
    assert_eq!(
        gold.get(&VarId::Outcome { decision: id("x"), label: 0, strategy: strat("b") }),
        Some(true)
    );
    assert!(p.is_feasible(&gold).unwrap());
}

#[test]
fn reweighted_replaces_weights_and_preserves_structure() {
    let p = StructuredProblem::build(spec(
        vec![binary_decision("x")],
        vec![scores("x", "tf", &[0.7, 0.3])],
    ))
    .unwrap();
    let q = p.reweighted(|o| if o.label == 0 { 0.1 } else { 0.9 }).unwrap();
    assert_eq!(p.constraints(), q.constraints());
    let a = q.assignment_from_labels_full(&[1]);
    assert!((q.objective_value(&a).unwrap() - 0.9).abs() < 1e-12);
    // Out-of-range reweighting is rejected.
    assert!(p.reweighted(|_| 2.0).is_err());
}
