//! Trainable per-strategy calibrators over raw score tables.
//!
//! A [`Calibrator`] maps one decision's raw score vector to calibrated
//! scores, either as the identity or as an affine map followed by softmax
//! (a multinomial logistic regression layer). One calibrator exists per
//! (strategy, subproblem) pair since different subproblems have different
//! label counts; strategy independence is preserved — calibrator `p` only
//! ever sees strategy-`p` tables.
//!
//! Two training objectives live in [`train`]: local cross-entropy per
//! subproblem, and the global structured hinge computed through the MAP
//! solver: `L = max{0, sum_i s_i yhat_i - sum_i s_i y_i}` over outcome
//! variables, with the subgradient taken at frozen inference output.

pub mod synthetic;
pub mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Assignment, DecisionId, ModelError, StrategyId, StructuredProblem};
use crate::scoring::ScoreTable;
use crate::solver::{self, SolveLimits, SolverError};
use crate::util::softmax;

/// Calibrator kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibratorKind {
    Identity,
    AffineSoftmax,
}

/// Key of a calibrator: which strategy's tables it calibrates, for which
/// subproblem.
pub type CalibratorKey = (StrategyId, String);

/// A per-strategy, per-subproblem map from raw confidence vectors to
/// calibrated scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub strategy: StrategyId,
    pub subproblem: String,
    pub kind: CalibratorKind,
    /// Row-major (output label, input score) weights; empty for identity.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Calibrator {
    pub fn identity(strategy: StrategyId, subproblem: impl Into<String>) -> Self {
        Self {
            strategy,
            subproblem: subproblem.into(),
            kind: CalibratorKind::Identity,
            weights: Vec::new(),
            bias: Vec::new(),
        }
    }

    /// Zero-initialized affine+softmax calibrator over `dim` labels.
    pub fn affine(strategy: StrategyId, subproblem: impl Into<String>, dim: usize) -> Self {
        Self {
            strategy,
            subproblem: subproblem.into(),
            kind: CalibratorKind::AffineSoftmax,
            weights: vec![vec![0.0; dim]; dim],
            bias: vec![0.0; dim],
        }
    }

    pub fn key(&self) -> CalibratorKey {
        (self.strategy.clone(), self.subproblem.clone())
    }

    fn logits(&self, scores: &[f64]) -> Result<Vec<f64>, CalibrationError> {
        if self.weights.len() != self.bias.len()
            || self.weights.iter().any(|row| row.len() != scores.len())
        {
            return Err(CalibrationError::DimMismatch {
                calibrator: format!("{}/{}", self.strategy, self.subproblem),
                got: scores.len(),
                expected: self.weights.first().map_or(0, |r| r.len()),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(scores).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect())
    }

    /// Calibrated scores for one raw score vector. Identity returns the
    /// input unchanged; affine+softmax returns a distribution.
    pub fn calibrate(&self, scores: &[f64]) -> Result<Vec<f64>, CalibrationError> {
        match self.kind {
            CalibratorKind::Identity => Ok(scores.to_vec()),
            CalibratorKind::AffineSoftmax => Ok(softmax(&self.logits(scores)?)),
        }
    }
}

/// The calibrators of one configuration, keyed by (strategy, subproblem).
/// Missing keys calibrate as the identity, so the empty set is exactly the
/// uncalibrated pipeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibratorSet {
    calibrators: Vec<Calibrator>,
}

impl CalibratorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, calibrator: Calibrator) {
        self.calibrators.retain(|c| c.key() != calibrator.key());
        self.calibrators.push(calibrator);
        self.calibrators.sort_by_key(|c| c.key());
    }

    pub fn get(&self, strategy: &StrategyId, subproblem: &str) -> Option<&Calibrator> {
        self.calibrators
            .iter()
            .find(|c| c.strategy == *strategy && c.subproblem == subproblem)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Calibrator> {
        self.calibrators.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Calibrator> {
        self.calibrators.iter_mut()
    }

    pub fn is_empty(&self) -> bool {
        self.calibrators.is_empty()
    }

    /// Calibrate one raw score vector; identity when no calibrator is
    /// registered for the key.
    pub fn calibrate(
        &self,
        strategy: &StrategyId,
        subproblem: &str,
        scores: &[f64],
    ) -> Result<Vec<f64>, CalibrationError> {
        match self.get(strategy, subproblem) {
            Some(c) => c.calibrate(scores),
            None => Ok(scores.to_vec()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibrator set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        serde_json::from_str(text).map_err(|e| CalibrationError::Document(e.to_string()))
    }
}

/// One problem instance carried through calibration: the compiled problem
/// (with gold) plus the raw score vector of every (decision, strategy).
#[derive(Debug, Clone)]
pub struct CalibrationInstance {
    pub problem: StructuredProblem,
    pub tables: BTreeMap<(DecisionId, StrategyId), Vec<f64>>,
}

impl CalibrationInstance {
    /// Pair a compiled problem with the score tables it was built from.
    pub fn new(problem: StructuredProblem, tables: &[ScoreTable]) -> Self {
        let tables = tables
            .iter()
            .map(|t| ((t.decision.clone(), t.strategy.clone()), t.scores.clone()))
            .collect();
        Self { problem, tables }
    }

    /// The problem with every outcome weight replaced by its calibrated
    /// score.
    pub fn calibrated_problem(
        &self,
        set: &CalibratorSet,
    ) -> Result<StructuredProblem, CalibrationError> {
        let mut calibrated: BTreeMap<(DecisionId, StrategyId), Vec<f64>> = BTreeMap::new();
        for ((decision, strategy), scores) in &self.tables {
            let s = set.calibrate(strategy, &decision.subproblem, scores)?;
            calibrated.insert((decision.clone(), strategy.clone()), s);
        }
        let problem = self.problem.reweighted(|o| {
            calibrated
                .get(&(o.decision.clone(), o.strategy.clone()))
                .map(|s| s[o.label as usize])
                .unwrap_or_else(|| o.weight())
        })?;
        Ok(problem)
    }

    /// Gold label per decision in canonical order, if every decision has
    /// one.
    pub fn gold_labels_canonical(&self) -> Option<Vec<u32>> {
        let gold = self.problem.gold_labels()?;
        self.problem.decision_ids().map(|id| gold.get(id).copied()).collect()
    }
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibrator {calibrator} expected input dim {expected}, got {got}")]
    DimMismatch { calibrator: String, got: usize, expected: usize },
    #[error("no gold labels on instance {0}")]
    NoGold(String),
    #[error("training diverged (non-finite loss) with seed {seed} at epoch {epoch}")]
    Diverged { seed: u64, epoch: u32 },
    #[error("no training data for any calibrator key")]
    NoTrainingData,
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("invalid calibrator document: {0}")]
    Document(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("solver failed during calibration: {0}")]
    Solver(String),
}

/// Structured hinge loss at frozen inference output: the calibrated-score
/// total of the predicted labels minus that of the gold labels, clamped at
/// zero. Labels are per-decision in canonical order. Under the canonical
/// completion every strategy's outcome at a chosen label is active, so each
/// decision contributes one term per strategy.
pub fn hinge_loss(
    set: &CalibratorSet,
    instance: &CalibrationInstance,
    predicted: &[u32],
    gold: &[u32],
) -> Result<f64, CalibrationError> {
    Ok(hinge_margin(set, instance, predicted, gold)?.max(0.0))
}

fn hinge_margin(
    set: &CalibratorSet,
    instance: &CalibrationInstance,
    predicted: &[u32],
    gold: &[u32],
) -> Result<f64, CalibrationError> {
    let ids: Vec<&DecisionId> = instance.problem.decision_ids().collect();
    debug_assert_eq!(ids.len(), predicted.len());
    debug_assert_eq!(ids.len(), gold.len());
    let mut total = 0.0;
    for ((decision, strategy), scores) in &instance.tables {
        let i = ids
            .iter()
            .position(|id| *id == decision)
            .expect("table decision exists in problem");
        let s = set.calibrate(strategy, &decision.subproblem, scores)?;
        total += s[predicted[i] as usize] - s[gold[i] as usize];
    }
    Ok(total)
}

/// Per-calibrator subgradients of [`hinge_loss`] with frozen predictions:
/// zero when the loss is zero, otherwise backpropagated through each
/// affine+softmax calibrator. Identity calibrators carry no parameters and
/// receive none. Returned per key as (weight gradient, bias gradient).
pub fn hinge_gradients(
    set: &CalibratorSet,
    instance: &CalibrationInstance,
    predicted: &[u32],
    gold: &[u32],
) -> Result<BTreeMap<CalibratorKey, (Vec<Vec<f64>>, Vec<f64>)>, CalibrationError> {
    let mut grads: BTreeMap<CalibratorKey, (Vec<Vec<f64>>, Vec<f64>)> = BTreeMap::new();
    if hinge_margin(set, instance, predicted, gold)? <= 0.0 {
        return Ok(grads);
    }
    let ids: Vec<&DecisionId> = instance.problem.decision_ids().collect();
    for ((decision, strategy), scores) in &instance.tables {
        let i = ids.iter().position(|id| *id == decision).expect("decision exists");
        let (yhat, y) = (predicted[i] as usize, gold[i] as usize);
        if yhat == y {
            continue;
        }
        let Some(calibrator) = set.get(strategy, &decision.subproblem) else {
            continue;
        };
        if calibrator.kind != CalibratorKind::AffineSoftmax {
            continue;
        }
        let s = calibrator.calibrate(scores)?;
        // dL/ds is +1 at the predicted label and -1 at gold; through the
        // softmax Jacobian: dz_a = s_a * (g_a - g.s).
        let g_dot_s = s[yhat] - s[y];
        let dim = s.len();
        let entry = grads
            .entry(calibrator.key())
            .or_insert_with(|| (vec![vec![0.0; dim]; dim], vec![0.0; dim]));
        for a in 0..dim {
            let g_a = f64::from(a == yhat) - f64::from(a == y);
            let dz = s[a] * (g_a - g_dot_s);
            entry.1[a] += dz;
            for (x_idx, x) in scores.iter().enumerate() {
                entry.0[a][x_idx] += dz * x;
            }
        }
    }
    Ok(grads)
}

/// Evaluation of a calibrator set on held-out instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Micro F1 over all decisions, constrained inference.
    pub micro_f1_constrained: f64,
    /// Micro F1 over all decisions, unconstrained per-decision argmax.
    pub micro_f1_unconstrained: f64,
    /// Macro F1 over (subproblem, label) classes, constrained.
    pub macro_f1_constrained: f64,
    pub macro_f1_unconstrained: f64,
    /// Hard-constraint violations summed over instances.
    pub violations_constrained: BTreeMap<String, usize>,
    pub violations_unconstrained: BTreeMap<String, usize>,
    /// Expected calibration error of calibrated tables (10 bins).
    pub ece: f64,
    pub instances: usize,
    pub skipped: usize,
}

/// Run constrained and unconstrained inference with calibrated weights on
/// every instance and score against gold. Instances whose solve exhausts
/// the budget are skipped and counted.
pub fn evaluate_calibration(
    set: &CalibratorSet,
    instances: &[CalibrationInstance],
    limits: SolveLimits,
) -> Result<CalibrationReport, CalibrationError> {
    let mut gold_all = Vec::new();
    let mut constrained_all = Vec::new();
    let mut unconstrained_all = Vec::new();
    let mut class_of = Vec::new();
    let mut violations_constrained: BTreeMap<String, usize> = BTreeMap::new();
    let mut violations_unconstrained: BTreeMap<String, usize> = BTreeMap::new();
    let mut ece_points: Vec<(f64, bool)> = Vec::new();
    let mut skipped = 0usize;

    for instance in instances {
        let gold = instance
            .gold_labels_canonical()
            .ok_or_else(|| CalibrationError::NoGold(describe(instance)))?;
        let calibrated = instance.calibrated_problem(set)?;
        let solved = match solver::solve_map(&calibrated, limits) {
            Ok(r) => r,
            Err(SolverError::BudgetExceeded) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(CalibrationError::Solver(e.to_string())),
        };
        let constrained = calibrated.labels_from_assignment(&solved.assignment)?;
        let baseline = solver::local_argmax(&calibrated);
        let unconstrained = calibrated.labels_from_assignment(&baseline)?;

        merge_counts(
            &mut violations_constrained,
            &hard_violations(&calibrated, &solved.assignment)?,
        );
        merge_counts(
            &mut violations_unconstrained,
            &hard_violations(&calibrated, &baseline)?,
        );

        let ids: Vec<&DecisionId> = calibrated.decision_ids().collect();
        for (i, id) in ids.iter().enumerate() {
            gold_all.push(gold[i]);
            constrained_all.push(constrained[i]);
            unconstrained_all.push(unconstrained[i]);
            class_of.push(id.subproblem.clone());
        }

        for ((decision, strategy), scores) in &instance.tables {
            let s = set.calibrate(strategy, &decision.subproblem, scores)?;
            let (argmax, conf) = s
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, v)| (i as u32, *v))
                .unwrap_or((0, 0.0));
            let i = ids.iter().position(|id| *id == decision).expect("decision exists");
            ece_points.push((conf, argmax == gold[i]));
        }
    }

    if gold_all.is_empty() {
        return Err(CalibrationError::NoTrainingData);
    }
    Ok(CalibrationReport {
        micro_f1_constrained: pooled_micro(&constrained_all, &gold_all),
        micro_f1_unconstrained: pooled_micro(&unconstrained_all, &gold_all),
        macro_f1_constrained: pooled_macro(&constrained_all, &gold_all, &class_of),
        macro_f1_unconstrained: pooled_macro(&unconstrained_all, &gold_all, &class_of),
        violations_constrained,
        violations_unconstrained,
        ece: expected_calibration_error(&ece_points, 10),
        instances: instances.len() - skipped,
        skipped,
    })
}

fn describe(instance: &CalibrationInstance) -> String {
    instance
        .problem
        .decision_ids()
        .next()
        .map(|id| id.task_instance.clone())
        .unwrap_or_else(|| "<empty>".into())
}

/// Violations per tag, restricted to hard (task) constraints.
pub fn hard_violations(
    problem: &StructuredProblem,
    assignment: &Assignment,
) -> Result<BTreeMap<String, usize>, ModelError> {
    let mut out = problem.violations_by_tag(assignment)?;
    out.retain(|tag, _| !matches!(tag.as_str(), "multiclass" | "link_ub" | "link_lb"));
    Ok(out)
}

fn merge_counts(into: &mut BTreeMap<String, usize>, from: &BTreeMap<String, usize>) {
    for (k, v) in from {
        *into.entry(k.clone()).or_insert(0) += v;
    }
}

/// Micro F1 over single-label decisions equals accuracy.
fn pooled_micro(predicted: &[u32], gold: &[u32]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let correct = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    correct as f64 / predicted.len() as f64
}

/// Macro F1 where a class is a (subproblem, label) pair. Classes absent
/// from both gold and predictions are excluded; classes in gold but never
/// predicted contribute zero.
fn pooled_macro(predicted: &[u32], gold: &[u32], class_of: &[String]) -> f64 {
    use std::collections::BTreeSet;
    let mut classes: BTreeSet<(&str, u32)> = BTreeSet::new();
    for i in 0..predicted.len() {
        classes.insert((class_of[i].as_str(), predicted[i]));
        classes.insert((class_of[i].as_str(), gold[i]));
    }
    if classes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (sub, label) in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fne = 0usize;
        for i in 0..predicted.len() {
            if class_of[i] != *sub {
                continue;
            }
            match (predicted[i] == *label, gold[i] == *label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fne;
        total += if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
    }
    total / classes.len() as f64
}

/// Expected calibration error over (confidence, correct) points with
/// equal-width bins.
pub fn expected_calibration_error(points: &[(f64, bool)], bins: usize) -> f64 {
    if points.is_empty() || bins == 0 {
        return 0.0;
    }
    let mut bin_conf = vec![0.0; bins];
    let mut bin_correct = vec![0usize; bins];
    let mut bin_count = vec![0usize; bins];
    for &(conf, correct) in points {
        let b = ((conf * bins as f64) as usize).min(bins - 1);
        bin_conf[b] += conf;
        bin_correct[b] += usize::from(correct);
        bin_count[b] += 1;
    }
    let n = points.len() as f64;
    (0..bins)
        .filter(|&b| bin_count[b] > 0)
        .map(|b| {
            let count = bin_count[b] as f64;
            let acc = bin_correct[b] as f64 / count;
            let conf = bin_conf[b] / count;
            (count / n) * (acc - conf).abs()
        })
        .sum()
}

#[cfg(test)]
mod tests;
