//! Calibrator training: local cross-entropy and global structured hinge.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    hinge_gradients, hinge_loss, CalibrationError, CalibrationInstance, Calibrator,
    CalibratorKind, CalibratorSet,
};
use crate::model::StrategyId;
use crate::seeds;
use crate::solver::{self, SolveLimits, SolverError};
use crate::util::mean;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    LocalCe,
    GlobalHinge,
}

/// Batch granularity: fixed-size minibatches, or one document per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSize {
    Fixed(usize),
    Document,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    pub batch_size: BatchSize,
    pub epochs: u32,
    pub seed: u64,
    /// Epochs without dev improvement before stopping.
    pub patience: u32,
    /// Held-out fraction used for early stopping.
    pub dev_fraction: f64,
    /// Optional hamming-cost augmentation of the hinge (0 disables it,
    /// matching the plain loss).
    pub margin_cost: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::LocalCe,
            learning_rate: 0.01,
            batch_size: BatchSize::Fixed(32),
            epochs: 50,
            seed: 0,
            patience: 5,
            dev_fraction: 0.1,
            margin_cost: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.learning_rate > 0.0) {
            return Err(CalibrationError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let BatchSize::Fixed(0) = self.batch_size {
            return Err(CalibrationError::InvalidConfig("batch size 0".into()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(CalibrationError::InvalidConfig(format!(
                "dev fraction must be in [0, 1), got {}",
                self.dev_fraction
            )));
        }
        Ok(())
    }
}

/// Per-epoch metrics emitted by both trainers; persisted as one JSONL line
/// per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub skipped_solves: u64,
}

/// One local training example: a raw score vector with its gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTable {
    pub strategy: StrategyId,
    pub subproblem: String,
    pub scores: Vec<f64>,
    pub gold: u32,
}

/// Flatten calibration instances into per-decision labeled tables.
pub fn labeled_tables(
    instances: &[CalibrationInstance],
) -> Result<Vec<LabeledTable>, CalibrationError> {
    let mut out = Vec::new();
    for instance in instances {
        let Some(gold) = instance.problem.gold_labels() else {
            return Err(CalibrationError::NoGold(super::describe(instance)));
        };
        for ((decision, strategy), scores) in &instance.tables {
            let Some(&label) = gold.get(decision) else {
                return Err(CalibrationError::NoGold(decision.to_string()));
            };
            out.push(LabeledTable {
                strategy: strategy.clone(),
                subproblem: decision.subproblem.clone(),
                scores: scores.clone(),
                gold: label,
            });
        }
    }
    Ok(out)
}

struct AffineGrad {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    count: usize,
}

impl AffineGrad {
    fn zeros(dim_out: usize, dim_in: usize) -> Self {
        Self { weights: vec![vec![0.0; dim_in]; dim_out], bias: vec![0.0; dim_out], count: 0 }
    }

    fn apply(&self, calibrator: &mut Calibrator, lr: f64) {
        if self.count == 0 {
            return;
        }
        let scale = lr / self.count as f64;
        for (row, grow) in calibrator.weights.iter_mut().zip(&self.weights) {
            for (w, g) in row.iter_mut().zip(grow) {
                *w -= scale * g;
            }
        }
        for (b, g) in calibrator.bias.iter_mut().zip(&self.bias) {
            *b -= scale * g;
        }
    }
}

/// Train one affine+softmax calibrator per (strategy, subproblem) group by
/// mini-batch SGD on the mean cross-entropy, returning the parameters with
/// the best dev loss. Strategies are trained independently: each calibrator
/// only ever sees its own strategy's tables.
pub fn train_local(
    data: &[LabeledTable],
    config: &TrainConfig,
) -> Result<(CalibratorSet, Vec<EpochMetrics>), CalibrationError> {
    config.validate()?;
    if data.is_empty() {
        return Err(CalibrationError::NoTrainingData);
    }
    let mut groups: std::collections::BTreeMap<(StrategyId, String), Vec<&LabeledTable>> =
        std::collections::BTreeMap::new();
    for t in data {
        groups.entry((t.strategy.clone(), t.subproblem.clone())).or_default().push(t);
    }

    let mut set = CalibratorSet::new();
    let mut log = Vec::new();
    for ((strategy, subproblem), mut examples) in groups {
        let dim = examples[0].scores.len();
        for e in &examples {
            if e.scores.len() != dim {
                return Err(CalibrationError::DimMismatch {
                    calibrator: format!("{strategy}/{subproblem}"),
                    got: e.scores.len(),
                    expected: dim,
                });
            }
        }
        let mut rng = seeds::rng(config.seed, &format!("local/{strategy}/{subproblem}"));
        examples.shuffle(&mut rng);
        let dev_len = ((examples.len() as f64) * config.dev_fraction).floor() as usize;
        let (dev, train) = examples.split_at(dev_len);
        let train: Vec<&LabeledTable> = train.to_vec();
        if train.is_empty() {
            return Err(CalibrationError::NoTrainingData);
        }

        let mut calibrator = Calibrator::affine(strategy.clone(), subproblem.clone(), dim);
        let mut best = calibrator.clone();
        let mut best_dev = f64::INFINITY;
        let mut stale = 0u32;
        let batch = match config.batch_size {
            BatchSize::Fixed(n) => n,
            BatchSize::Document => train.len(),
        };

        for epoch in 0..config.epochs {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                let mut grad = AffineGrad::zeros(dim, dim);
                for &i in chunk {
                    let example = train[i];
                    let p = calibrator.calibrate(&example.scores)?;
                    for a in 0..dim {
                        let dz = p[a] - f64::from(a == example.gold as usize);
                        grad.bias[a] += dz;
                        for (x_idx, x) in example.scores.iter().enumerate() {
                            grad.weights[a][x_idx] += dz * x;
                        }
                    }
                    grad.count += 1;
                }
                grad.apply(&mut calibrator, config.learning_rate);
            }

            let train_loss = mean_ce(&calibrator, &train)?;
            if !train_loss.is_finite() {
                return Err(CalibrationError::Diverged { seed: config.seed, epoch });
            }
            let dev_loss =
                if dev.is_empty() { train_loss } else { mean_ce(&calibrator, dev)? };
            log.push(EpochMetrics { epoch, train_loss, dev_loss, skipped_solves: 0 });
            if dev_loss < best_dev - 1e-12 {
                best_dev = dev_loss;
                best = calibrator.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale > config.patience {
                    break;
                }
            }
        }
        set.insert(best);
    }
    Ok((set, log))
}

fn mean_ce(
    calibrator: &Calibrator,
    examples: &[&LabeledTable],
) -> Result<f64, CalibrationError> {
    let losses: Vec<f64> = examples
        .iter()
        .map(|e| {
            calibrator
                .calibrate(&e.scores)
                .map(|p| -(p[e.gold as usize].max(1e-300)).ln())
        })
        .collect::<Result<_, _>>()?;
    Ok(mean(&losses))
}

/// Outcome of global training.
pub struct GlobalTrainOutcome {
    pub set: CalibratorSet,
    pub log: Vec<EpochMetrics>,
    /// Solves skipped for budget exhaustion across all epochs.
    pub skipped_solves: u64,
}

/// Jointly train all calibrators with the structured hinge: each step runs
/// MAP inference with current calibrated weights, compares the result
/// against gold, and applies the frozen-prediction subgradient. Batches are
/// one document each ([`BatchSize::Document`]) or fixed-size groups of
/// documents. Initial parameters come from `init` (commonly the
/// locally-trained calibrators); keys missing there start at zero.
pub fn train_global(
    instances: &[CalibrationInstance],
    init: &CalibratorSet,
    config: &TrainConfig,
    limits: SolveLimits,
) -> Result<GlobalTrainOutcome, CalibrationError> {
    config.validate()?;
    if instances.is_empty() {
        return Err(CalibrationError::NoTrainingData);
    }
    for instance in instances {
        if instance.gold_labels_canonical().is_none() {
            return Err(CalibrationError::NoGold(super::describe(instance)));
        }
    }

    // Discover calibrator keys and dims from the tables.
    let mut dims: std::collections::BTreeMap<(StrategyId, String), usize> =
        std::collections::BTreeMap::new();
    for instance in instances {
        for ((decision, strategy), scores) in &instance.tables {
            let key = (strategy.clone(), decision.subproblem.clone());
            let dim = dims.entry(key.clone()).or_insert(scores.len());
            if *dim != scores.len() {
                return Err(CalibrationError::DimMismatch {
                    calibrator: format!("{}/{}", key.0, key.1),
                    got: scores.len(),
                    expected: *dim,
                });
            }
        }
    }
    let mut set = CalibratorSet::new();
    for ((strategy, subproblem), dim) in &dims {
        let calibrator = match init.get(strategy, subproblem) {
            Some(c) if c.kind == CalibratorKind::AffineSoftmax && c.bias.len() == *dim => {
                c.clone()
            }
            _ => Calibrator::affine(strategy.clone(), subproblem.clone(), *dim),
        };
        set.insert(calibrator);
    }

    let mut rng = seeds::rng(config.seed, "global");
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut rng);
    let dev_len = ((instances.len() as f64) * config.dev_fraction).floor() as usize;
    let (dev_idx, train_idx) = order.split_at(dev_len);
    let train_idx: Vec<usize> = train_idx.to_vec();
    if train_idx.is_empty() {
        return Err(CalibrationError::NoTrainingData);
    }

    let batch = match config.batch_size {
        BatchSize::Fixed(n) => n,
        BatchSize::Document => 1,
    };
    let mut skipped_total = 0u64;
    let mut best = set.clone();
    let mut best_dev = dev_hinge(&set, instances, dev_idx, &train_idx, config, limits)?;
    let mut stale = 0u32;
    let mut log = Vec::new();

    for epoch in 0..config.epochs {
        let mut epoch_order = train_idx.clone();
        epoch_order.shuffle(&mut rng);
        let mut train_losses = Vec::new();
        let mut skipped = 0u64;

        for chunk in epoch_order.chunks(batch) {
            let mut grads: std::collections::BTreeMap<
                (StrategyId, String),
                (Vec<Vec<f64>>, Vec<f64>),
            > = std::collections::BTreeMap::new();
            let mut contributing = 0usize;
            for &i in chunk {
                let instance = &instances[i];
                match step_loss(&set, instance, config, limits)? {
                    StepOutcome::Skipped => skipped += 1,
                    StepOutcome::Loss { loss, predicted, gold } => {
                        train_losses.push(loss);
                        contributing += 1;
                        if loss > 0.0 {
                            let g = hinge_gradients(&set, instance, &predicted, &gold)?;
                            for (key, (gw, gb)) in g {
                                let entry = grads.entry(key).or_insert_with(|| {
                                    (vec![vec![0.0; gw[0].len()]; gw.len()], vec![0.0; gb.len()])
                                });
                                for (row, grow) in entry.0.iter_mut().zip(&gw) {
                                    for (a, b) in row.iter_mut().zip(grow) {
                                        *a += b;
                                    }
                                }
                                for (a, b) in entry.1.iter_mut().zip(&gb) {
                                    *a += b;
                                }
                            }
                        }
                    }
                }
            }
            if contributing == 0 {
                continue;
            }
            let scale = config.learning_rate / contributing as f64;
            for calibrator in set.iter_mut() {
                if let Some((gw, gb)) = grads.get(&calibrator.key()) {
                    for (row, grow) in calibrator.weights.iter_mut().zip(gw) {
                        for (w, g) in row.iter_mut().zip(grow) {
                            *w -= scale * g;
                        }
                    }
                    for (b, g) in calibrator.bias.iter_mut().zip(gb) {
                        *b -= scale * g;
                    }
                }
            }
        }

        let train_loss = mean(&train_losses);
        if !train_loss.is_finite() {
            return Err(CalibrationError::Diverged { seed: config.seed, epoch });
        }
        let dev_loss = dev_hinge(&set, instances, dev_idx, &train_idx, config, limits)?;
        skipped_total += skipped;
        log.push(EpochMetrics { epoch, train_loss, dev_loss, skipped_solves: skipped });
        if dev_loss < best_dev - 1e-12 {
            best_dev = dev_loss;
            best = set.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }

    Ok(GlobalTrainOutcome { set: best, log, skipped_solves: skipped_total })
}

enum StepOutcome {
    Skipped,
    Loss { loss: f64, predicted: Vec<u32>, gold: Vec<u32> },
}

/// Inference plus hinge loss for one instance under the current
/// calibrators. With a margin cost, inference runs loss-augmented: non-gold
/// labels get a per-strategy weight bonus (clamped into [0, 1]) and the
/// loss adds the scaled hamming distance.
fn step_loss(
    set: &CalibratorSet,
    instance: &CalibrationInstance,
    config: &TrainConfig,
    limits: SolveLimits,
) -> Result<StepOutcome, CalibrationError> {
    let gold = instance
        .gold_labels_canonical()
        .ok_or_else(|| CalibrationError::NoGold(super::describe(instance)))?;
    let calibrated = instance.calibrated_problem(set)?;
    let inference_problem = if config.margin_cost > 0.0 {
        let gold_map = instance.problem.gold_labels().expect("gold checked above").clone();
        calibrated.reweighted(|o| {
            let bonus = match gold_map.get(&o.decision) {
                Some(&g) if g != o.label => config.margin_cost,
                _ => 0.0,
            };
            (o.weight() + bonus).min(1.0)
        })?
    } else {
        calibrated.clone()
    };
    let solved = match solver::solve_map(&inference_problem, limits) {
        Ok(r) => r,
        Err(SolverError::BudgetExceeded) => {
            log::warn!("skipping instance: solver budget exhausted");
            return Ok(StepOutcome::Skipped);
        }
        Err(e) => return Err(CalibrationError::Solver(e.to_string())),
    };
    let predicted = calibrated.labels_from_assignment(&solved.assignment)?;
    let mut loss = hinge_loss(set, instance, &predicted, &gold)?;
    if config.margin_cost > 0.0 {
        let hamming =
            predicted.iter().zip(&gold).filter(|(p, g)| p != g).count() as f64;
        loss = (loss + config.margin_cost * hamming).max(0.0);
    }
    Ok(StepOutcome::Loss { loss, predicted, gold })
}

fn dev_hinge(
    set: &CalibratorSet,
    instances: &[CalibrationInstance],
    dev_idx: &[usize],
    train_idx: &[usize],
    config: &TrainConfig,
    limits: SolveLimits,
) -> Result<f64, CalibrationError> {
    let idx = if dev_idx.is_empty() { train_idx } else { dev_idx };
    let mut losses = Vec::new();
    for &i in idx {
        if let StepOutcome::Loss { loss, .. } = step_loss(set, &instances[i], config, limits)? {
            losses.push(loss);
        }
    }
    Ok(mean(&losses))
}
