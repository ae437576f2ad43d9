use super::train::*;
use super::*;
use crate::model::{DecisionId, DecisionScores, DecisionSpec, ProblemSpec};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn strat(s: &str) -> StrategyId {
    StrategyId::new(s)
}

#[test]
fn identity_calibrator_is_a_no_op() {
    let c = Calibrator::identity(strat("tf"), "sub");
    assert_eq!(c.calibrate(&[0.7, 0.3]).unwrap(), vec![0.7, 0.3]);
}

#[test]
fn zero_affine_calibrator_is_uniform() {
    let c = Calibrator::affine(strat("tf"), "sub", 3);
    let out = c.calibrate(&[0.9, 0.05, 0.05]).unwrap();
    for v in out {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn scaled_diagonal_sharpens_without_changing_argmax() {
    let mut c = Calibrator::affine(strat("tf"), "sub", 2);
    c.weights = vec![vec![10.0, 0.0], vec![0.0, 10.0]];
    let input = [0.7, 0.3];
    let out = c.calibrate(&input).unwrap();
    assert!(out[0] > input[0]);
    assert!(out[0] > out[1]);
    let sum: f64 = out.iter().sum();
    assert!((sum - 1.0).abs() < 1e-6);
}

#[test]
fn dim_mismatch_is_reported() {
    let c = Calibrator::affine(strat("tf"), "sub", 2);
    assert!(matches!(
        c.calibrate(&[0.1, 0.2, 0.7]),
        Err(CalibrationError::DimMismatch { .. })
    ));
}

#[test]
fn calibrator_set_round_trips_through_json() {
    let mut set = CalibratorSet::new();
    set.insert(Calibrator::affine(strat("tf"), "a", 2));
    set.insert(Calibrator::identity(strat("mc"), "b"));
    let text = set.to_json();
    let back = CalibratorSet::from_json(&text).unwrap();
    assert_eq!(set, back);
}

/// Three binary decisions, one strategy, raw scores chosen so the
/// predicted/gold score sums are 2.0 and 1.7.
fn hinge_fixture() -> CalibrationInstance {
    let ids: Vec<DecisionId> =
        (0..3).map(|i| DecisionId::new("t", "sub", format!("d{i}"))).collect();
    let raw = [vec![0.9, 0.1], vec![0.6, 0.3], vec![0.5, 0.2]];
    let scores: Vec<DecisionScores> = ids
        .iter()
        .zip(&raw)
        .map(|(id, s)| DecisionScores {
            decision: id.clone(),
            strategy: strat("p"),
            scores: s.clone(),
        })
        .collect();
    let gold = ids.iter().cloned().zip([0u32, 1, 0]).collect();
    let problem = StructuredProblem::build(ProblemSpec {
        decisions: ids.iter().map(|id| DecisionSpec { id: id.clone(), num_labels: 2 }).collect(),
        scores: scores.clone(),
        gold: Some(gold),
        ..ProblemSpec::default()
    })
    .unwrap();
    let tables: Vec<crate::scoring::ScoreTable> = scores
        .into_iter()
        .map(|s| crate::scoring::ScoreTable {
            decision: s.decision,
            strategy: s.strategy,
            raw: Default::default(),
            scores: s.scores,
        })
        .collect();
    CalibrationInstance::new(problem, &tables)
}

#[test]
fn hinge_is_zero_at_gold() {
    let instance = hinge_fixture();
    let set = CalibratorSet::new();
    let gold = instance.gold_labels_canonical().unwrap();
    assert_eq!(hinge_loss(&set, &instance, &gold, &gold).unwrap(), 0.0);
    assert!(hinge_gradients(&set, &instance, &gold, &gold).unwrap().is_empty());
}

#[test]
fn hinge_is_the_score_difference() {
    let instance = hinge_fixture();
    let set = CalibratorSet::new();
    let gold = instance.gold_labels_canonical().unwrap();
    // Predicted labels all 0 score 2.0; gold scores 1.7.
    let l = hinge_loss(&set, &instance, &[0, 0, 0], &gold).unwrap();
    assert!((l - 0.3).abs() < 1e-12);
}

#[test]
fn hinge_clamps_at_zero_below_gold() {
    let instance = hinge_fixture();
    let set = CalibratorSet::new();
    let gold = instance.gold_labels_canonical().unwrap();
    // A prediction scoring below gold yields zero loss, not negative.
    let l = hinge_loss(&set, &instance, &[1, 1, 1], &gold).unwrap();
    assert_eq!(l, 0.0);
}

fn random_calibrated_instance(
    rng: &mut ChaCha8Rng,
) -> (CalibrationInstance, CalibratorSet, Vec<u32>, Vec<u32>) {
    let n = rng.random_range(2..5usize);
    let k = rng.random_range(2..4u32);
    let ids: Vec<DecisionId> =
        (0..n).map(|i| DecisionId::new("t", "sub", format!("d{i}"))).collect();
    let scores: Vec<DecisionScores> = ids
        .iter()
        .map(|id| DecisionScores {
            decision: id.clone(),
            strategy: strat("p"),
            scores: (0..k).map(|_| rng.random::<f64>()).collect(),
        })
        .collect();
    let gold_labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let gold = ids.iter().cloned().zip(gold_labels.iter().copied()).collect();
    let problem = StructuredProblem::build(ProblemSpec {
        decisions: ids.iter().map(|id| DecisionSpec { id: id.clone(), num_labels: k }).collect(),
        scores: scores.clone(),
        gold: Some(gold),
        ..ProblemSpec::default()
    })
    .unwrap();
    let tables: Vec<crate::scoring::ScoreTable> = scores
        .into_iter()
        .map(|s| crate::scoring::ScoreTable {
            decision: s.decision,
            strategy: s.strategy,
            raw: Default::default(),
            scores: s.scores,
        })
        .collect();
    let instance = CalibrationInstance::new(problem, &tables);

    let mut set = CalibratorSet::new();
    let mut calibrator = Calibrator::affine(strat("p"), "sub", k as usize);
    for row in &mut calibrator.weights {
        for w in row {
            *w = rng.random::<f64>() * 2.0 - 1.0;
        }
    }
    for b in &mut calibrator.bias {
        *b = rng.random::<f64>() * 0.5 - 0.25;
    }
    set.insert(calibrator);

    // A predicted labeling that differs from gold somewhere.
    let predicted: Vec<u32> = gold_labels
        .iter()
        .enumerate()
        .map(|(i, &g)| if i == 0 { (g + 1) % k } else { g })
        .collect();
    (instance, set, predicted, gold_labels)
}

#[test]
fn hinge_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for _ in 0..40 {
        let (instance, set, predicted, gold) = random_calibrated_instance(&mut rng);
        // Only exercise points where the hinge is active and comfortably
        // away from the kink, so central differences see the linear piece.
        let loss = hinge_loss(&set, &instance, &predicted, &gold).unwrap();
        if loss < 1e-2 {
            continue;
        }
        checked += 1;
        let analytic = hinge_gradients(&set, &instance, &predicted, &gold).unwrap();
        let step = 1e-4;
        let mut max_rel: f64 = 0.0;
        let keys: Vec<_> = set.iter().map(|c| c.key()).collect();
        for key in keys {
            let dim = set.get(&key.0, &key.1).unwrap().bias.len();
            let (gw, gb) = analytic.get(&key).cloned().unwrap_or_else(|| {
                (vec![vec![0.0; dim]; dim], vec![0.0; dim])
            });
            let mut numeric_w = vec![vec![0.0; dim]; dim];
            let mut numeric_b = vec![0.0; dim];
            for a in 0..dim {
                for x in 0..dim {
                    let mut plus = set.clone();
                    let mut minus = set.clone();
                    for c in plus.iter_mut() {
                        if c.key() == key {
                            c.weights[a][x] += step;
                        }
                    }
                    for c in minus.iter_mut() {
                        if c.key() == key {
                            c.weights[a][x] -= step;
                        }
                    }
                    let lp = hinge_loss(&plus, &instance, &predicted, &gold).unwrap();
                    let lm = hinge_loss(&minus, &instance, &predicted, &gold).unwrap();
                    numeric_w[a][x] = (lp - lm) / (2.0 * step);
                }
                let mut plus = set.clone();
                let mut minus = set.clone();
                for c in plus.iter_mut() {
                    if c.key() == key {
                        c.bias[a] += step;
                    }
                }
                for c in minus.iter_mut() {
                    if c.key() == key {
                        c.bias[a] -= step;
                    }
                }
                numeric_b[a] = (hinge_loss(&plus, &instance, &predicted, &gold).unwrap()
                    - hinge_loss(&minus, &instance, &predicted, &gold).unwrap())
                    / (2.0 * step);
            }
            let mut num_norm = 0.0;
            let mut diff_norm = 0.0;
            for a in 0..dim {
                for x in 0..dim {
                    diff_norm += (gw[a][x] - numeric_w[a][x]).powi(2);
                    num_norm += numeric_w[a][x].powi(2);
                }
                diff_norm += (gb[a] - numeric_b[a]).powi(2);
                num_norm += numeric_b[a].powi(2);
            }
            let rel = diff_norm.sqrt() / num_norm.sqrt().max(1e-12);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel <= 1e-5, "gradient mismatch: rel err {max_rel}");
    }
    assert!(checked >= 10, "too few active-hinge checks: {checked}");
}

fn one_decision_dataset(
    rng: &mut ChaCha8Rng,
    n: usize,
    k: u32,
    informative: bool,
    distort: bool,
    priors: &[f64],
) -> Vec<LabeledTable> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut gold = 0u32;
            let mut acc = 0.0;
            for (i, p) in priors.iter().enumerate() {
                acc += p;
                if u < acc {
                    gold = i as u32;
                    break;
                }
            }
            let mut scores: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 0.2).collect();
            if informative {
                scores[gold as usize] += 0.8;
            }
            let sum: f64 = scores.iter().sum();
            let mut scores: Vec<f64> = scores.into_iter().map(|s| s / sum).collect();
            if distort {
                let squared: Vec<f64> = scores.iter().map(|s| s * s).collect();
                let sum: f64 = squared.iter().sum();
                scores = squared.into_iter().map(|s| s / sum).collect();
            }
            LabeledTable { strategy: strat("p"), subproblem: "sub".into(), scores, gold }
        })
        .collect()
}

fn argmax(xs: &[f64]) -> u32 {
    xs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i as u32).unwrap()
}

fn accuracy(set: &CalibratorSet, data: &[LabeledTable]) -> f64 {
    let correct = data
        .iter()
        .filter(|t| {
            let s = set.calibrate(&t.strategy, &t.subproblem, &t.scores).unwrap();
            argmax(&s) == t.gold
        })
        .count();
    correct as f64 / data.len() as f64
}

#[test]
fn local_training_fits_informative_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let priors = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
    let train = one_decision_dataset(&mut rng, 400, 3, true, false, &priors);
    let test = one_decision_dataset(&mut rng, 400, 3, true, false, &priors);
    let config = TrainConfig {
        learning_rate: 0.5,
        epochs: 300,
        patience: 50,
        seed: 1,
        ..TrainConfig::default()
    };
    let (set, log) = train_local(&train, &config).unwrap();
    let final_loss = log.last().unwrap().train_loss;
    assert!(final_loss < 0.2, "loss did not approach zero: {final_loss}");
    let uncalibrated = accuracy(&CalibratorSet::new(), &test);
    let calibrated = accuracy(&set, &test);
    assert!(calibrated >= uncalibrated, "{calibrated} < {uncalibrated}");
    assert!(calibrated > 0.95);
}

#[test]
fn local_training_on_noise_matches_majority_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let priors = [0.5, 0.3, 0.2];
    let train = one_decision_dataset(&mut rng, 1500, 3, false, false, &priors);
    let test = one_decision_dataset(&mut rng, 1500, 3, false, false, &priors);
    let config = TrainConfig { learning_rate: 0.2, epochs: 120, seed: 2, ..TrainConfig::default() };
    let (set, _) = train_local(&train, &config).unwrap();
    let acc = accuracy(&set, &test);
    // Gold-independent inputs: the best any calibrator can do is predict
    // the majority class.
    assert!((acc - 0.5).abs() < 0.08, "accuracy {acc} deviates from majority rate 0.5");
}

#[test]
fn local_training_recovers_monotone_distortion() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let priors = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
    let clean = one_decision_dataset(&mut rng, 600, 3, true, false, &priors);
    let oracle_agreement = accuracy(&CalibratorSet::new(), &clean);

    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let distorted = one_decision_dataset(&mut rng, 600, 3, true, true, &priors);
    let (train, test) = distorted.split_at(400);
    let config = TrainConfig {
        learning_rate: 0.5,
        epochs: 300,
        patience: 50,
        seed: 3,
        ..TrainConfig::default()
    };
    let (set, _) = train_local(&train.to_vec(), &config).unwrap();
    let calibrated = accuracy(&set, &test.to_vec());
    assert!(
        calibrated >= 0.98 * oracle_agreement,
        "calibrated {calibrated} vs oracle {oracle_agreement}"
    );
}

#[test]
fn invalid_learning_rate_is_rejected() {
    let config = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
    assert!(matches!(
        train_local(
            &[LabeledTable {
                strategy: strat("p"),
                subproblem: "s".into(),
                scores: vec![0.5, 0.5],
                gold: 0
            }],
            &config
        ),
        Err(CalibrationError::InvalidConfig(_))
    ));
}

#[test]
fn identity_calibration_reproduces_uncalibrated_metrics() {
    let instance = hinge_fixture();
    let limits = crate::solver::SolveLimits::default();
    let empty = evaluate_calibration(&CalibratorSet::new(), &[instance.clone()], limits).unwrap();
    let mut identity = CalibratorSet::new();
    identity.insert(Calibrator::identity(strat("p"), "sub"));
    let ident = evaluate_calibration(&identity, &[instance], limits).unwrap();
    assert_eq!(empty.micro_f1_constrained, ident.micro_f1_constrained);
    assert_eq!(empty.micro_f1_unconstrained, ident.micro_f1_unconstrained);
    assert_eq!(empty.violations_constrained, ident.violations_constrained);
    assert_eq!(empty.ece, ident.ece);
}

#[test]
fn global_training_runs_and_returns_finite_losses() {
    let benchmark = super::synthetic::distorted_benchmark(1);
    let train_slice = &benchmark.train[..12];
    let config = TrainConfig {
        objective: Objective::GlobalHinge,
        batch_size: BatchSize::Document,
        epochs: 3,
        patience: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let outcome =
        train_global(train_slice, &CalibratorSet::new(), &config, Default::default()).unwrap();
    assert!(!outcome.log.is_empty());
    for m in &outcome.log {
        assert!(m.train_loss.is_finite());
        assert!(m.dev_loss.is_finite());
    }
}

#[test]
fn ece_is_zero_for_perfectly_calibrated_points() {
    // Confidence 0.75 bucket with 3 of 4 correct: perfectly calibrated.
    let points = vec![(0.75, true), (0.75, true), (0.75, true), (0.75, false)];
    assert!(expected_calibration_error(&points, 10) < 1e-12);
    // All-confident, all-wrong is maximally miscalibrated.
    let bad = vec![(0.99, false); 5];
    assert!(expected_calibration_error(&bad, 10) > 0.9);
}
