//! Fold orchestration: score, calibrate, infer, evaluate, report.
//!
//! Every run walks the same pipeline per fold — elicit scores through the
//! response cache, optionally train calibrators on the train split, run
//! constrained and unconstrained inference on the test split, and compute
//! metrics — writing artifacts under the output directory as it goes:
//!
//! ```text
//! <output_dir>/
//!   resolved_config.json
//!   scores/fold_<i>/<strategy>.jsonl
//!   calibrators/fold_<i>.json
//!   solutions/fold_<i>.jsonl
//!   train_log/fold_<i>.jsonl
//!   report.json / report.md / report.svg
//! ```
//!
//! Reruns with a warm cache issue no backend requests, and identical
//! configs produce byte-identical reports.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CalibrationMode, ExperimentConfig, TaskKind};
use super::metrics::{compute_f1, Averaging};
use super::report::{FoldReport, MetricsReport, RuntimeStats, SubproblemMetrics};
use super::ExperimentError;
use crate::backend::{Backend, BackendHandle, HttpBackend, ResponseCache, SeededMockBackend};
use crate::calibration::train::{self, Objective, TrainConfig};
use crate::calibration::{CalibrationInstance, CalibratorSet};
use crate::model::{DecisionId, ProblemSpec, StructuredProblem};
use crate::scoring::{
    self, ScoreTable, ScoringContext, Strategy,
};
use crate::seeds;
use crate::solver;
use crate::tasks::data::FoldSplit;
use crate::tasks::morality::{self, MoralityOptions, TweetInstance};
use crate::tasks::coref::{self, CorefDocument, CorefOptions};
use crate::tasks::{ContextVariant, RenderedPrompts};
use crate::model::StrategyId;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Score,
    Calibrate,
    Infer,
    Evaluate,
    Report,
}

enum Dataset {
    Morality(Vec<TweetInstance>),
    Coref(Vec<CorefDocument>),
}

impl Dataset {
    fn len(&self) -> usize {
        match self {
            Dataset::Morality(v) => v.len(),
            Dataset::Coref(v) => v.len(),
        }
    }

    fn instance_name(&self, idx: usize) -> String {
        match self {
            Dataset::Morality(v) => v[idx].id.clone(),
            Dataset::Coref(v) => v[idx].doc_id.clone(),
        }
    }

    fn answer_vocab(&self) -> Vec<String> {
        match self {
            Dataset::Morality(_) => morality::FOUNDATIONS
                .iter()
                .chain(morality::ROLES.iter())
                .map(|s| s.to_string())
                .collect(),
            Dataset::Coref(_) => coref::LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn load_dataset(config: &ExperimentConfig) -> Result<(Dataset, Vec<FoldSplit>), ExperimentError> {
    let fold_seed = seeds::derive(config.seed, "folds");
    match config.task {
        TaskKind::Morality => {
            let (instances, splits) =
                morality::load_morality_dataset(&config.dataset, config.folds, fold_seed)?;
            Ok((Dataset::Morality(instances), splits))
        }
        TaskKind::Coref => {
            let (docs, splits) =
                coref::load_coref_dataset(&config.dataset, config.folds, fold_seed)?;
            Ok((Dataset::Coref(docs), splits))
        }
    }
}

fn make_backend(config: &ExperimentConfig, dataset: &Dataset) -> BackendHandle {
    let backend: Arc<dyn Backend> = if config.backend.endpoint == "mock" {
        Arc::new(
            SeededMockBackend::new(config.backend.mode, config.backend.mock_seed)
                .with_answer_vocab(dataset.answer_vocab()),
        )
    } else {
        Arc::new(HttpBackend::new(config.backend.descriptor()))
    };
    BackendHandle::with_concurrency(backend, config.backend.concurrency)
}

/// The (strategy, context variant) pairs a config expands to. For the
/// morality task both tweet-context variants act as separate prompting
/// strategies joined by the decision constraints; coreference has one.
fn strategy_variants(
    config: &ExperimentConfig,
    dataset: &Dataset,
) -> Vec<(Strategy, ContextVariant)> {
    let strategies = config.strategy_kinds();
    match dataset {
        Dataset::Morality(instances) => {
            let metadata_complete = instances
                .iter()
                .all(|i| i.ideology.is_some() && i.topic.is_some());
            let variants: &[ContextVariant] =
                if config.constraints.context_variants && metadata_complete {
                    &[ContextVariant::Plain, ContextVariant::IdeologyTopic]
                } else {
                    &[ContextVariant::Plain]
                };
            strategies
                .iter()
                .flat_map(|&s| variants.iter().map(move |&v| (s, v)))
                .collect()
        }
        Dataset::Coref(_) => {
            strategies.into_iter().map(|s| (s, ContextVariant::Plain)).collect()
        }
    }
}

fn strategy_id(task: TaskKind, strategy: Strategy, variant: ContextVariant) -> StrategyId {
    match task {
        TaskKind::Morality => StrategyId::new(format!("{}:{}", strategy.name(), variant.suffix())),
        TaskKind::Coref => StrategyId::new(strategy.name()),
    }
}

fn score_bundle(
    ctx: &ScoringContext,
    decision: &DecisionId,
    strategy_id: &StrategyId,
    bundle: &crate::tasks::PromptBundle,
    labels: &[&str],
) -> Result<ScoreTable, ExperimentError> {
    let table = match (&bundle.prompts, bundle.strategy) {
        (RenderedPrompts::PerLabel(prompts), Strategy::TrueFalse) => {
            scoring::score_true_false(ctx, decision, strategy_id, prompts)?
        }
        (RenderedPrompts::Single(prompt), Strategy::MultipleChoice) => {
            scoring::score_multiple_choice(ctx, decision, strategy_id, prompt, labels.len())?
        }
        (RenderedPrompts::Single(prompt), Strategy::GenerationSampling) => {
            scoring::score_generation_sampling(ctx, decision, strategy_id, prompt, labels)?
        }
        (RenderedPrompts::PerLabel(prompts), Strategy::VerbalizedConfidence) => {
            scoring::score_verbalized_confidence(ctx, decision, strategy_id, prompts)?
        }
        (RenderedPrompts::PerLabelMulti(prompts), Strategy::GenerativeClassification) => {
            let text = bundle.scored_text.as_deref().expect("generative bundles carry text");
            scoring::score_generative_classification(ctx, decision, strategy_id, prompts, text)?
        }
        _ => {
            return Err(ExperimentError::Data(format!(
                "prompt bundle shape does not match strategy {}",
                bundle.strategy
            )))
        }
    };
    Ok(table)
}

/// Per-fold shot exemplars, selected once from the train split.
struct ShotSets {
    /// Keyed by (strategy, variant, subproblem-kind key).
    sets: BTreeMap<(String, String), Vec<String>>,
}

impl ShotSets {
    fn get(&self, strategy: Strategy, variant: ContextVariant, kind: &str) -> &[String] {
        self.sets
            .get(&(format!("{}:{}", strategy.name(), variant.suffix()), kind.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

fn select_fold_shots(
    config: &ExperimentConfig,
    dataset: &Dataset,
    split: &FoldSplit,
    fold: usize,
    variants: &[(Strategy, ContextVariant)],
) -> Result<ShotSets, ExperimentError> {
    let mut sets = BTreeMap::new();
    let k = config.shots as usize;
    for &(strategy, variant) in variants {
        let seed = seeds::derive(
            config.seed,
            &format!("shots/fold{fold}/{}/{}", strategy.name(), variant.suffix()),
        );
        match dataset {
            Dataset::Morality(instances) => {
                for (kind, sub) in [
                    ("foundation", morality::Subproblem::Foundation),
                    ("role", morality::Subproblem::Role { entity: 0 }),
                ] {
                    let shots = morality::select_shots(
                        instances,
                        &split.train,
                        sub,
                        strategy,
                        variant,
                        k,
                        seed,
                    )?;
                    sets.insert(
                        (format!("{}:{}", strategy.name(), variant.suffix()), kind.to_string()),
                        shots,
                    );
                }
            }
            Dataset::Coref(docs) => {
                let shots = coref::select_shots(docs, &split.train, strategy, k, seed)?;
                sets.insert(
                    (format!("{}:{}", strategy.name(), variant.suffix()), "pair".to_string()),
                    shots,
                );
            }
        }
    }
    Ok(ShotSets { sets })
}

/// Score every decision of one instance under every configured strategy.
fn score_instance(
    config: &ExperimentConfig,
    dataset: &Dataset,
    idx: usize,
    ctx: &ScoringContext,
    variants: &[(Strategy, ContextVariant)],
    shots: &ShotSets,
) -> Result<Vec<ScoreTable>, ExperimentError> {
    let mut tables = Vec::new();
    match dataset {
        Dataset::Morality(instances) => {
            let instance = &instances[idx];
            for &(strategy, variant) in variants {
                let sid = strategy_id(config.task, strategy, variant);
                // Foundation decision.
                let bundle = morality::render_prompts(
                    instance,
                    morality::Subproblem::Foundation,
                    strategy,
                    variant,
                    shots.get(strategy, variant, "foundation"),
                )?;
                tables.push(score_bundle(
                    ctx,
                    &morality::foundation_decision_id(instance),
                    &sid,
                    &bundle,
                    &morality::FOUNDATIONS,
                )?);
                // Role decision per entity.
                for e in 0..instance.entities.len() {
                    let bundle = morality::render_prompts(
                        instance,
                        morality::Subproblem::Role { entity: e },
                        strategy,
                        variant,
                        shots.get(strategy, variant, "role"),
                    )?;
                    tables.push(score_bundle(
                        ctx,
                        &morality::role_decision_id(instance, e),
                        &sid,
                        &bundle,
                        &morality::ROLES,
                    )?);
                }
            }
        }
        Dataset::Coref(docs) => {
            let doc = &docs[idx];
            let options = CorefOptions { max_pair_distance: config.constraints.max_pair_distance };
            for &(strategy, variant) in variants {
                let sid = strategy_id(config.task, strategy, variant);
                for pair in coref::candidate_pairs(doc, options) {
                    let bundle = coref::render_prompts(
                        doc,
                        pair,
                        strategy,
                        shots.get(strategy, variant, "pair"),
                    )?;
                    tables.push(score_bundle(
                        ctx,
                        &coref::pair_decision_id(doc, pair.0, pair.1),
                        &sid,
                        &bundle,
                        &coref::LABELS,
                    )?);
                }
            }
        }
    }
    Ok(tables)
}

/// Compile one instance into a structured problem, honoring the constraint
/// toggle.
fn build_instance_problem(
    config: &ExperimentConfig,
    dataset: &Dataset,
    idx: usize,
    tables: &[ScoreTable],
) -> Result<StructuredProblem, ExperimentError> {
    let spec = match dataset {
        Dataset::Morality(instances) => {
            let instance = &instances[idx];
            let constraints = if config.constraints.enabled {
                morality::constraint_specs(
                    instance,
                    MoralityOptions { c2_mode: config.constraints.c2_mode },
                )
            } else {
                Vec::new()
            };
            ProblemSpec {
                decisions: morality::decision_specs(instance),
                scores: tables.iter().map(ScoreTable::to_decision_scores).collect(),
                constraints,
                gold: Some(morality::gold_labels(instance)),
                ..ProblemSpec::default()
            }
        }
        Dataset::Coref(docs) => {
            let doc = &docs[idx];
            let options = CorefOptions { max_pair_distance: config.constraints.max_pair_distance };
            let pairs = coref::candidate_pairs(doc, options);
            let constraints = if config.constraints.enabled {
                coref::transitivity_specs(doc, &pairs)
            } else {
                Vec::new()
            };
            ProblemSpec {
                decisions: pairs
                    .iter()
                    .map(|&(i, j)| crate::model::DecisionSpec {
                        id: coref::pair_decision_id(doc, i, j),
                        num_labels: 2,
                    })
                    .collect(),
                scores: tables.iter().map(ScoreTable::to_decision_scores).collect(),
                constraints,
                gold: Some(coref::gold_labels(doc, &pairs)),
                ..ProblemSpec::default()
            }
        }
    };
    Ok(StructuredProblem::build(spec)?)
}

#[derive(Serialize, Deserialize)]
struct PersistedTable {
    dataset: String,
    fold: usize,
    #[serde(flatten)]
    table: ScoreTable,
}

#[derive(Serialize, Deserialize)]
struct SolutionRow {
    instance: String,
    decisions: Vec<String>,
    gold: Vec<u32>,
    constrained: Vec<u32>,
    unconstrained: Vec<u32>,
    objective: f64,
    nodes: u64,
    proven_optimal: bool,
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| ExperimentError::Io(format!("create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, text)
        .map_err(|e| ExperimentError::Io(format!("write {}: {e}", path.display())))
}

struct FoldOutcome {
    report: FoldReport,
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    config: &ExperimentConfig,
    dataset: &Dataset,
    split: &FoldSplit,
    fold: usize,
    backend: &BackendHandle,
    cache: &ResponseCache,
    stage: Stage,
) -> Result<Option<FoldOutcome>, ExperimentError> {
    let ctx = ScoringContext::new(backend).with_cache(cache).with_params(config.scoring.clone());
    let variants = strategy_variants(config, dataset);
    let shots = select_fold_shots(config, dataset, split, fold, &variants)?;

    // Score every instance; calibration needs train scores and evaluation
    // needs test scores, and the cache deduplicates across folds.
    let mut all_indices: Vec<usize> =
        split.train.iter().chain(&split.dev).chain(&split.test).copied().collect();
    all_indices.sort_unstable();
    let mut tables: BTreeMap<usize, Vec<ScoreTable>> = BTreeMap::new();
    for &idx in &all_indices {
        tables.insert(idx, score_instance(config, dataset, idx, &ctx, &variants, &shots)?);
    }

    // Persist score tables per strategy.
    let mut by_strategy: BTreeMap<StrategyId, Vec<PersistedTable>> = BTreeMap::new();
    for (&idx, instance_tables) in &tables {
        let _ = idx;
        for t in instance_tables {
            by_strategy.entry(t.strategy.clone()).or_default().push(PersistedTable {
                dataset: config.dataset.display().to_string(),
                fold,
                table: t.clone(),
            });
        }
    }
    for (sid, rows) in &by_strategy {
        let path = config
            .output_dir
            .join("scores")
            .join(format!("fold_{fold}"))
            .join(format!("{}.jsonl", sid.as_str().replace(':', "@")));
        let lines: Vec<String> =
            rows.iter().map(|r| serde_json::to_string(r).expect("rows serialize")).collect();
        write_text(&path, &(lines.join("\n") + "\n"))?;
    }
    if stage == Stage::Score {
        return Ok(None);
    }

    // Calibration.
    let train_instances: Vec<CalibrationInstance> = split
        .train
        .iter()
        .chain(&split.dev)
        .map(|&idx| {
            let problem = build_instance_problem(config, dataset, idx, &tables[&idx])?;
            Ok(CalibrationInstance::new(problem, &tables[&idx]))
        })
        .collect::<Result<_, ExperimentError>>()?;
    let calibrators = match config.calibration {
        CalibrationMode::None => CalibratorSet::new(),
        CalibrationMode::Local => {
            let data = train::labeled_tables(&train_instances)?;
            let local_cfg =
                TrainConfig { objective: Objective::LocalCe, ..config.train.clone() };
            let (set, log) = train::train_local(&data, &local_cfg)?;
            write_train_log(config, fold, &log)?;
            set
        }
        CalibrationMode::Global => {
            let data = train::labeled_tables(&train_instances)?;
            let local_cfg =
                TrainConfig { objective: Objective::LocalCe, ..config.train.clone() };
            let (local_set, _) = train::train_local(&data, &local_cfg)?;
            let global_cfg =
                TrainConfig { objective: Objective::GlobalHinge, ..config.train.clone() };
            let outcome = train::train_global(
                &train_instances,
                &local_set,
                &global_cfg,
                config.solver.limits(),
            )?;
            write_train_log(config, fold, &outcome.log)?;
            outcome.set
        }
    };
    write_text(
        &config.output_dir.join("calibrators").join(format!("fold_{fold}.json")),
        &calibrators.to_json(),
    )?;
    if stage == Stage::Calibrate {
        return Ok(None);
    }

    // Inference on the test split, in parallel; results keep split order.
    let limits = config.solver.limits();
    let solved: Vec<(usize, SolutionRow, BTreeMap<String, usize>, BTreeMap<String, usize>, StructuredProblem)> =
        split
            .test
            .par_iter()
            .map(|&idx| -> Result<_, ExperimentError> {
                let problem = build_instance_problem(config, dataset, idx, &tables[&idx])?;
                let instance = CalibrationInstance::new(problem, &tables[&idx]);
                let calibrated = instance
                    .calibrated_problem(&calibrators)
                    .map_err(|e| ExperimentError::Data(e.to_string()))?;
                let solved = solver::solve_map(&calibrated, limits)?;
                let baseline = solver::local_argmax(&calibrated);
                let constrained = calibrated.labels_from_assignment(&solved.assignment)?;
                let unconstrained = calibrated.labels_from_assignment(&baseline)?;
                let gold = instance
                    .gold_labels_canonical()
                    .ok_or_else(|| ExperimentError::Data("instance lacks gold".into()))?;
                let viol_constrained =
                    crate::calibration::hard_violations(&calibrated, &solved.assignment)?;
                let viol_unconstrained =
                    crate::calibration::hard_violations(&calibrated, &baseline)?;
                let row = SolutionRow {
                    instance: dataset.instance_name(idx),
                    decisions: calibrated.decision_ids().map(|d| d.to_string()).collect(),
                    gold,
                    constrained,
                    unconstrained,
                    objective: solved.objective,
                    nodes: solved.nodes_explored,
                    proven_optimal: solved.proven_optimal,
                };
                Ok((idx, row, viol_constrained, viol_unconstrained, calibrated))
            })
            .collect::<Result<_, _>>()?;

    let solution_lines: Vec<String> = solved
        .iter()
        .map(|(_, row, ..)| serde_json::to_string(row).expect("rows serialize"))
        .collect();
    write_text(
        &config.output_dir.join("solutions").join(format!("fold_{fold}.jsonl")),
        &(solution_lines.join("\n") + "\n"),
    )?;
    if stage == Stage::Infer {
        return Ok(None);
    }

    // Metrics.
    let mut per_sub: BTreeMap<String, (Vec<u32>, Vec<u32>, Vec<u32>)> = BTreeMap::new();
    let mut violations_constrained: BTreeMap<String, usize> = BTreeMap::new();
    let mut violations_unconstrained: BTreeMap<String, usize> = BTreeMap::new();
    let mut ece_points: Vec<(f64, bool)> = Vec::new();
    let mut solver_nodes = 0u64;
    for (idx, row, vc, vu, calibrated) in &solved {
        solver_nodes += row.nodes;
        for (tag, count) in vc {
            *violations_constrained.entry(tag.clone()).or_insert(0) += count;
        }
        for (tag, count) in vu {
            *violations_unconstrained.entry(tag.clone()).or_insert(0) += count;
        }
        let ids: Vec<&DecisionId> = calibrated.decision_ids().collect();
        for (i, id) in ids.iter().enumerate() {
            let entry = per_sub.entry(id.subproblem.clone()).or_default();
            entry.0.push(row.constrained[i]);
            entry.1.push(row.unconstrained[i]);
            entry.2.push(row.gold[i]);
        }
        // Calibration error over the (calibrated) tables that fed
        // inference.
        let instance = CalibrationInstance::new(calibrated.clone(), &tables[idx]);
        for ((decision, strategy), scores) in &instance.tables {
            let s = calibrators
                .calibrate(strategy, &decision.subproblem, scores)
                .map_err(|e| ExperimentError::Data(e.to_string()))?;
            if let Some((argmax, conf)) =
                s.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))
            {
                let i = ids_position(&instance.problem, decision)?;
                ece_points.push((*conf, argmax as u32 == row.gold[i]));
            }
        }
    }

    let mut constrained = BTreeMap::new();
    let mut unconstrained = BTreeMap::new();
    for (sub, (cons, uncons, gold)) in &per_sub {
        let metric = |predicted: &[u32]| -> Result<SubproblemMetrics, ExperimentError> {
            Ok(SubproblemMetrics {
                micro_f1: compute_f1(predicted, gold, Averaging::Micro)
                    .map_err(|e| ExperimentError::Data(e.to_string()))?,
                macro_f1: compute_f1(predicted, gold, Averaging::Macro)
                    .map_err(|e| ExperimentError::Data(e.to_string()))?,
            })
        };
        constrained.insert(sub.clone(), metric(cons)?);
        unconstrained.insert(sub.clone(), metric(uncons)?);
    }

    let report = FoldReport {
        fold,
        constrained,
        unconstrained,
        violations_constrained,
        violations_unconstrained,
        ece: crate::calibration::expected_calibration_error(&ece_points, 10),
        runtime: RuntimeStats {
            solver_calls: solved.len() as u64,
            solver_nodes,
            backend_calls: backend.calls(),
            cache_hits: cache.hits(),
            cache_misses: cache.misses(),
            instances: split.test.len() as u64,
        },
    };
    Ok(Some(FoldOutcome { report }))
}

fn ids_position(
    problem: &StructuredProblem,
    decision: &DecisionId,
) -> Result<usize, ExperimentError> {
    problem
        .decision_ids()
        .position(|id| id == decision)
        .ok_or_else(|| ExperimentError::Data(format!("decision {decision} missing from problem")))
}

fn write_train_log(
    config: &ExperimentConfig,
    fold: usize,
    log: &[train::EpochMetrics],
) -> Result<(), ExperimentError> {
    let lines: Vec<String> =
        log.iter().map(|m| serde_json::to_string(m).expect("metrics serialize")).collect();
    write_text(
        &config.output_dir.join("train_log").join(format!("fold_{fold}.jsonl")),
        &(lines.join("\n") + "\n"),
    )
}

/// Run the pipeline through `stage`. Stages before `Evaluate` return no
/// report; `Evaluate` and `Report` return the assembled metrics, with
/// `Report` also writing markdown and SVG renderings.
pub fn run_until(
    config: &ExperimentConfig,
    stage: Stage,
) -> Result<Option<MetricsReport>, ExperimentError> {
    config.validate()?;
    let (dataset, splits) = load_dataset(config)?;
    if dataset.len() == 0 {
        return Err(ExperimentError::Data("dataset is empty".into()));
    }
    let backend = make_backend(config, &dataset);
    let cache = ResponseCache::open(&config.cache_dir)?;
    write_text(
        &config.output_dir.join("resolved_config.json"),
        &serde_json::to_string_pretty(config).expect("config serializes"),
    )?;

    let mut folds = Vec::new();
    for (fold, split) in splits.iter().enumerate() {
        match run_fold(config, &dataset, split, fold, &backend, &cache, stage)? {
            Some(outcome) => folds.push(outcome.report),
            None => continue,
        }
    }
    if stage < Stage::Evaluate {
        return Ok(None);
    }

    let report = MetricsReport::assemble(config.clone(), folds);
    write_text(&config.output_dir.join("report.json"), &report.to_json())?;
    if stage >= Stage::Report {
        write_text(&config.output_dir.join("report.md"), &report.to_markdown())?;
        write_text(&config.output_dir.join("report.svg"), &report.to_svg())?;
    }
    Ok(Some(report))
}

/// Run the full pipeline and return the report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport, ExperimentError> {
    Ok(run_until(config, Stage::Report)?.expect("full run yields a report"))
}

#[cfg(test)]
mod tests;
