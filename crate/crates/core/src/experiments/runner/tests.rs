use super::*;
use crate::backend::BackendMode;
use crate::experiments::config::{BackendConfig, ConstraintsConfig, SolverConfig};

fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn mock_config(task: TaskKind, dir: &Path) -> ExperimentConfig {
    let dataset = match task {
        TaskKind::Morality => fixture("morality_fixture.jsonl"),
        TaskKind::Coref => fixture("coref_fixture.jsonl"),
    };
    ExperimentConfig {
        schema: 1,
        task,
        dataset,
        backend: BackendConfig {
            name: "mock".into(),
            mode: BackendMode::WhiteBox,
            endpoint: "mock".into(),
            model_id: "seeded".into(),
            mock_seed: 17,
            concurrency: 4,
        },
        strategies: vec!["true_false".into()],
        shots: 0,
        constraints: ConstraintsConfig::default(),
        calibration: CalibrationMode::None,
        train: Default::default(),
        seed: 42,
        folds: 2,
        output_dir: dir.join("out"),
        cache_dir: dir.join("cache"),
        scoring: Default::default(),
        solver: SolverConfig::default(),
    }
}

#[test]
fn coref_mock_run_is_deterministic_with_zero_constrained_violations() {
    let dir = tempfile::tempdir().unwrap();
    let config = mock_config(TaskKind::Coref, dir.path());
    let report = run_experiment(&config).unwrap();
    assert_eq!(report.folds.len(), 2);
    // Constrained inference never violates transitivity.
    assert!(report.violations_constrained.values().all(|&v| v == 0));
    // Artifacts exist.
    assert!(config.output_dir.join("report.json").exists());
    assert!(config.output_dir.join("report.md").exists());
    assert!(config.output_dir.join("report.svg").exists());
    assert!(config.output_dir.join("scores/fold_0/true_false.jsonl").exists());
    assert!(config.output_dir.join("solutions/fold_0.jsonl").exists());
}

#[test]
fn morality_mock_run_has_violating_baseline_and_clean_constrained() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = mock_config(TaskKind::Morality, dir.path());
    config.folds = 2;
    let report = run_experiment(&config).unwrap();
    assert!(report.violations_constrained.values().all(|&v| v == 0));
    // Noisy mock scores make independent argmaxes collide with C1/C2.
    let total_unconstrained: usize = report.violations_unconstrained.values().sum();
    assert!(total_unconstrained > 0, "expected baseline violations, got none");
    assert!(report.violations_unconstrained.contains_key("C1"));
}

#[test]
fn identical_runs_produce_byte_identical_reports() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let mut config_a = mock_config(TaskKind::Coref, dir_a.path());
    let mut config_b = mock_config(TaskKind::Coref, dir_b.path());
    // Same seeds, separate output and cache directories.
    run_experiment(&config_a).unwrap();
    run_experiment(&config_b).unwrap();
    let report_a = std::fs::read_to_string(config_a.output_dir.join("report.json")).unwrap();
    let report_b = std::fs::read_to_string(config_b.output_dir.join("report.json")).unwrap();
    // The embedded config carries the differing paths; compare with them
    // normalized.
    let canon = |text: &str, dir: &Path| text.replace(&dir.display().to_string(), "<dir>");
    assert_eq!(canon(&report_a, dir_a.path()), canon(&report_b, dir_b.path()));
    // A different mock seed changes the report.
    config_b.backend.mock_seed = 18;
    config_b.output_dir = dir_b.path().join("out2");
    config_b.cache_dir = dir_b.path().join("cache2");
    run_experiment(&config_b).unwrap();
    let report_c = std::fs::read_to_string(config_b.output_dir.join("report.json")).unwrap();
    assert_ne!(canon(&report_a, dir_a.path()), canon(&report_c, dir_b.path()));
    config_a.backend.mock_seed = 17;
}

#[test]
fn warm_cache_rerun_issues_no_backend_traffic() {
    let dir = tempfile::tempdir().unwrap();
    let config = mock_config(TaskKind::Coref, dir.path());
    let first = run_experiment(&config).unwrap();
    let cold_calls = first.folds.last().unwrap().runtime.backend_calls;
    assert!(cold_calls > 0);

    // Same cache dir, fresh output dir: every request is a cache hit.
    let mut rerun = config.clone();
    rerun.output_dir = dir.path().join("out_rerun");
    let second = run_experiment(&rerun).unwrap();
    let warm_calls = second.folds.last().unwrap().runtime.backend_calls;
    assert_eq!(warm_calls, 0, "warm rerun must not touch the backend");

    // And the reports agree apart from runtime counters.
    for (a, b) in first.folds.iter().zip(&second.folds) {
        assert_eq!(a.constrained, b.constrained);
        assert_eq!(a.unconstrained, b.unconstrained);
        assert_eq!(a.violations_constrained, b.violations_constrained);
        assert_eq!(a.violations_unconstrained, b.violations_unconstrained);
    }
}

#[test]
fn stage_cutoffs_write_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = mock_config(TaskKind::Coref, dir.path());
    let report = run_until(&config, Stage::Score).unwrap();
    assert!(report.is_none());
    assert!(config.output_dir.join("scores/fold_0/true_false.jsonl").exists());
    assert!(!config.output_dir.join("solutions/fold_0.jsonl").exists());
    assert!(!config.output_dir.join("report.json").exists());

    let report = run_until(&config, Stage::Infer).unwrap();
    assert!(report.is_none());
    assert!(config.output_dir.join("solutions/fold_0.jsonl").exists());
    assert!(!config.output_dir.join("report.json").exists());

    let report = run_until(&config, Stage::Evaluate).unwrap();
    assert!(report.is_some());
    assert!(config.output_dir.join("report.json").exists());
    assert!(!config.output_dir.join("report.md").exists());
}

#[test]
fn local_calibration_runs_end_to_end_on_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = mock_config(TaskKind::Coref, dir.path());
    config.calibration = CalibrationMode::Local;
    config.train.epochs = 10;
    let report = run_experiment(&config).unwrap();
    assert!(config.output_dir.join("calibrators/fold_0.json").exists());
    assert!(config.output_dir.join("train_log/fold_0.jsonl").exists());
    assert!(report.violations_constrained.values().all(|&v| v == 0));
}

#[test]
fn morality_strategies_expand_to_context_variants() {
    let dir = tempfile::tempdir().unwrap();
    let config = mock_config(TaskKind::Morality, dir.path());
    let (dataset, _) = load_dataset(&config).unwrap();
    let variants = strategy_variants(&config, &dataset);
    assert_eq!(variants.len(), 2);
    let coref_config = mock_config(TaskKind::Coref, dir.path());
    let (coref_dataset, _) = load_dataset(&coref_config).unwrap();
    assert_eq!(strategy_variants(&coref_config, &coref_dataset).len(), 1);
}

#[test]
fn gold_assignments_of_fixtures_are_feasible() {
    // Gold structures satisfy the full task constraint sets.
    for task in [TaskKind::Morality, TaskKind::Coref] {
        let dir = tempfile::tempdir().unwrap();
        let config = mock_config(task, dir.path());
        let (dataset, _) = load_dataset(&config).unwrap();
        for idx in 0..dataset.len() {
            let tables = uniform_tables(&config, &dataset, idx);
            let problem = build_instance_problem(&config, &dataset, idx, &tables).unwrap();
            let gold = problem.gold_assignment().expect("fixtures carry gold");
            assert!(problem.is_feasible(&gold).unwrap(), "infeasible gold in instance {idx}");
        }
    }
}

/// Uniform score tables covering every decision of an instance.
fn uniform_tables(
    config: &ExperimentConfig,
    dataset: &Dataset,
    idx: usize,
) -> Vec<ScoreTable> {
    let strategy = StrategyId::new("uniform");
    let decisions = match dataset {
        Dataset::Morality(instances) => morality::decision_specs(&instances[idx]),
        Dataset::Coref(docs) => {
            let options = CorefOptions { max_pair_distance: config.constraints.max_pair_distance };
            coref::candidate_pairs(&docs[idx], options)
                .into_iter()
                .map(|(i, j)| crate::model::DecisionSpec {
                    id: coref::pair_decision_id(&docs[idx], i, j),
                    num_labels: 2,
                })
                .collect()
        }
    };
    decisions
        .into_iter()
        .map(|d| ScoreTable {
            decision: d.id,
            strategy: strategy.clone(),
            scores: vec![1.0 / d.num_labels as f64; d.num_labels as usize],
            raw: Default::default(),
        })
        .collect()
}
