//! Metrics report assembly and emission (JSON, markdown, SVG).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::ExperimentError;
use crate::util::{mean, stdev};

pub const REPORT_SCHEMA: u32 = 1;

/// Micro/macro F1 of one subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubproblemMetrics {
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// Deterministic run counters; wall-clock time is deliberately excluded so
/// identical runs produce byte-identical reports (timings go to the run
/// log instead).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub solver_calls: u64,
    pub solver_nodes: u64,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub instances: u64,
}

/// Metrics of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    /// Per-subproblem metrics with constrained inference.
    pub constrained: BTreeMap<String, SubproblemMetrics>,
    /// Per-subproblem metrics of the unconstrained per-decision argmax.
    pub unconstrained: BTreeMap<String, SubproblemMetrics>,
    pub violations_constrained: BTreeMap<String, usize>,
    pub violations_unconstrained: BTreeMap<String, usize>,
    /// Expected calibration error of the scores used for inference.
    pub ece: f64,
    pub runtime: RuntimeStats,
}

/// Mean and (for multi-fold runs) sample standard deviation of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetric {
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stdev: Option<f64>,
}

fn aggregate(values: &[f64]) -> AggregateMetric {
    AggregateMetric {
        mean: mean(values),
        stdev: (values.len() > 1).then(|| stdev(values)),
    }
}

/// The full experiment report, with the resolved config embedded for
/// provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: u32,
    pub config: ExperimentConfig,
    pub folds: Vec<FoldReport>,
    /// Aggregates keyed "condition/subproblem/metric".
    pub summary: BTreeMap<String, AggregateMetric>,
    pub violations_constrained: BTreeMap<String, usize>,
    pub violations_unconstrained: BTreeMap<String, usize>,
}

impl MetricsReport {
    pub fn assemble(config: ExperimentConfig, folds: Vec<FoldReport>) -> Self {
        let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut violations_constrained: BTreeMap<String, usize> = BTreeMap::new();
        let mut violations_unconstrained: BTreeMap<String, usize> = BTreeMap::new();
        for fold in &folds {
            for (condition, metrics) in
                [("constrained", &fold.constrained), ("unconstrained", &fold.unconstrained)]
            {
                for (sub, m) in metrics {
                    series
                        .entry(format!("{condition}/{sub}/micro_f1"))
                        .or_default()
                        .push(m.micro_f1);
                    series
                        .entry(format!("{condition}/{sub}/macro_f1"))
                        .or_default()
                        .push(m.macro_f1);
                }
            }
            series.entry("ece".into()).or_default().push(fold.ece);
            for (tag, count) in &fold.violations_constrained {
                *violations_constrained.entry(tag.clone()).or_insert(0) += count;
            }
            for (tag, count) in &fold.violations_unconstrained {
                *violations_unconstrained.entry(tag.clone()).or_insert(0) += count;
            }
        }
        let summary = series.into_iter().map(|(k, v)| (k, aggregate(&v))).collect();
        Self {
            schema: REPORT_SCHEMA,
            config,
            folds,
            summary,
            violations_constrained,
            violations_unconstrained,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Data(e.to_string()))
    }

    fn subproblems(&self) -> Vec<String> {
        let mut subs: Vec<String> = self
            .folds
            .iter()
            .flat_map(|f| f.constrained.keys().cloned())
            .collect();
        subs.sort();
        subs.dedup();
        subs
    }

    fn violation_tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = self
            .violations_constrained
            .keys()
            .chain(self.violations_unconstrained.keys())
            .cloned()
            .collect();
        tags.sort();
        tags.dedup();
        tags
    }

    fn fmt_metric(&self, condition: &str, sub: &str, metric: &str) -> String {
        match self.summary.get(&format!("{condition}/{sub}/{metric}")) {
            Some(AggregateMetric { mean, stdev: Some(sd) }) => {
                format!("{mean:.3} ± {sd:.3}")
            }
            Some(AggregateMetric { mean, stdev: None }) => format!("{mean:.3}"),
            None => "n/a".into(),
        }
    }

    /// A markdown table shaped like the per-method result tables: one row
    /// for the unconstrained method, one "+ constr" row, micro/macro F1
    /// per subproblem, violations per tag.
    pub fn to_markdown(&self) -> String {
        use std::fmt::Write;
        let subs = self.subproblems();
        let tags = self.violation_tags();
        let method = self.config.strategies.join("+");

        let mut out = String::new();
        writeln!(out, "# Experiment report").unwrap();
        writeln!(out).unwrap();
        writeln!(
            out,
            "Task: {:?} | dataset: {} | folds: {} | shots: {} | calibration: {:?}",
            self.config.task,
            self.config.dataset.display(),
            self.config.folds,
            self.config.shots,
            self.config.calibration,
        )
        .unwrap();
        writeln!(out).unwrap();
        writeln!(
            out,
            "Macro F1 uses the zero-support convention: classes absent from both gold and \
             predictions are excluded; classes in gold but never predicted contribute 0."
        )
        .unwrap();
        writeln!(out).unwrap();

        let mut header = String::from("| Method | Shots |");
        let mut rule = String::from("|---|---|");
        for sub in &subs {
            header.push_str(&format!(" Micro F1 ({sub}) | Macro F1 ({sub}) |"));
            rule.push_str("---|---|");
        }
        for tag in &tags {
            header.push_str(&format!(" Viol. {tag} |"));
            rule.push_str("---|");
        }
        writeln!(out, "{header}").unwrap();
        writeln!(out, "{rule}").unwrap();

        let mut base_row = format!("| {method} | {} |", self.config.shots);
        for sub in &subs {
            base_row.push_str(&format!(
                " {} | {} |",
                self.fmt_metric("unconstrained", sub, "micro_f1"),
                self.fmt_metric("unconstrained", sub, "macro_f1"),
            ));
        }
        for tag in &tags {
            base_row.push_str(&format!(
                " {} |",
                self.violations_unconstrained.get(tag).copied().unwrap_or(0)
            ));
        }
        writeln!(out, "{base_row}").unwrap();

        let mut constr_row = String::from("| &nbsp;&nbsp;+ constr | |");
        for sub in &subs {
            constr_row.push_str(&format!(
                " {} | {} |",
                self.fmt_metric("constrained", sub, "micro_f1"),
                self.fmt_metric("constrained", sub, "macro_f1"),
            ));
        }
        for tag in &tags {
            constr_row.push_str(&format!(
                " {} |",
                self.violations_constrained.get(tag).copied().unwrap_or(0)
            ));
        }
        writeln!(out, "{constr_row}").unwrap();
        out
    }

    /// Strip plot of per-fold micro F1 values per condition/subproblem.
    pub fn to_svg(&self) -> String {
        use std::fmt::Write;
        let subs = self.subproblems();
        let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
        for sub in &subs {
            for condition in ["unconstrained", "constrained"] {
                let values: Vec<f64> = self
                    .folds
                    .iter()
                    .filter_map(|f| {
                        let table = if condition == "constrained" {
                            &f.constrained
                        } else {
                            &f.unconstrained
                        };
                        table.get(sub).map(|m| m.micro_f1)
                    })
                    .collect();
                groups.push((format!("{sub}\n{condition}"), values));
            }
        }

        let width = 120 + groups.len() * 110;
        let height = 360;
        let plot_top = 30.0;
        let plot_bottom = 290.0;
        let y = |v: f64| plot_bottom - v.clamp(0.0, 1.0) * (plot_bottom - plot_top);

        let mut svg = String::new();
        writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
        )
        .unwrap();
        writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(
            svg,
            r#"<text x="10" y="18">per-fold micro F1 ({} folds)</text>"#,
            self.folds.len()
        )
        .unwrap();
        for grid in [0.0f64, 0.25, 0.5, 0.75, 1.0] {
            let gy = y(grid);
            writeln!(
                svg,
                r##"<line x1="60" y1="{gy:.1}" x2="{}" y2="{gy:.1}" stroke="#ddd"/>"##,
                width - 20
            )
            .unwrap();
            writeln!(svg, r#"<text x="20" y="{:.1}">{grid:.2}</text>"#, gy + 4.0).unwrap();
        }
        for (g, (label, values)) in groups.iter().enumerate() {
            let cx = 120.0 + g as f64 * 110.0;
            for (i, &v) in values.iter().enumerate() {
                let jitter = (i as f64 - (values.len() as f64 - 1.0) / 2.0) * 6.0;
                writeln!(
                    svg,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="steelblue" fill-opacity="0.7"/>"#,
                    cx + jitter,
                    y(v)
                )
                .unwrap();
            }
            let m = mean(values);
            writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="crimson" stroke-width="2"/>"#,
                cx - 25.0,
                y(m),
                cx + 25.0,
                y(m)
            )
            .unwrap();
            for (li, line) in label.split('\n').enumerate() {
                writeln!(
                    svg,
                    r#"<text x="{:.1}" y="{}" text-anchor="middle">{line}</text>"#,
                    cx,
                    310 + li * 14
                )
                .unwrap();
            }
        }
        writeln!(svg, "</svg>").unwrap();
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendMode;
    use crate::experiments::config::{BackendConfig, SolverConfig, TaskKind};
    use crate::experiments::CalibrationMode;

    fn config() -> ExperimentConfig {
        ExperimentConfig {
            schema: 1,
            task: TaskKind::Coref,
            dataset: "d.jsonl".into(),
            backend: BackendConfig {
                name: "mock".into(),
                mode: BackendMode::WhiteBox,
                endpoint: "mock".into(),
                model_id: "m".into(),
                mock_seed: 0,
                concurrency: 8,
            },
            strategies: vec!["true_false".into()],
            shots: 5,
            constraints: Default::default(),
            calibration: CalibrationMode::None,
            train: Default::default(),
            seed: 7,
            folds: 2,
            output_dir: "out".into(),
            cache_dir: "cache".into(),
            scoring: Default::default(),
            solver: SolverConfig::default(),
        }
    }

    fn fold(fold: usize, micro: f64) -> FoldReport {
        let metrics = SubproblemMetrics { micro_f1: micro, macro_f1: micro - 0.05 };
        FoldReport {
            fold,
            constrained: BTreeMap::from([("coref_pair".to_string(), metrics)]),
            unconstrained: BTreeMap::from([(
                "coref_pair".to_string(),
                SubproblemMetrics { micro_f1: micro - 0.1, macro_f1: micro - 0.15 },
            )]),
            violations_constrained: BTreeMap::from([("transitivity".to_string(), 0)]),
            violations_unconstrained: BTreeMap::from([("transitivity".to_string(), 3)]),
            ece: 0.1,
            runtime: RuntimeStats::default(),
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let report = MetricsReport::assemble(config(), vec![fold(0, 0.8), fold(1, 0.9)]);
        let text = report.to_json();
        let back = MetricsReport::from_json(&text).unwrap();
        assert_eq!(report, back);
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn summary_aggregates_mean_and_stdev() {
        let report = MetricsReport::assemble(config(), vec![fold(0, 0.8), fold(1, 0.9)]);
        let m = report.summary["constrained/coref_pair/micro_f1"];
        assert!((m.mean - 0.85).abs() < 1e-12);
        assert!(m.stdev.is_some());
        // Violation counts accumulate across folds.
        assert_eq!(report.violations_unconstrained["transitivity"], 6);
    }

    #[test]
    fn single_fold_omits_stdev() {
        let report = MetricsReport::assemble(config(), vec![fold(0, 0.8)]);
        let m = report.summary["constrained/coref_pair/micro_f1"];
        assert!(m.stdev.is_none());
        // And the serialized form drops the field entirely.
        assert!(!report.to_json().contains("stdev"));
    }

    #[test]
    fn markdown_has_constr_subrow_and_violation_columns() {
        let report = MetricsReport::assemble(config(), vec![fold(0, 0.8), fold(1, 0.9)]);
        let md = report.to_markdown();
        assert!(md.contains("+ constr"));
        assert!(md.contains("Viol. transitivity"));
        assert!(md.contains("true_false"));
        assert!(md.contains("±"));
    }

    #[test]
    fn svg_renders_points_per_fold() {
        let report = MetricsReport::assemble(config(), vec![fold(0, 0.8), fold(1, 0.9)]);
        let svg = report.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.matches("<circle").count() >= 4);
        assert!(svg.ends_with("</svg>\n"));
    }
}
