//! Python bindings for the conform inference engine.
//!
//! Exposes the problem model and the exact MAP solver to Python. Problems
//! are built from the same JSON documents the Rust side uses; assignments
//! cross the boundary as per-decision label vectors in canonical decision
//! order (see `Problem.decision_keys`).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use conform::calibration::{Calibrator as RsCalibrator, CalibratorKind};
use conform::model::{ProblemSpec, StrategyId, StructuredProblem};
use conform::solver;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Result of a solve, with labels in canonical decision order.
#[pyclass(frozen)]
struct SolveOutcome {
    #[pyo3(get)]
    labels: Vec<u32>,
    #[pyo3(get)]
    objective: f64,
    #[pyo3(get)]
    nodes_explored: u64,
    #[pyo3(get)]
    proven_optimal: bool,
}

#[pymethods]
impl SolveOutcome {
    fn __repr__(&self) -> String {
        format!(
            "SolveOutcome(objective={:.6}, labels={:?}, nodes={}, proven_optimal={})",
            self.objective, self.labels, self.nodes_explored, self.proven_optimal
        )
    }
}

/// An immutable structured problem: decisions, weighted outcomes, and
/// compiled linear constraints.
#[pyclass(frozen)]
struct Problem {
    inner: StructuredProblem,
}

impl Problem {
    fn assignment_for(&self, labels: &[u32]) -> PyResult<conform::model::Assignment> {
        let doc = conform::model::AssignmentDoc { labels: labels.to_vec() };
        doc.to_assignment(&self.inner).map_err(value_err)
    }
}

#[pymethods]
impl Problem {
    /// Load a problem from its JSON document (schema 1).
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: StructuredProblem::from_json(text).map_err(value_err)? })
    }

    /// Build a problem from a spec document: `{"decisions": [...],
    /// "scores": [...], "constraints": [...], "gold": {...}}`. Standard
    /// multiclass and linking constraints are attached automatically.
    #[staticmethod]
    fn build(spec_json: &str) -> PyResult<Self> {
        let spec: ProblemSpec = serde_json::from_str(spec_json).map_err(value_err)?;
        Ok(Self { inner: StructuredProblem::build(spec).map_err(value_err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Export the instance in LP text format.
    fn to_lp(&self) -> String {
        solver::to_lp_string(&self.inner)
    }

    #[getter]
    fn num_decisions(&self) -> usize {
        self.inner.num_decisions()
    }

    #[getter]
    fn num_outcomes(&self) -> usize {
        self.inner.num_outcomes()
    }

    /// Decision identifiers in canonical order, formatted
    /// "task_instance/subproblem/locus".
    fn decision_keys(&self) -> Vec<String> {
        self.inner.decision_ids().map(|d| d.to_string()).collect()
    }

    /// Gold labels in canonical order, when the problem carries them.
    fn gold_labels(&self) -> Option<Vec<u32>> {
        let gold = self.inner.gold_labels()?;
        self.inner.decision_ids().map(|id| gold.get(id).copied()).collect()
    }

    /// Exact MAP inference by branch-and-bound.
    #[pyo3(signature = (max_nodes=1_000_000, time_limit_secs=30.0))]
    fn solve(&self, max_nodes: u64, time_limit_secs: f64) -> PyResult<SolveOutcome> {
        let limits = solver::SolveLimits {
            max_nodes,
            time_limit: std::time::Duration::from_secs_f64(time_limit_secs),
        };
        let result = solver::solve_map(&self.inner, limits).map_err(runtime_err)?;
        Ok(SolveOutcome {
            labels: self.inner.labels_from_assignment(&result.assignment).map_err(runtime_err)?,
            objective: result.objective,
            nodes_explored: result.nodes_explored,
            proven_optimal: result.proven_optimal,
        })
    }

    /// Exhaustive enumeration oracle for small instances.
    fn brute_force(&self) -> PyResult<SolveOutcome> {
        let result = solver::brute_force_map(&self.inner).map_err(runtime_err)?;
        Ok(SolveOutcome {
            labels: self.inner.labels_from_assignment(&result.assignment).map_err(runtime_err)?,
            objective: result.objective,
            nodes_explored: result.nodes_explored,
            proven_optimal: result.proven_optimal,
        })
    }

    /// Unconstrained per-decision argmax baseline.
    fn local_argmax(&self) -> PyResult<SolveOutcome> {
        let assignment = solver::local_argmax(&self.inner);
        let objective = self.inner.objective_value(&assignment).map_err(runtime_err)?;
        Ok(SolveOutcome {
            labels: self.inner.labels_from_assignment(&assignment).map_err(runtime_err)?,
            objective,
            nodes_explored: 0,
            proven_optimal: false,
        })
    }

    /// Objective value of a label vector (canonical decision order).
    fn objective(&self, labels: Vec<u32>) -> PyResult<f64> {
        let assignment = self.assignment_for(&labels)?;
        self.inner.objective_value(&assignment).map_err(value_err)
    }

    /// Number of constraints with `tag` violated by a label vector.
    fn count_violations(&self, labels: Vec<u32>, tag: &str) -> PyResult<usize> {
        let assignment = self.assignment_for(&labels)?;
        self.inner.count_violations(&assignment, tag).map_err(value_err)
    }

    /// Violation counts for every constraint tag on the problem.
    fn violations_by_tag(
        &self,
        labels: Vec<u32>,
    ) -> PyResult<std::collections::BTreeMap<String, usize>> {
        let assignment = self.assignment_for(&labels)?;
        self.inner.violations_by_tag(&assignment).map_err(value_err)
    }

    /// Whether a label vector satisfies every constraint.
    fn is_feasible(&self, labels: Vec<u32>) -> PyResult<bool> {
        let assignment = self.assignment_for(&labels)?;
        self.inner.is_feasible(&assignment).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(decisions={}, outcomes={}, constraints={})",
            self.inner.num_decisions(),
            self.inner.num_outcomes(),
            self.inner.constraints().len()
        )
    }
}

/// An affine+softmax (or identity) calibrator over raw score vectors.
#[pyclass(frozen)]
struct Calibrator {
    inner: RsCalibrator,
}

#[pymethods]
impl Calibrator {
    /// Identity calibrator for (strategy, subproblem).
    #[staticmethod]
    fn identity(strategy: &str, subproblem: &str) -> Self {
        Self { inner: RsCalibrator::identity(StrategyId::new(strategy), subproblem) }
    }

    /// Load one calibrator from its JSON form.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: serde_json::from_str(text).map_err(value_err)? })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("calibrator serializes")
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner.kind {
            CalibratorKind::Identity => "identity",
            CalibratorKind::AffineSoftmax => "affine_softmax",
        }
    }

    /// Calibrated scores for one raw score vector.
    fn calibrate(&self, scores: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.calibrate(&scores).map_err(value_err)
    }
}

/// Parse a 0-100 verbalized confidence value from a generation.
#[pyfunction]
fn parse_confidence(text: &str) -> Option<f64> {
    conform::scoring::parse::parse_confidence(text)
}

/// Match a free-text generation to one of the labels, if unambiguous.
#[pyfunction]
fn match_label(text: &str, labels: Vec<String>) -> Option<usize> {
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    conform::scoring::parse::match_label(text, &refs)
}

#[pymodule]
fn conform_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<SolveOutcome>()?;
    m.add_class::<Calibrator>()?;
    m.add_function(wrap_pyfunction!(parse_confidence, m)?)?;
    m.add_function(wrap_pyfunction!(match_label, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
