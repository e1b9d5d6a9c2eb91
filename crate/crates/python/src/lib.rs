//! Python bindings. Matrices cross the boundary as lists of rows, so NumPy
//! arrays are accepted on input and `numpy.array(...)` recovers them on output.

use std::path::PathBuf;

use matest::baselines::{fista_covariance, pfbs_covariance, proxgrad_precision, spg_precision, tosa_covariance, BaselineConfig};
use matest::checks::{run_suite, Suite};
use matest::generators::{self, StructureSpec};
use matest::lbo::{lbo_solve, train_schedule, StageParams, TrainConfig, TrainSettings};
use matest::metrics::evaluate;
use matest::solvers::{admm_covariance, admm_precision, default_init, ladmm_unified, RunTrace, SolverConfig};
use matest::{prox, ProblemKind, SplitProblem, SymMat};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(matest_py, MatestError, PyException);

fn err(e: matest::Error) -> PyErr {
    MatestError::new_err(e.to_string())
}

fn to_sym(rows: Vec<Vec<f64>>) -> PyResult<SymMat> {
    let p = rows.len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    SymMat::from_row_major(p, &flat).map_err(err)
}

fn parse_kind(kind: &str) -> PyResult<ProblemKind> {
    match kind {
        "covariance" => Ok(ProblemKind::Covariance),
        "precision" => Ok(ProblemKind::Precision),
        other => Err(PyValueError::new_err(format!("kind must be 'covariance' or 'precision', got '{other}'"))),
    }
}

/// Synthetic instance: ground truth and the sample covariance of `n` draws.
#[pyclass(module = "matest_py", frozen)]
struct Instance {
    inner: generators::Instance,
}

#[pymethods]
impl Instance {
    /// `structure` is one of toeplitz, factor, sparse, block, banded, grid;
    /// keyword arguments set its parameters (e.g. `varrho=0.5`, `width=2`).
    #[staticmethod]
    #[pyo3(signature = (structure, p, n=500, truth_seed=0, samples_seed=1, **params))]
    fn generate(
        py: Python<'_>,
        structure: &str,
        p: usize,
        n: usize,
        truth_seed: u64,
        samples_seed: u64,
        params: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let fields = PyDict::new(py);
        if let Some(params) = params {
            fields.update(params.as_mapping())?;
        }
        fields.set_item("type", structure)?;
        let json: String = py.import("json")?.call_method1("dumps", (fields,))?.extract()?;
        let spec: StructureSpec = serde_json::from_str(&json).map_err(|e| PyValueError::new_err(format!("invalid structure: {e}")))?;
        let inner = generators::Instance::generate(&spec.at_dim(p), p, n, truth_seed, samples_seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: generators::Instance::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }

    #[getter]
    fn structure(&self) -> String {
        format!("{} {}", self.inner.structure.name(), self.inner.structure.param_label())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn truth(&self) -> Vec<Vec<f64>> {
        self.inner.truth.to_rows()
    }

    #[getter]
    fn sample_cov(&self) -> Vec<Vec<f64>> {
        self.inner.sample_cov.to_rows()
    }

    /// Estimation error and support recovery of `estimate` against the truth.
    fn evaluate(&self, estimate: Vec<Vec<f64>>) -> PyResult<(f64, f64, f64, f64)> {
        let est = to_sym(estimate)?;
        let trace = RunTrace { rows: Vec::new(), status: matest::solvers::Status::Converged, iters: 0 };
        let r = evaluate(&est, &self.inner, &trace).map_err(err)?;
        Ok((r.frob_err, r.nuclear, r.support_precision, r.support_recall))
    }

    fn __repr__(&self) -> String {
        format!("Instance({}, p={}, n={}, kind={})", self.structure(), self.dim(), self.inner.n, self.kind())
    }
}

/// Stage parameters of a learned schedule.
#[pyclass(module = "matest_py", frozen, from_py_object)]
#[derive(Clone)]
struct Schedule {
    inner: StageParams,
}

#[pymethods]
impl Schedule {
    /// Stages reproducing linearized ADMM with `(rho, phi1, phi2)`.
    #[staticmethod]
    #[pyo3(signature = (k, rho=1.0, phi1=1.5, phi2=1.5))]
    fn canonical(k: usize, rho: f64, phi1: f64, phi2: f64) -> Self {
        let cfg = SolverConfig { rho, phi1, phi2, ..SolverConfig::default() };
        Self { inner: StageParams::canonical(k, &cfg) }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: StageParams::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: StageParams::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.k_stages
    }
}

/// Outcome of one solver run.
#[pyclass(module = "matest_py", frozen, get_all)]
struct SolveResult {
    estimate: Vec<Vec<f64>>,
    status: String,
    iters: usize,
    final_gap: f64,
    seconds: f64,
    /// `(iter, f, d, gap, primal_res, dual_res)` per recorded iteration.
    trace: Vec<(usize, f64, f64, f64, f64, f64)>,
}

impl SolveResult {
    fn new(est: SymMat, tr: RunTrace) -> Self {
        Self {
            estimate: est.to_rows(),
            status: tr.status.as_str().to_string(),
            iters: tr.iters,
            final_gap: tr.final_gap(),
            seconds: tr.seconds(),
            trace: tr.rows.iter().map(|r| (r.iter, r.f, r.d, r.gap, r.primal_res, r.dual_res)).collect(),
        }
    }
}

#[pymethods]
impl SolveResult {
    fn __repr__(&self) -> String {
        format!("SolveResult(status={}, iters={}, final_gap={:.3e})", self.status, self.iters, self.final_gap)
    }
}

/// Penalized estimation problem built from a sample covariance.
#[pyclass(module = "matest_py", frozen, from_py_object)]
#[derive(Clone)]
struct Problem {
    inner: SplitProblem,
}

#[pymethods]
impl Problem {
    /// `lam` and `eps` default to `2 sqrt(log p / n)` and `1e-4`.
    #[new]
    #[pyo3(signature = (kind, s, n, lam=None, eps=None))]
    fn new(kind: &str, s: Vec<Vec<f64>>, n: usize, lam: Option<f64>, eps: Option<f64>) -> PyResult<Self> {
        let base = SplitProblem::with_defaults(parse_kind(kind)?, to_sym(s)?, n).map_err(err)?;
        let inner = SplitProblem::new(base.kind, base.s, lam.unwrap_or(base.lambda), eps.unwrap_or(base.eps), n).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_instance(instance: &Instance) -> PyResult<Self> {
        let inst = &instance.inner;
        Ok(Self { inner: SplitProblem::with_defaults(inst.kind, inst.sample_cov.clone(), inst.n).map_err(err)? })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn primal_objective(&self, m: Vec<Vec<f64>>) -> PyResult<f64> {
        self.inner.primal_objective(&to_sym(m)?).map_err(err)
    }

    /// Runs `solver` (admm, ladmm, lbo, tosa, pfbs, fista, proxgrad, spg).
    /// ADMM-type solvers return their sparse iterate.
    #[pyo3(signature = (solver="ladmm", rho=1.0, phi1=1.5, phi2=1.5, max_iter=5000, tol_gap=1e-7, tol_primal=1e-8, tol_dual=1e-8, step=1.0, schedule=None))]
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        py: Python<'_>,
        solver: &str,
        rho: f64,
        phi1: f64,
        phi2: f64,
        max_iter: usize,
        tol_gap: f64,
        tol_primal: f64,
        tol_dual: f64,
        step: f64,
        schedule: Option<Schedule>,
    ) -> PyResult<SolveResult> {
        let pb = &self.inner;
        let cfg = SolverConfig { rho, phi1, phi2, max_iter, tol_gap, tol_primal, tol_dual, ..SolverConfig::default() };
        let bcfg = BaselineConfig { step, max_iter, tol_gap, ..BaselineConfig::default() };
        let cov = pb.kind == ProblemKind::Covariance;
        let wrong_kind = || PyValueError::new_err(format!("solver {solver} does not handle {} problems", pb.kind.as_str()));
        let out = py.detach(|| -> PyResult<(SymMat, RunTrace)> {
            let (est, tr) = match solver {
                "admm" => {
                    let (st, tr) =
                        if cov { admm_covariance(pb, &cfg, default_init(pb)) } else { admm_precision(pb, &cfg, default_init(pb)) }
                            .map_err(err)?;
                    (st.y, tr)
                }
                "ladmm" => {
                    let (st, tr) = ladmm_unified(pb, &cfg, default_init(pb)).map_err(err)?;
                    (st.y, tr)
                }
                "lbo" => {
                    let sp = schedule.map_or_else(|| StageParams::canonical_weighted(10, rho, phi1), |s| s.inner);
                    let (st, tr) = lbo_solve(pb, &sp, default_init(pb), &cfg).map_err(err)?;
                    (st.y, tr)
                }
                "tosa" if cov => tosa_covariance(pb, &bcfg, &pb.s).map_err(err)?,
                "pfbs" if cov => pfbs_covariance(pb, &bcfg, &pb.s).map_err(err)?,
                "fista" if cov => fista_covariance(pb, &bcfg, &pb.s).map_err(err)?,
                "proxgrad" if !cov => proxgrad_precision(pb, &bcfg, &default_init(pb).x).map_err(err)?,
                "spg" if !cov => spg_precision(pb, &bcfg, &default_init(pb).x).map_err(err)?,
                "tosa" | "pfbs" | "fista" | "proxgrad" | "spg" => return Err(wrong_kind()),
                other => return Err(PyValueError::new_err(format!("unknown solver '{other}'"))),
            };
            Ok((est, tr))
        })?;
        Ok(SolveResult::new(out.0, out.1))
    }

    fn __repr__(&self) -> String {
        format!("Problem(kind={}, p={}, lam={:.4e})", self.kind(), self.dim(), self.inner.lambda)
    }
}

/// Trains a `stages`-stage schedule on `problems`; returns the schedule with
/// its initial and best training loss.
#[pyfunction]
#[pyo3(signature = (problems, stages=10, epochs=50, lr=0.5, decay=None))]
fn train(
    py: Python<'_>,
    problems: Vec<Problem>,
    stages: usize,
    epochs: usize,
    lr: f64,
    decay: Option<f64>,
) -> PyResult<(Schedule, f64, f64)> {
    let settings = TrainSettings { k_stages: stages, epochs, lr, schedule_decay: decay, ..TrainSettings::default() };
    let cfg = TrainConfig { instance_batch: problems.into_iter().map(|p| p.inner).collect(), settings, init: None };
    let out = py.detach(|| train_schedule(&cfg)).map_err(err)?;
    Ok((Schedule { inner: out.params }, out.initial_loss, out.best_loss))
}

/// `argmin_{X >= eps I} 1/2 ||X - S||^2 + 1/(2t) ||X - M||^2`
#[pyfunction]
fn prox_cov_f(m: Vec<Vec<f64>>, s: Vec<Vec<f64>>, t: f64, eps: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(prox::prox_cov_f(&to_sym(m)?, &to_sym(s)?, t, eps).map_err(err)?.to_rows())
}

/// `argmin_{X >= eps I} tr(S X) - log det X + 1/(2t) ||X - M||^2`
#[pyfunction]
fn prox_logdet_g(m: Vec<Vec<f64>>, s: Vec<Vec<f64>>, t: f64, eps: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(prox::prox_logdet_g(&to_sym(m)?, &to_sym(s)?, t, eps).map_err(err)?.to_rows())
}

#[pyfunction]
fn soft_threshold_offdiag(b: Vec<Vec<f64>>, tau: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(prox::soft_threshold_offdiag(&to_sym(b)?, tau).map_err(err)?.to_rows())
}

/// Runs one theory check suite; returns `(passed, detail)`.
#[pyfunction]
#[pyo3(signature = (suite, seed=0))]
fn run_check(py: Python<'_>, suite: &str, seed: u64) -> PyResult<(bool, String)> {
    let suite: Suite = suite.parse().map_err(|e: matest::Error| PyValueError::new_err(e.to_string()))?;
    let r = py.detach(|| run_suite(suite, seed)).map_err(err)?;
    Ok((r.passed, r.detail))
}

#[pymodule]
fn matest_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MatestError", m.py().get_type::<MatestError>())?;
    m.add_class::<Instance>()?;
    m.add_class::<Problem>()?;
    m.add_class::<Schedule>()?;
    m.add_class::<SolveResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(prox_cov_f, m)?)?;
    m.add_function(wrap_pyfunction!(prox_logdet_g, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold_offdiag, m)?)?;
    m.add_function(wrap_pyfunction!(run_check, m)?)?;
    Ok(())
}
