use std::path::PathBuf;

use etd_core::bench::{self, ExperimentConfig};
use etd_core::{
    DenseMatrix, EtdCoefficients, EtdError, EtdStepper, MatVec, ModelProblem, ProblemKind, SchemeId, State,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(etd_py, BlowUpError, PyRuntimeError);

fn to_py(e: EtdError) -> PyErr {
    if e.is_blow_up() {
        BlowUpError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn matrix_from_rows(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).map_err(to_py)
}

/// CHE or MCE model problem on a uniform grid.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: ModelProblem,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (kind, n, length = 10.0, v = 1.0))]
    fn new(kind: &str, n: usize, length: f64, v: f64) -> PyResult<Self> {
        Ok(Self {
            inner: etd_core::build_problem(kind, n, length, v).map_err(to_py)?,
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.grid().n_nodes()
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.inner.grid().spacing()
    }

    fn positions(&self) -> Vec<f64> {
        let g = self.inner.grid();
        (1..=g.n_nodes()).map(|j| g.position(j)).collect()
    }

    fn excitability(&self) -> Vec<f64> {
        self.inner.q_values().to_vec()
    }

    fn stable_stepsize(&self) -> f64 {
        self.inner.stable_stepsize()
    }

    fn preset_aux_stepsize(&self) -> f64 {
        self.inner.preset_aux_stepsize()
    }

    fn initial_condition(&self) -> Vec<f64> {
        etd_core::initial_condition(self.inner.grid())
    }

    fn linear_apply(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.linear_apply(&u).map_err(to_py)
    }

    fn nonlinear_eval(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.nonlinear_eval(&u).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(kind='{}', n={}, length={}, v={})",
            self.inner.kind(),
            self.inner.grid().n_nodes(),
            self.inner.grid().domain_length(),
            self.inner.velocity()
        )
    }
}

/// Coefficient bundle `Q, M1, M2` (plus half-step matrices and `M3` for order ≥ 3).
#[pyclass(name = "Coefficients", frozen)]
struct PyCoefficients {
    inner: EtdCoefficients,
}

#[pymethods]
impl PyCoefficients {
    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau()
    }

    #[getter]
    fn order(&self) -> u8 {
        self.inner.order()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn aux_stepsize(&self) -> f64 {
        self.inner.aux_stepsize()
    }

    #[getter]
    fn build_seconds(&self) -> f64 {
        self.inner.build_seconds()
    }

    fn names(&self) -> Vec<&'static str> {
        self.inner.matrices().into_iter().map(|(n, _)| n).collect()
    }

    /// Rows of the named matrix (`Q`, `Q_half`, `M1`, `M1_half`, `M2`, `M3`).
    fn matrix(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .matrices()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, m)| m.to_rows())
            .ok_or_else(|| PyValueError::new_err(format!("no matrix named '{name}'")))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        etd_core::cache::write_coefficients(&path, &self.inner).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: etd_core::cache::read_coefficients(&path).map_err(to_py)?,
        })
    }

    /// Frobenius residuals of the identities checked by `residuals`, keyed by name.
    fn residuals(&self, problem: &PyProblem) -> Vec<(&'static str, f64)> {
        let r = etd_core::residuals(&problem.inner, &self.inner);
        let mut out = vec![("m1", r.m1), ("m2", r.m2)];
        out.extend(r.m3.map(|v| ("m3", v)));
        out.extend(r.semigroup.map(|v| ("semigroup", v)));
        out
    }
}

/// Builds coefficients for a model problem or an explicit linear matrix.
#[pyfunction]
#[pyo3(signature = (problem, tau, tau1 = None, order = 4, parallel = false))]
fn build_coefficients(
    py: Python<'_>,
    problem: &PyProblem,
    tau: f64,
    tau1: Option<f64>,
    order: u8,
    parallel: bool,
) -> PyResult<PyCoefficients> {
    let tau1 = tau1.unwrap_or_else(|| problem.inner.preset_aux_stepsize());
    let opts = etd_core::BuildOptions {
        parallel,
        stability_limit: None,
    };
    let sys = &problem.inner;
    let inner = py
        .detach(|| etd_core::build_coefficients(sys, tau, tau1, order, opts))
        .map_err(to_py)?;
    Ok(PyCoefficients { inner })
}

/// Coefficients for `u' = L u` with `L` given as a list of rows.
#[pyfunction]
#[pyo3(signature = (matrix, tau, tau1, order = 4))]
fn build_coefficients_for_matrix(matrix: Vec<Vec<f64>>, tau: f64, tau1: f64, order: u8) -> PyResult<PyCoefficients> {
    let sys = etd_core::system::MatrixSystem::linear(matrix_from_rows(matrix)?).map_err(to_py)?;
    let inner =
        etd_core::build_coefficients(&sys, tau, tau1, order, etd_core::BuildOptions::default()).map_err(to_py)?;
    Ok(PyCoefficients { inner })
}

/// Advances `u0` by `n_steps` ETD steps; returns `(u, t)`.
#[pyfunction]
#[pyo3(signature = (problem, coefficients, u0, n_steps, scheme = "ETD4RK", threshold = 0.0, t0 = 0.0))]
fn integrate(
    py: Python<'_>,
    problem: &PyProblem,
    coefficients: &PyCoefficients,
    u0: Vec<f64>,
    n_steps: usize,
    scheme: &str,
    threshold: f64,
    t0: f64,
) -> PyResult<(Vec<f64>, f64)> {
    let scheme: SchemeId = scheme.parse().map_err(to_py)?;
    let mut stepper = EtdStepper::new(&coefficients.inner, scheme, threshold).map_err(to_py)?;
    let sys = &problem.inner;
    let run = py
        .detach(|| stepper.integrate(sys, &State::new(u0, t0), n_steps, None))
        .map_err(to_py)?;
    Ok((run.state.values, run.state.time))
}

/// Predictor–corrector integration from `t0` to `t_end`; returns `(u, t)`.
#[pyfunction]
#[pyo3(signature = (problem, u0, t_end, tau1, t0 = 0.0))]
fn pc_integrate(
    py: Python<'_>,
    problem: &PyProblem,
    u0: Vec<f64>,
    t_end: f64,
    tau1: f64,
    t0: f64,
) -> PyResult<(Vec<f64>, f64)> {
    let sys = &problem.inner;
    let s = py
        .detach(|| etd_core::pc_integrate(sys, &State::new(u0, t0), t_end, tau1))
        .map_err(to_py)?;
    Ok((s.values, s.time))
}

/// CSR form of a dense matrix after dropping entries with `|v| <= threshold`.
#[pyclass(name = "SparseMatrix", frozen)]
struct PySparseMatrix {
    inner: etd_core::SparseMatrix,
}

#[pymethods]
impl PySparseMatrix {
    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.nrows(), self.inner.ncols())
    }

    fn fill_ratio(&self) -> f64 {
        self.inner.stats().fill_ratio()
    }

    fn matvec(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.matvec(&v).map_err(to_py)
    }

    fn to_dense(&self) -> Vec<Vec<f64>> {
        self.inner.to_dense().to_rows()
    }

    /// `(row_offsets, col_indices, values)`.
    fn csr(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        (
            self.inner.row_offsets().to_vec(),
            self.inner.col_indices().to_vec(),
            self.inner.values().to_vec(),
        )
    }
}

#[pyfunction]
#[pyo3(signature = (matrix, threshold = 0.0))]
fn sparsify(matrix: Vec<Vec<f64>>, threshold: f64) -> PyResult<PySparseMatrix> {
    let dense = matrix_from_rows(matrix)?;
    Ok(PySparseMatrix {
        inner: etd_core::sparsify(&dense, threshold).map_err(to_py)?,
    })
}

/// Predictor–corrector reference at `t_end` with stepsize `factor·h^4` (CHE)
/// or `factor·h^6` (MCE), cached under `cache_dir` when given.
#[pyfunction]
#[pyo3(signature = (kind, n, t_end, length = 10.0, v = 1.0, factor = 0.01, cache_dir = None))]
fn reference_solution(
    py: Python<'_>,
    kind: &str,
    n: usize,
    t_end: f64,
    length: f64,
    v: f64,
    factor: f64,
    cache_dir: Option<PathBuf>,
) -> PyResult<Vec<f64>> {
    let cfg = ExperimentConfig {
        problem: kind.parse::<ProblemKind>().map_err(to_py)?,
        n,
        domain_length: length,
        v,
        t_end,
        reference_tau1_factor: factor,
        cache_dir,
        ..Default::default()
    };
    let s = py.detach(|| bench::reference_solution(&cfg)).map_err(to_py)?;
    Ok(s.values)
}

#[pymodule]
fn etd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyCoefficients>()?;
    m.add_class::<PySparseMatrix>()?;
    m.add_function(wrap_pyfunction!(build_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(build_coefficients_for_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(pc_integrate, m)?)?;
    m.add_function(wrap_pyfunction!(sparsify, m)?)?;
    m.add_function(wrap_pyfunction!(reference_solution, m)?)?;
    m.add("BlowUpError", m.py().get_type::<BlowUpError>())?;
    Ok(())
}
