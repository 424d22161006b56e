//! Python bindings for the qphase library.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use qphase::analysis::{self, Histogram};
use qphase::dynamics::{self, DensityOperator};
use qphase::error::Error;
use qphase::limit_cycle::{self, CycleOptions};
use qphase::models::{self, ModelConfig};
use qphase::operator::{make_generator_basis, CMatrix, GeneratorBasis, Ket};
use qphase::phase_equation::{self, PhaseScheme, PhaseSimConfig};
use qphase::prc::{self, PRCTable, PrcOptions};

fn err(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_)
        | Error::InvalidDimension(_)
        | Error::DimensionMismatch { .. }
        | Error::UnknownModel(_)
        | Error::NonHermitian(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_rows(m: &CMatrix) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn from_rows(rows: &[Vec<Complex64>]) -> PyResult<CMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// A Lindblad model built from a preset name or explicit parameters.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    config: ModelConfig,
    inner: models::LindbladModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (kind, params = None, n_levels = None))]
    fn new(kind: &str, params: Option<std::collections::BTreeMap<String, f64>>, n_levels: Option<usize>) -> PyResult<Self> {
        let config = ModelConfig { model: kind.to_string(), params: params.unwrap_or_default(), n_levels };
        let inner = models::LindbladModel::from_config(&config).map_err(err)?;
        Ok(Self { config, inner })
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let config = ModelConfig::preset(name).map_err(err)?;
        let inner = models::LindbladModel::from_config(&config).map_err(err)?;
        Ok(Self { config, inner })
    }

    #[staticmethod]
    fn presets() -> Vec<&'static str> {
        models::PRESETS.to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn num_channels(&self) -> usize {
        self.inner.num_channels()
    }

    #[getter]
    fn kind(&self) -> &str {
        &self.config.model
    }

    fn hamiltonian(&self) -> Vec<Vec<Complex64>> {
        to_rows(self.inner.hamiltonian.matrix())
    }

    fn steady_state(&self) -> PyResult<PyDensity> {
        Ok(PyDensity(dynamics::steady_state(&self.inner).map_err(err)?))
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?}, dim={}, channels={})", self.config.model, self.inner.n, self.inner.num_channels())
    }
}

/// A density operator.
#[pyclass(name = "Density", frozen)]
struct PyDensity(DensityOperator);

#[pymethods]
impl PyDensity {
    #[new]
    fn new(rows: Vec<Vec<Complex64>>) -> PyResult<Self> {
        Ok(Self(DensityOperator::new(from_rows(&rows)?).map_err(err)?))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn matrix(&self) -> Vec<Vec<Complex64>> {
        to_rows(self.0.matrix())
    }

    fn fidelity(&self, other: &PyDensity) -> PyResult<f64> {
        analysis::fidelity(&self.0, &other.0).map_err(err)
    }

    fn trace_distance(&self, other: &PyDensity) -> f64 {
        self.0.trace_distance(&other.0)
    }
}

/// A sampled limit cycle of the deterministic dynamics.
#[pyclass(name = "LimitCycle", frozen)]
struct PyLimitCycle(limit_cycle::LimitCycle);

#[pymethods]
impl PyLimitCycle {
    #[staticmethod]
    #[pyo3(signature = (model, n_grid = 256, psi0 = None))]
    fn find(py: Python<'_>, model: &PyModel, n_grid: usize, psi0: Option<Vec<Complex64>>) -> PyResult<Self> {
        let psi = match psi0 {
            Some(v) => Ket::normalized(qphase::operator::CVector::from_vec(v)).map_err(err)?,
            None => limit_cycle::default_initial_state(model.inner.n).map_err(err)?,
        };
        let m = &model.inner;
        py.detach(|| limit_cycle::find_limit_cycle(m, &psi, &CycleOptions::with_grid(n_grid)))
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn period(&self) -> f64 {
        self.0.period()
    }

    #[getter]
    fn omega(&self) -> f64 {
        self.0.omega()
    }

    #[getter]
    fn n_grid(&self) -> usize {
        self.0.n_grid()
    }

    #[getter]
    fn floquet_multiplier(&self) -> f64 {
        self.0.floquet_multiplier()
    }

    fn state_at(&self, theta: f64) -> Vec<Complex64> {
        self.0.state_at(theta).amplitudes().iter().copied().collect()
    }

    fn isochron_phase(&self, psi: Vec<Complex64>) -> PyResult<f64> {
        let k = Ket::normalized(qphase::operator::CVector::from_vec(psi)).map_err(err)?;
        self.0.isochron_phase(&k, None).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0.to_json()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Phase response of every generator on an equally spaced phase grid.
#[pyclass(name = "PrcTable", frozen)]
struct PyPrcTable {
    table: PRCTable,
    basis: GeneratorBasis,
}

#[pymethods]
impl PyPrcTable {
    #[staticmethod]
    #[pyo3(signature = (lc, n_theta = 64, eps = 1e-4))]
    fn compute(py: Python<'_>, lc: &PyLimitCycle, n_theta: usize, eps: f64) -> PyResult<Self> {
        let basis = make_generator_basis(lc.0.model().n).map_err(err)?;
        let table = py
            .detach(|| prc::prc_table(&lc.0, &basis, n_theta, &PrcOptions::with_eps(eps)))
            .map_err(err)?;
        Ok(Self { table, basis })
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.table.theta.clone()
    }

    /// Rows indexed by phase, columns by generator.
    fn values(&self) -> Vec<Vec<f64>> {
        self.table.z.clone()
    }
}

/// The reduced stochastic phase equation.
#[pyclass(name = "PhaseSDE", frozen)]
struct PyPhaseSde(phase_equation::PhaseSDE);

#[pymethods]
impl PyPhaseSde {
    #[staticmethod]
    fn build(lc: &PyLimitCycle, prc: &PyPrcTable, model: &PyModel) -> PyResult<Self> {
        phase_equation::build_phase_sde(&lc.0, &prc.table, &model.inner, &prc.basis).map(Self).map_err(err)
    }

    #[getter]
    fn omega(&self) -> f64 {
        self.0.omega()
    }

    fn noise_amplitude(&self, k: usize, theta: f64) -> PyResult<f64> {
        if k >= self.0.num_channels() {
            return Err(PyValueError::new_err("channel index out of range"));
        }
        Ok(self.0.y(k, theta))
    }

    /// Stationary phase density on `n_bins` equal bins.
    #[pyo3(signature = (n_traj = 1000, periods = 200.0, seed = 0, n_bins = 64, stratonovich = false))]
    fn stationary_distribution(
        &self,
        py: Python<'_>,
        n_traj: usize,
        periods: f64,
        seed: u64,
        n_bins: usize,
        stratonovich: bool,
    ) -> PyResult<Vec<f64>> {
        let mut cfg = PhaseSimConfig::new(n_traj, periods * std::f64::consts::TAU / self.0.omega(), 0.02 / self.0.max_drift(), seed, n_bins);
        if stratonovich {
            cfg.scheme = PhaseScheme::Stratonovich;
        }
        py.detach(|| phase_equation::stationary_distribution(&self.0, &cfg))
            .map(|h| h.density)
            .map_err(err)
    }
}

/// rho = sum_i P_i dtheta |psi0(theta_i)><psi0(theta_i)|.
#[pyfunction]
fn reconstruct(density: Vec<f64>, lc: &PyLimitCycle) -> PyResult<PyDensity> {
    analysis::reconstruct_density(&Histogram { density }, &lc.0).map(PyDensity).map_err(err)
}

/// Total variation distance between two binned densities.
#[pyfunction]
fn total_variation(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    analysis::compare_distributions(&Histogram { density: p }, &Histogram { density: q }).map_err(err)
}

#[pymodule]
fn qphase_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDensity>()?;
    m.add_class::<PyLimitCycle>()?;
    m.add_class::<PyPrcTable>()?;
    m.add_class::<PyPhaseSde>()?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(total_variation, m)?)?;
    Ok(())
}
