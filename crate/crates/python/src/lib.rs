//! Python bindings for the `efr-rom` library.

use std::path::PathBuf;

use efr_rom::fom::{fom_run as run_fom_core, step_initial_condition, FomGrid, FomOptions};
use efr_rom::pipeline::{self, Artifacts, PipelineConfig, PipelineError};
use efr_rom::pod::project;
use efr_rom::rom::{efr_run, EfrConfig, FilterKind, FilterSpec, RomError, RomOperators};
use efr_rom::uq::{self, RandomViscosityModel, UqError};
use efr_rom::{assemble_fom, DenseMatrix, DenseVector, FomError, PodBasis};
use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(efrrom, ValidationError, PyValueError, "Invalid input or configuration.");
create_exception!(efrrom, NumericalError, PyArithmeticError, "A solve or time step broke down.");

fn to_py(e: PipelineError) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err(e.to_string())
    } else {
        ValidationError::new_err(e.to_string())
    }
}

fn fom_err(e: FomError) -> PyErr {
    to_py(e.into())
}

fn rom_err(e: RomError) -> PyErr {
    to_py(e.into())
}

fn uq_err(e: UqError) -> PyErr {
    to_py(e.into())
}

fn columns(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.cols()).map(|j| m.col(j).to_vec()).collect()
}

fn parse_model(name: &str) -> PyResult<RandomViscosityModel> {
    match name {
        "constant1d" => Ok(RandomViscosityModel::constant1d()),
        "kl5d" => Ok(RandomViscosityModel::kl5d()),
        other => Err(ValidationError::new_err(format!(
            "unknown viscosity model `{other}` (expected constant1d or kl5d)"
        ))),
    }
}

fn parse_filter(kind: &str, delta: f64, m: u32) -> PyResult<FilterSpec> {
    let kind: FilterKind = kind.parse().map_err(ValidationError::new_err)?;
    FilterSpec::new(kind, delta, m).map_err(rom_err)
}

/// Sparse collocation grid on the reference box `[-1, 1]^d`.
#[pyclass(name = "SparseGrid", module = "efrrom", frozen)]
struct PySparseGrid {
    inner: uq::SparseGrid,
}

#[pymethods]
impl PySparseGrid {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn level(&self) -> u32 {
        self.inner.level
    }

    /// Nodes as a list of coordinate lists.
    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        columns(&self.inner.points)
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.as_slice().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Weighted sum of per-node values.
    fn expectation(&self, values: Vec<f64>) -> PyResult<f64> {
        uq::expectation(&values, &self.inner).map_err(uq_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "SparseGrid(dim={}, level={}, nodes={})",
            self.inner.dim,
            self.inner.level,
            self.inner.len()
        )
    }
}

/// Total-level Clenshaw-Curtis sparse grid.
#[pyfunction]
fn smolyak_grid(dim: usize, level: u32) -> PyResult<PySparseGrid> {
    let inner = uq::smolyak_grid(dim, level).map_err(uq_err)?;
    Ok(PySparseGrid { inner })
}

/// One-dimensional Clenshaw-Curtis rule `(nodes, weights)` for the uniform density.
#[pyfunction]
fn cc_rule(level: u32) -> (Vec<f64>, Vec<f64>) {
    uq::cc_rule(level)
}

/// Viscosity of `model` at `x` for a physical parameter vector `y`.
#[pyfunction]
#[pyo3(signature = (x, y, model = "constant1d"))]
fn viscosity(x: f64, y: Vec<f64>, model: &str) -> PyResult<f64> {
    parse_model(model)?.viscosity(x, &y).map_err(uq_err)
}

/// Closed-form filter transfer factor on a generalized stiffness eigenvalue.
#[pyfunction]
#[pyo3(signature = (kind, delta, mu, m = 1))]
fn filter_transfer(kind: &str, delta: f64, mu: f64, m: u32) -> PyResult<f64> {
    Ok(parse_filter(kind, delta, m)?.transfer(mu))
}

/// Full-order trajectory from the step initial condition.
///
/// Returns a dict with `times`, `x` (all mesh nodes) and `snapshots`
/// (one list of interior values per kept time).
#[pyfunction]
#[pyo3(signature = (y, n_nodes = 129, dt = 5e-4, t_final = 1.0, stride = 1, model = "constant1d"))]
fn fom_run<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    n_nodes: usize,
    dt: f64,
    t_final: f64,
    stride: usize,
    model: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let model = parse_model(model)?;
    let grid = FomGrid::new(n_nodes).map_err(fom_err)?;
    let x: Vec<f64> = (0..grid.n_nodes()).map(|i| grid.node(i)).collect();
    let fom = assemble_fom(grid, &model.affine_components());
    let initial = step_initial_condition(&fom.grid);
    let snaps = py
        .detach(|| run_fom_core(&initial, &fom, &y, dt, t_final, stride, &FomOptions::default()))
        .map_err(fom_err)?;
    let out = PyDict::new(py);
    out.set_item("times", snaps.times().to_vec())?;
    out.set_item("x", x)?;
    out.set_item("snapshots", columns(snaps.data()))?;
    Ok(out)
}

/// Pipeline configuration: defaults, then an optional key=value file, then
/// `EFRROM_*` environment variables, then `overrides`.
#[pyclass(name = "Config", module = "efrrom")]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (path = None, overrides = None, use_env = true))]
    fn new(path: Option<PathBuf>, overrides: Option<Vec<(String, String)>>, use_env: bool) -> PyResult<Self> {
        let env: Vec<(String, String)> = if use_env { std::env::vars().collect() } else { Vec::new() };
        let mut inner = PipelineConfig::load(path.as_deref(), env).map_err(to_py)?;
        for (k, v) in overrides.unwrap_or_default() {
            inner.apply(&k, &v).map_err(to_py)?;
        }
        Ok(Self { inner })
    }

    /// Sets one dotted key, e.g. `cfg.set("pod.r", "full")`.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.apply(key, value).map_err(to_py)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    fn to_dict(&self) -> Vec<(String, String)> {
        self.inner
            .to_key_values()
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.inner.out_dir.clone()
    }

    #[setter]
    fn set_out_dir(&mut self, dir: PathBuf) {
        self.inner.out_dir = dir;
    }

    fn training_grid(&self) -> PyResult<PySparseGrid> {
        let inner = self.inner.training_grid().map_err(to_py)?;
        Ok(PySparseGrid { inner })
    }

    fn online_grid(&self) -> PyResult<PySparseGrid> {
        let inner = self.inner.online_grid().map_err(to_py)?;
        Ok(PySparseGrid { inner })
    }

    /// Runs the offline stage; returns its summary as a dict.
    fn offline<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let cfg = &self.inner;
        let s = py
            .detach(|| pipeline::with_workers(cfg.workers, || pipeline::offline(cfg))?)
            .map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("training_nodes", s.training_nodes)?;
        out.set_item("snapshots", s.snapshots)?;
        out.set_item("r", s.r)?;
        out.set_item("numerical_rank", s.numerical_rank)?;
        out.set_item("captured_energy", s.captured_energy)?;
        out.set_item("leading_eigenvalues", s.leading_eigenvalues)?;
        out.set_item("pod_seconds", s.pod_seconds)?;
        Ok(out)
    }

    /// Runs the online sweep; returns `{label: (window_error, extended_error)}`
    /// plus the expected energy series under `"series"`.
    fn online<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let cfg = &self.inner;
        let report = py
            .detach(|| pipeline::with_workers(cfg.workers, || pipeline::online(cfg))?)
            .map_err(to_py)?;
        let errors = PyDict::new(py);
        for e in &report.errors {
            errors.set_item(e.spec.label(), (e.window, e.extended))?;
        }
        let series = PyDict::new(py);
        for (spec, s) in report.variants.iter().zip(&report.series) {
            if let Some(s) = s {
                series.set_item(spec.label(), (s.times.clone(), s.values.clone()))?;
            }
        }
        if let Some(f) = &report.fom {
            series.set_item("fom", (f.times.clone(), f.values.clone()))?;
        }
        let out = PyDict::new(py);
        out.set_item("errors", errors)?;
        out.set_item("series", series)?;
        out.set_item("failures", report.failures.clone())?;
        out.set_item("nodes", report.grid.len())?;
        Ok(out)
    }

    /// Invariant checks as `(name, passed, measured)` tuples.
    fn verify(&self, py: Python<'_>) -> PyResult<Vec<(String, bool, String)>> {
        let cfg = &self.inner;
        let report = py.detach(|| pipeline::verify(cfg)).map_err(to_py)?;
        Ok(report
            .checks
            .into_iter()
            .map(|c| (c.name, c.passed, c.measured))
            .collect())
    }

    /// Monte Carlo versus collocation for the final energy:
    /// `(mc_mean, mc_std_error, scm_expectation)`.
    #[pyo3(signature = (samples, seed = None))]
    fn mc_check(&self, py: Python<'_>, samples: usize, seed: Option<u64>) -> PyResult<(f64, f64, f64)> {
        let cfg = &self.inner;
        let seed = seed.unwrap_or(cfg.seed);
        let r = py
            .detach(|| pipeline::with_workers(cfg.workers, || pipeline::mc_check(cfg, samples, seed))?)
            .map_err(to_py)?;
        Ok((r.monte_carlo.mean, r.monte_carlo.std_error, r.collocation))
    }

    fn __repr__(&self) -> String {
        let kv = self.to_dict();
        let body: Vec<String> = kv.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("Config({})", body.join(", "))
    }
}

/// `(times, energies, coefficients)` of one reduced run.
type Trajectory = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

/// Reduced model loaded from offline artifacts.
#[pyclass(name = "ReducedModel", module = "efrrom", frozen)]
struct PyReducedModel {
    basis: PodBasis,
    ops: RomOperators,
    mass: DenseMatrix,
}

#[pymethods]
impl PyReducedModel {
    /// Loads `<out_dir>/offline`.
    #[staticmethod]
    fn load(out_dir: PathBuf) -> PyResult<Self> {
        let art = Artifacts::new(&out_dir);
        Ok(Self {
            basis: art.basis().map_err(to_py)?,
            ops: art.operators().map_err(to_py)?,
            mass: art.mass().map_err(to_py)?,
        })
    }

    #[getter]
    fn r(&self) -> usize {
        self.ops.r()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.basis.eigenvalues.clone()
    }

    /// Mass-weighted projection of an interior FOM state onto the modes.
    fn project(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        project(&self.basis, &u, &self.mass)
            .map(DenseVector::into_vec)
            .map_err(|e| to_py(e.into()))
    }

    /// Evolve-filter-relax run; returns `(times, energies, coefficients)`.
    #[pyo3(signature = (a0, y, t_start, t_final, dt, kind = "none", delta = 0.0, m = 1, chi = None))]
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        py: Python<'_>,
        a0: Vec<f64>,
        y: Vec<f64>,
        t_start: f64,
        t_final: f64,
        dt: f64,
        kind: &str,
        delta: f64,
        m: u32,
        chi: Option<f64>,
    ) -> PyResult<Trajectory> {
        let spec = parse_filter(kind, delta, m)?;
        let mut cfg = EfrConfig::new(dt, t_start, t_final, spec);
        if let Some(chi) = chi {
            cfg = cfg.with_chi(chi);
        }
        let a0 = DenseVector::from(a0);
        let traj = py.detach(|| efr_run(&a0, &self.ops, &y, &cfg)).map_err(rom_err)?;
        let coeffs = traj.coefficients.into_iter().map(DenseVector::into_vec).collect();
        Ok((traj.times, traj.energy, coeffs))
    }
}

#[pymodule]
fn efrrom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ValidationError", m.py().get_type::<ValidationError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<PySparseGrid>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyReducedModel>()?;
    m.add_function(wrap_pyfunction!(smolyak_grid, m)?)?;
    m.add_function(wrap_pyfunction!(cc_rule, m)?)?;
    m.add_function(wrap_pyfunction!(viscosity, m)?)?;
    m.add_function(wrap_pyfunction!(filter_transfer, m)?)?;
    m.add_function(wrap_pyfunction!(fom_run, m)?)?;
    Ok(())
}
