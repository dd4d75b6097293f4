//! Python bindings for `dsgd-core`.

use std::path::PathBuf;

use dsgd_core::analysis::{bound_constants, geometric_weighted_sum, BoundInputs, BoundConstants as CoreBounds};
use dsgd_core::config::ExperimentConfig;
use dsgd_core::delay::DelayModel as CoreDelay;
use dsgd_core::experiment::{self, ExperimentResult as CoreResult, Summary};
use dsgd_core::io::tomo_to_container;
use dsgd_core::linalg::{DesignMatrix, DiscreteGradient};
use dsgd_core::network::{
    auto_metropolis_mixing, build_topology, metropolis_mixing, uniform_complete_mixing, validate_mixing, MixingMatrix, NetworkTopology,
    TopologyKind,
};
use dsgd_core::objectives::{make_objective, LocalObjective, Loss};
use dsgd_core::rng::StreamSeeder;
use dsgd_core::solver::{centralized_reference, StepSizePolicy};
use dsgd_core::tomo::{generate_tomo_problem, PhantomKind, TomoProblem, TomoSpec};
use dsgd_core::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Communication graph with its mixing matrix.
#[pyclass(module = "dsgd", frozen)]
struct Network {
    topology: NetworkTopology,
    mixing: MixingMatrix,
}

#[pymethods]
impl Network {
    /// `kind` is lattice2d (rows, cols), ring (m), kregular (m, k) or complete (m);
    /// `mixing` is metropolis, lazy-metropolis, auto-metropolis or uniform-complete.
    #[new]
    #[pyo3(signature = (kind, m=None, rows=None, cols=None, k=None, seed=0, mixing="auto-metropolis"))]
    fn new(
        kind: &str,
        m: Option<usize>,
        rows: Option<usize>,
        cols: Option<usize>,
        k: Option<usize>,
        seed: u64,
        mixing: &str,
    ) -> PyResult<Self> {
        let need = |v: Option<usize>, name: &str| v.ok_or_else(|| PyValueError::new_err(format!("{kind} needs `{name}`")));
        let kind = match kind {
            "lattice2d" => TopologyKind::Lattice2d { rows: need(rows, "rows")?, cols: need(cols, "cols")? },
            "ring" => TopologyKind::Ring { m: need(m, "m")? },
            "kregular" => TopologyKind::Kregular { m: need(m, "m")?, k: need(k, "k")? },
            "complete" => TopologyKind::Complete { m: need(m, "m")? },
            other => return Err(PyValueError::new_err(format!("unknown topology `{other}`"))),
        };
        let topology = build_topology(&kind, seed).map_err(value_err)?;
        let mixing = match mixing {
            "metropolis" => metropolis_mixing(&topology, false).map_err(value_err)?,
            "lazy-metropolis" => metropolis_mixing(&topology, true).map_err(value_err)?,
            "auto-metropolis" => auto_metropolis_mixing(&topology),
            "uniform-complete" => uniform_complete_mixing(&topology).map_err(value_err)?,
            other => return Err(PyValueError::new_err(format!("unknown mixing `{other}`"))),
        };
        Ok(Network { topology, mixing })
    }

    /// Build from an edge-list text: node count, then one `i j` pair per line.
    #[staticmethod]
    #[pyo3(signature = (text, lazy=false))]
    fn from_edge_list(text: &str, lazy: bool) -> PyResult<Self> {
        let topology = NetworkTopology::from_edge_list(text).map_err(value_err)?;
        let mixing = metropolis_mixing(&topology, lazy).map_err(value_err)?;
        Ok(Network { topology, mixing })
    }

    #[getter]
    fn nodes(&self) -> usize {
        self.topology.node_count()
    }

    /// `‖W − J‖₂`
    #[getter]
    fn spectral_lambda(&self) -> f64 {
        self.mixing.lambda()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.topology.edges().to_vec()
    }

    fn weights(&self) -> Vec<Vec<f64>> {
        from_matrix(self.mixing.weights())
    }

    /// `(check, passed, detail)` for every mixing-matrix check.
    fn validate(&self) -> Vec<(String, bool, String)> {
        validate_mixing(&self.mixing, &self.topology).entries.into_iter().map(|e| (e.name.to_string(), e.passed, e.detail)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Network(nodes={}, edges={}, lambda={:.6})", self.topology.node_count(), self.topology.edges().len(), self.mixing.lambda())
    }
}

/// A node objective `f_i`.
#[pyclass(module = "dsgd", frozen)]
struct Objective {
    inner: LocalObjective,
}

#[pymethods]
impl Objective {
    /// `loss` is least-squares, huber (delta), logistic (labels ±1 in `b`),
    /// tikhonov-identity (mu) or tikhonov-gradient (mu, dims).
    #[new]
    #[pyo3(signature = (loss, a, b, sigma=0.0, delta=None, mu=None, dims=None))]
    fn new(loss: &str, a: Vec<Vec<f64>>, b: Vec<f64>, sigma: f64, delta: Option<f64>, mu: Option<f64>, dims: Option<Vec<usize>>) -> PyResult<Self> {
        let loss = match loss {
            "least-squares" => Loss::LeastSquares,
            "huber" => Loss::Huber { delta: delta.unwrap_or(0.05) },
            "logistic" => Loss::Logistic,
            "tikhonov-identity" => Loss::TikhonovIdentity { mu: mu.unwrap_or(0.0) },
            "tikhonov-gradient" => {
                let dims = dims.ok_or_else(|| PyValueError::new_err("tikhonov-gradient needs `dims`"))?;
                Loss::TikhonovGradient { mu: mu.unwrap_or(0.0), op: DiscreteGradient::new(&dims) }
            }
            other => return Err(PyValueError::new_err(format!("unknown loss `{other}`"))),
        };
        let design = DesignMatrix::from_dense(&to_matrix(&a)?);
        let inner = make_objective(loss, design, DVector::from_vec(b), sigma).map_err(value_err)?;
        Ok(Objective { inner })
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.evaluate(&DVector::from_vec(x)).map_err(value_err)
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.gradient(&DVector::from_vec(x)).map_err(value_err)?.as_slice().to_vec())
    }

    /// One noisy gradient drawn from the stream `("noise", index)` of `seed`.
    #[pyo3(signature = (x, seed, index=0))]
    fn stochastic_gradient(&self, x: Vec<f64>, seed: u64, index: u64) -> PyResult<Vec<f64>> {
        let mut rng = StreamSeeder::new(seed).stream("noise", index);
        let g = self.inner.stochastic_gradient(&DVector::from_vec(x), &mut rng).map_err(value_err)?;
        Ok(g.value.as_slice().to_vec())
    }

    #[getter]
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz_constant()
    }

    fn gradient_bound(&self, radius: f64) -> f64 {
        self.inner.gradient_bound(radius)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }
}

/// Delay distribution for stale gradients.
#[pyclass(module = "dsgd", frozen)]
struct DelayModel {
    inner: CoreDelay,
}

#[pymethods]
impl DelayModel {
    /// `kind` is none, fixed (tau), uniform (max) or truncated-geometric (p, max).
    #[new]
    #[pyo3(signature = (kind, tau=None, max=None, p=None))]
    fn new(kind: &str, tau: Option<usize>, max: Option<usize>, p: Option<f64>) -> PyResult<Self> {
        let need = |v: Option<usize>, name: &str| v.ok_or_else(|| PyValueError::new_err(format!("{kind} needs `{name}`")));
        let inner = match kind {
            "none" => CoreDelay::None,
            "fixed" => CoreDelay::Fixed { tau: need(tau, "tau")? },
            "uniform" => CoreDelay::Uniform { max: need(max, "max")? },
            "truncated-geometric" => CoreDelay::TruncatedGeometric {
                p: p.ok_or_else(|| PyValueError::new_err("truncated-geometric needs `p`"))?,
                max: need(max, "max")?,
            },
            other => return Err(PyValueError::new_err(format!("unknown delay kind `{other}`"))),
        };
        inner.validate().map_err(value_err)?;
        Ok(DelayModel { inner })
    }

    /// `count` draws of `τ(t)` from the stream `("delay", 0)` of `seed`.
    #[pyo3(signature = (t, seed, count=1))]
    fn sample(&self, t: usize, seed: u64, count: usize) -> Vec<usize> {
        let mut rng = StreamSeeder::new(seed).stream("delay", 0);
        (0..count).map(|_| self.inner.sample(t, &mut rng)).collect()
    }

    /// `E[τ²]`
    #[getter]
    fn second_moment(&self) -> f64 {
        self.inner.second_moment()
    }

    #[getter]
    fn max_delay(&self) -> usize {
        self.inner.max_delay()
    }
}

/// `α(t) = 1 / (2(L + η√t))`
#[pyfunction]
fn step_size(lipschitz: f64, eta: f64, t: usize) -> f64 {
    StepSizePolicy::new(lipschitz, eta).step_size(t)
}

/// Exact `Σ_{s<t} α(s) λ^{t-s-1}` with `α(s) = 1/(c1 + c2√s)` and its closed-form bound.
#[pyfunction]
fn weighted_sum(c1: f64, c2: f64, lam: f64, t: usize) -> PyResult<(f64, f64)> {
    let ws = geometric_weighted_sum(c1, c2, lam, t).map_err(value_err)?;
    Ok((ws.exact, ws.bound))
}

/// Bound constants and evaluated bounds.
#[pyclass(module = "dsgd", frozen)]
struct Bounds {
    inner: CoreBounds,
}

#[pymethods]
impl Bounds {
    #[new]
    #[pyo3(signature = (lam, g, lipschitz, eta, m, n, radius, b, sigma))]
    #[allow(clippy::too_many_arguments)]
    fn new(lam: f64, g: f64, lipschitz: f64, eta: f64, m: usize, n: usize, radius: f64, b: f64, sigma: f64) -> PyResult<Self> {
        let inner = bound_constants(BoundInputs { lambda: lam, g, l: lipschitz, eta, m, n, radius, b, sigma }).map_err(value_err)?;
        Ok(Bounds { inner })
    }

    #[getter]
    fn c(&self) -> f64 {
        self.inner.c
    }

    #[getter]
    fn k(&self) -> f64 {
        self.inner.k
    }

    #[getter]
    fn diameter(&self) -> f64 {
        self.inner.diameter
    }

    fn consensus_gap(&self, t: f64) -> f64 {
        self.inner.consensus_gap(t)
    }

    fn running_average_gap(&self, t: f64) -> f64 {
        self.inner.running_average_gap(t)
    }

    fn disagreement(&self, t: f64) -> f64 {
        self.inner.disagreement_closed_form(t)
    }
}

fn summary_dict<'py>(py: Python<'py>, s: &Summary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iterations", s.iterations)?;
    d.set_item("seed_count", s.seed_count)?;
    d.set_item("nodes", s.nodes)?;
    d.set_item("dim", s.dim)?;
    d.set_item("lambda", s.lambda)?;
    d.set_item("eta", s.eta)?;
    d.set_item("lipschitz", s.lipschitz)?;
    d.set_item("gradient_bound", s.gradient_bound)?;
    d.set_item("f_star", s.f_star)?;
    d.set_item("reference_converged", s.reference_converged)?;
    d.set_item("initial_gap", s.initial_gap)?;
    d.set_item("final_gap", s.final_gap)?;
    d.set_item("final_disagreement_y", s.final_disagreement_y)?;
    d.set_item("final_disagreement_x", s.final_disagreement_x)?;
    d.set_item("slope_gap", s.slope_gap)?;
    d.set_item("slope_disagreement", s.slope_disagreement)?;
    d.set_item("slope_disagreement_x", s.slope_disagreement_x)?;
    d.set_item("tomo_relative_error", s.tomo_relative_error)?;
    let verdicts = PyDict::new(py);
    for v in &s.verdicts {
        verdicts.set_item(&v.name, (v.applicable, v.passed, v.violations, &v.detail))?;
    }
    d.set_item("verdicts", verdicts)?;
    Ok(d)
}

/// Outcome of [`Experiment.run`].
#[pyclass(module = "dsgd", frozen)]
struct ExperimentResult {
    inner: CoreResult,
}

#[pymethods]
impl ExperimentResult {
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        summary_dict(py, &self.inner.summary)
    }

    fn trace_csv(&self) -> PyResult<String> {
        self.inner.trace_csv().map_err(runtime_err)
    }

    /// Seed-mean objective gap `f(z(t)) − f*` for `t = 1..=T`.
    fn mean_gap(&self) -> Vec<f64> {
        self.inner.mean.iter().map(|r| r.obj_gap).collect()
    }

    /// Seed-mean `Σ_i ‖y_i(t) − z(t)‖²`.
    fn mean_disagreement(&self) -> Vec<f64> {
        self.inner.mean.iter().map(|r| r.disagreement_y).collect()
    }

    fn final_z(&self) -> Vec<f64> {
        self.inner.mean_final_z().as_slice().to_vec()
    }

    /// Write trace.csv, summary.toml and the optional files into `directory`.
    fn write(&self, directory: PathBuf) -> PyResult<Vec<PathBuf>> {
        experiment::write_outputs(&self.inner, &directory).map_err(runtime_err)
    }
}

/// An experiment described by a TOML config.
#[pyclass(module = "dsgd", frozen)]
struct Experiment {
    config: ExperimentConfig,
}

#[pymethods]
impl Experiment {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Experiment { config: ExperimentConfig::from_toml(text).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_path(path: PathBuf) -> PyResult<Self> {
        Ok(Experiment { config: ExperimentConfig::from_path(&path).map_err(value_err)? })
    }

    fn to_toml(&self) -> String {
        self.config.to_toml()
    }

    /// Run every seed; the GIL is released while the simulation runs.
    fn run(&self, py: Python<'_>) -> PyResult<ExperimentResult> {
        let inner = py.detach(|| experiment::execute(&self.config)).map_err(runtime_err)?;
        Ok(ExperimentResult { inner })
    }

    /// `(f_star, converged, iterations)` of the centralized reference solver.
    fn reference(&self, py: Python<'_>) -> PyResult<(f64, bool, usize)> {
        let problem = self.config.build_problem().map_err(value_err)?.problem;
        let tol = self.config.solver.reference_tol;
        let max_iter = self.config.solver.reference_max_iter;
        let r = py.detach(|| centralized_reference(&problem, tol, max_iter));
        Ok((r.f_star, r.converged, r.iterations))
    }

    /// Synchronous vs asynchronous wall-clock comparison; needs a [timing] section.
    fn timing(&self, py: Python<'_>) -> PyResult<String> {
        let report = py.detach(|| experiment::timing_compare(&self.config)).map_err(runtime_err)?;
        Ok(report.render())
    }
}

/// Travel-time tomography instance.
#[pyclass(module = "dsgd", frozen)]
struct Tomography {
    inner: TomoProblem,
}

#[pymethods]
impl Tomography {
    #[new]
    #[pyo3(signature = (dims, nodes, rays_per_node, noise_std=0.0, radius=1.0, seed=0, blobs=3, phantom_seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(dims: Vec<usize>, nodes: usize, rays_per_node: usize, noise_std: f64, radius: f64, seed: u64, blobs: usize, phantom_seed: u64) -> PyResult<Self> {
        let spec = TomoSpec { dims, nodes, rays_per_node, noise_std, radius, phantom: PhantomKind::Blobs { count: blobs, seed: phantom_seed } };
        Ok(Tomography { inner: generate_tomo_problem(&spec, seed).map_err(value_err)? })
    }

    #[getter]
    fn x_true(&self) -> Vec<f64> {
        self.inner.x_true.as_slice().to_vec()
    }

    /// Ray-path matrix of one node, dense.
    fn design(&self, node: usize) -> PyResult<Vec<Vec<f64>>> {
        let n = self.inner.nodes.get(node).ok_or_else(|| PyValueError::new_err(format!("no node {node}")))?;
        Ok(from_matrix(&n.a.to_dense()))
    }

    fn travel_times(&self, node: usize) -> PyResult<Vec<f64>> {
        let n = self.inner.nodes.get(node).ok_or_else(|| PyValueError::new_err(format!("no node {node}")))?;
        Ok(n.b.as_slice().to_vec())
    }

    fn relative_error(&self, image: Vec<f64>) -> PyResult<f64> {
        if image.len() != self.inner.pixel_count() {
            return Err(PyValueError::new_err(format!("image has {} pixels, expected {}", image.len(), self.inner.pixel_count())));
        }
        Ok(self.inner.relative_error(&DVector::from_vec(image)))
    }

    /// Text container holding the phantom and every node's rays and data.
    fn to_container(&self) -> String {
        tomo_to_container(&self.inner).to_text()
    }
}

#[pymodule]
fn dsgd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<Objective>()?;
    m.add_class::<DelayModel>()?;
    m.add_class::<Bounds>()?;
    m.add_class::<Experiment>()?;
    m.add_class::<ExperimentResult>()?;
    m.add_class::<Tomography>()?;
    m.add_function(wrap_pyfunction!(step_size, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_sum, m)?)?;
    Ok(())
}
