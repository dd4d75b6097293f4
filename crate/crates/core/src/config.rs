//! Experiment configuration: a TOML document with one section per module.
//!
//! ```toml
//! [problem]
//! kind = "least-squares"       # least-squares | huber | logistic | tomo
//! dim = 10
//! rows_per_node = 5
//! data_noise = 0.001
//! data_seed = 7
//!
//! [network]
//! kind = "lattice2d"           # lattice2d | ring | kregular | complete
//! rows = 5
//! cols = 5
//! mixing = "auto-metropolis"   # metropolis | lazy-metropolis | auto-metropolis | uniform-complete
//!
//! [delay]
//! kind = "uniform"             # none | fixed | uniform | truncated-geometric
//! max = 5
//!
//! [solver]
//! sigma = 0.01
//! eta = 0.01                   # or "auto"
//! radius = 1.0
//! iterations = 10000
//!
//! [run]
//! seed = 1
//! seed_count = 1
//! output_dir = "out"
//! ```
//!
//! Optional `[timing]` and `[sweep]` sections drive the `timing` and
//! `sweep` subcommands; the README documents every key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{optimal_eta, BoundInputs};
use crate::delay::DelayModel;
use crate::network::{
    auto_metropolis_mixing, build_topology, metropolis_mixing, uniform_complete_mixing, MixingMatrix, NetworkError, NetworkTopology,
    TopologyKind,
};
use crate::problem::{synthetic_problem, Problem, ProblemError, SyntheticLoss, SyntheticSpec};
use crate::rng::StreamSeeder;
use crate::solver::REFERENCE_TOL;
use crate::timing::ComputeTime;
use crate::tomo::{generate_tomo_problem, PhantomKind, Regularizer, TomoError, TomoProblem, TomoSpec};

/// Environment variable that overrides `run.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "DSGD_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {msg}")]
    Field { field: String, msg: String },
}

fn field_err(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.to_string(), msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    LeastSquares,
    Huber,
    Logistic,
    Tomo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    // synthetic problems
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows_per_node: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    // tomography
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rays_per_node: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularizer: Option<Regularizer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomKind>,
}

fn default_data_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixingKind {
    Metropolis,
    LazyMetropolis,
    #[default]
    AutoMetropolis,
    UniformComplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    #[serde(flatten)]
    pub topology: TopologyKind,
    #[serde(default)]
    pub mixing: MixingKind,
    /// seed of the random k-regular generator
    #[serde(default)]
    pub graph_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaKeyword {
    Auto,
}

/// Step-size parameter `η`: a number, or `"auto"` for the grid minimizer of the rate constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSetting {
    Value(f64),
    Keyword(EtaKeyword),
}

impl Default for EtaSetting {
    fn default() -> Self {
        EtaSetting::Value(0.01)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub sigma: f64,
    #[serde(default)]
    pub eta: EtaSetting,
    #[serde(default = "default_radius")]
    pub radius: f64,
    pub iterations: usize,
    #[serde(default)]
    pub parallel: bool,
    /// every node starts at this constant vector
    #[serde(default)]
    pub initial: f64,
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
    #[serde(default = "default_reference_max_iter")]
    pub reference_max_iter: usize,
}

fn default_radius() -> f64 {
    1.0
}
fn default_reference_tol() -> f64 {
    REFERENCE_TOL
}
fn default_reference_max_iter() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_seed_count")]
    pub seed_count: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub record_delays: bool,
    #[serde(default)]
    pub gnuplot: bool,
}

fn default_seed_count() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub compute: ComputeTime,
    pub comm_interval: f64,
    pub budget: f64,
    /// gap level used for the time-to-threshold comparison
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// Grid axes; an omitted axis keeps the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delay_max: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub network: NetworkConfig,
    #[serde(default = "default_delay")]
    pub delay: DelayModel,
    pub solver: SolverConfig,
    #[serde(default = "default_run")]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_delay() -> DelayModel {
    DelayModel::None
}
fn default_run() -> RunConfig {
    RunConfig { seed: 0, seed_count: 1, output_dir: default_output_dir(), record_delays: false, gnuplot: false }
}

/// Problem data generated from a config.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub problem: Problem,
    pub tomo: Option<TomoProblem>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn node_count(&self) -> usize {
        self.network.topology.node_count()
    }

    /// Output directory, honoring the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.run.output_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.problem;
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(field_err(field, format!("must be positive and finite, got {v}")))
            }
        };
        let non_negative = |field: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(field_err(field, format!("must be finite and >= 0, got {v}")))
            }
        };
        match p.kind {
            ProblemKind::Tomo => {
                let dims = p.dims.as_ref().ok_or_else(|| field_err("problem.dims", "required for kind tomo"))?;
                if dims.is_empty() || dims.len() > 3 || dims.contains(&0) {
                    return Err(field_err("problem.dims", "needs 1 to 3 positive extents"));
                }
                match p.rays_per_node {
                    Some(r) if r > 0 => {}
                    _ => return Err(field_err("problem.rays_per_node", "required for kind tomo and must be >= 1")),
                }
                non_negative("problem.noise_std", p.noise_std.unwrap_or(0.0))?;
                match p.regularizer {
                    Some(Regularizer::Identity { mu }) | Some(Regularizer::Gradient { mu }) => non_negative("problem.regularizer.mu", mu)?,
                    _ => {}
                }
            }
            _ => {
                match p.dim {
                    Some(d) if d > 0 => {}
                    _ => return Err(field_err("problem.dim", "required and must be >= 1")),
                }
                match p.rows_per_node {
                    Some(r) if r > 0 => {}
                    _ => return Err(field_err("problem.rows_per_node", "required and must be >= 1")),
                }
                non_negative("problem.data_noise", p.data_noise.unwrap_or(0.0))?;
                if p.kind == ProblemKind::Huber {
                    positive("problem.delta", p.delta.ok_or_else(|| field_err("problem.delta", "required for kind huber"))?)?;
                }
            }
        }
        if self.node_count() == 0 {
            return Err(field_err("network", "needs at least one node"));
        }
        if let TopologyKind::Kregular { m, k } = self.network.topology {
            if k >= m || (m * k) % 2 == 1 {
                return Err(field_err("network.k", format!("no {k}-regular graph on {m} nodes")));
            }
        }
        self.delay.validate().map_err(|e| field_err("delay", e.to_string()))?;
        let s = &self.solver;
        non_negative("solver.sigma", s.sigma)?;
        if let EtaSetting::Value(eta) = s.eta {
            positive("solver.eta", eta)?;
        }
        positive("solver.radius", s.radius)?;
        if s.iterations == 0 {
            return Err(field_err("solver.iterations", "must be >= 1"));
        }
        if !(s.initial.is_finite() && s.initial.abs() <= s.radius) {
            return Err(field_err("solver.initial", format!("must lie in [-radius, radius], got {}", s.initial)));
        }
        positive("solver.reference_tol", s.reference_tol)?;
        if s.reference_max_iter == 0 {
            return Err(field_err("solver.reference_max_iter", "must be >= 1"));
        }
        if self.run.seed_count == 0 {
            return Err(field_err("run.seed_count", "must be >= 1"));
        }
        if let Some(t) = &self.timing {
            t.compute.validate().map_err(|e| field_err("timing.compute", e))?;
            positive("timing.comm_interval", t.comm_interval)?;
            positive("timing.budget", t.budget)?;
            if t.budget < t.comm_interval {
                return Err(field_err("timing.budget", "must be at least one communication interval"));
            }
            if let Some(th) = t.threshold {
                positive("timing.threshold", th)?;
            }
        }
        if let Some(sw) = &self.sweep {
            for &s in &sw.sigma {
                non_negative("sweep.sigma", s)?;
            }
            for &m in &sw.nodes {
                self.network
                    .topology
                    .with_node_count(m)
                    .map_err(|e| field_err("sweep.nodes", e.to_string()))?;
            }
            if matches!(self.delay, DelayModel::TruncatedGeometric { .. }) && sw.delay_max.contains(&0) {
                return Err(field_err("sweep.delay_max", "0 is only allowed for uniform or fixed delays"));
            }
        }
        Ok(())
    }

    pub fn build_network(&self) -> Result<(NetworkTopology, MixingMatrix), NetworkError> {
        let topology = build_topology(&self.network.topology, self.network.graph_seed)?;
        let mixing = match self.network.mixing {
            MixingKind::Metropolis => metropolis_mixing(&topology, false)?,
            MixingKind::LazyMetropolis => metropolis_mixing(&topology, true)?,
            MixingKind::AutoMetropolis => auto_metropolis_mixing(&topology),
            MixingKind::UniformComplete => uniform_complete_mixing(&topology)?,
        };
        Ok((topology, mixing))
    }

    /// Problem data for the configured node count. Data depend only on
    /// `problem.data_seed`, so runs with different seeds share one problem.
    pub fn build_problem(&self) -> Result<BuiltProblem, BuildError> {
        let p = &self.problem;
        let m = self.node_count();
        let sigma = self.solver.sigma;
        let radius = self.solver.radius;
        let loss = match p.kind {
            ProblemKind::LeastSquares => SyntheticLoss::LeastSquares,
            ProblemKind::Huber => SyntheticLoss::Huber { delta: p.delta.unwrap_or(0.05) },
            ProblemKind::Logistic => SyntheticLoss::Logistic,
            ProblemKind::Tomo => {
                let spec = TomoSpec {
                    dims: p.dims.clone().unwrap_or_default(),
                    nodes: m,
                    rays_per_node: p.rays_per_node.unwrap_or(1),
                    noise_std: p.noise_std.unwrap_or(0.0),
                    radius,
                    phantom: p.phantom.clone().unwrap_or(PhantomKind::Blobs { count: 3, seed: p.data_seed }),
                };
                let tomo = generate_tomo_problem(&spec, p.data_seed)?;
                let problem = tomo.to_problem(p.regularizer.unwrap_or(Regularizer::None), sigma)?;
                return Ok(BuiltProblem { problem, tomo: Some(tomo) });
            }
        };
        let spec = SyntheticSpec { loss, nodes: m, dim: p.dim.unwrap_or(1), rows_per_node: p.rows_per_node.unwrap_or(1), data_noise: p.data_noise.unwrap_or(0.0) };
        let mut rng = StreamSeeder::new(p.data_seed).stream("synthetic", 0);
        let data = synthetic_problem(&spec, sigma, radius, &mut rng)?;
        Ok(BuiltProblem { problem: data.problem, tomo: None })
    }

    /// Numeric `η`, resolving `"auto"` by minimizing the rate constant over `[1e-4, 1e4]`.
    pub fn resolve_eta(&self, problem: &Problem, mixing: &MixingMatrix) -> Result<f64, BuildError> {
        match self.solver.eta {
            EtaSetting::Value(v) => Ok(v),
            EtaSetting::Keyword(EtaKeyword::Auto) => {
                let inputs = BoundInputs {
                    lambda: mixing.lambda(),
                    g: problem.gradient_bound(),
                    l: problem.max_lipschitz(),
                    eta: 1.0,
                    m: problem.node_count(),
                    n: problem.dim(),
                    radius: problem.radius(),
                    b: self.delay.moment_bound(),
                    sigma: problem.sigma(),
                };
                optimal_eta(inputs, 1e-4, 1e4, 161).map_err(|e| BuildError::Eta(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Tomo(#[from] TomoError),
    #[error("cannot choose eta automatically: {0}")]
    Eta(String),
}
