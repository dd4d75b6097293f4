//! The decentralized delayed stochastic gradient iteration
//!
//! ```text
//! x_i(t+1) = Π_X[ Σ_j w_ij x_j(t) − α(t) g_i(t − τ_i(t)) ]
//! ```
//!
//! together with the running averages `y_i`, the step-size policy and the
//! centralized reference solver used to obtain `f*`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::disagreement_rows;
use crate::delay::{DelayError, DelayModel, StaleBuffer};
use crate::network::MixingMatrix;
use crate::objectives::StochasticGradient;
use crate::problem::Problem;
use crate::rng::{StreamRng, StreamSeeder};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("non-finite value encountered at iteration {t}")]
    Divergence { t: usize },
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error("invalid solver setup: {0}")]
    Setup(String),
}

/// `α(t) = 1 / (2(L + η√t))`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizePolicy {
    pub lipschitz: f64,
    pub eta: f64,
}

impl StepSizePolicy {
    pub fn new(lipschitz: f64, eta: f64) -> Self {
        Self { lipschitz, eta }
    }

    pub fn step_size(&self, t: usize) -> f64 {
        1.0 / (2.0 * (self.lipschitz + self.eta * (t as f64).sqrt()))
    }
}

/// Entrywise clamp of an `m × n` matrix onto `[-R, R]`.
pub fn project_box(v: &DMatrix<f64>, radius: f64) -> DMatrix<f64> {
    v.map(|e| e.clamp(-radius, radius))
}

pub fn project_vector(v: &mut DVector<f64>, radius: f64) {
    v.apply(|e| *e = e.clamp(-radius, radius));
}

/// `z = (1/m) Σ_i y_i`
pub fn consensus_average(rows: &[DVector<f64>]) -> DVector<f64> {
    let mut z = DVector::zeros(rows[0].len());
    for r in rows {
        z += r;
    }
    z / rows.len() as f64
}

/// Stacks per-node rows into an `m × n` matrix.
pub fn stack_rows(rows: &[DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

#[derive(Debug, Clone)]
pub struct SolverState {
    t: usize,
    x: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    radius: f64,
    stale: StaleBuffer,
}

impl SolverState {
    /// Iteration counter: `x()` currently holds `x(t)`.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn x(&self) -> &[DVector<f64>] {
        &self.x
    }

    /// Running averages `y(t − 1)`; zero before the first averaged iteration.
    pub fn y(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn z(&self) -> DVector<f64> {
        consensus_average(&self.y)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn stale(&self) -> &StaleBuffer {
        &self.stale
    }
}

/// Per-iteration facts reported by [`Solver::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// iteration index of the step (`x(t) → x(t+1)`)
    pub t: usize,
    pub alpha: f64,
    pub delays: Vec<usize>,
    /// `‖(I − J) x(t)‖_F`
    pub disagreement_x: f64,
    /// `‖x(t+1) − x(t)‖_F`
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverOptions {
    pub seed: u64,
    /// common initial iterate `x_i(0)`; zero when absent
    pub initial: Option<DVector<f64>>,
    /// evaluate node gradients and mixing rows on the rayon pool
    pub parallel: bool,
}

pub struct Solver<'a> {
    problem: &'a Problem,
    mixing: &'a MixingMatrix,
    delay: &'a DelayModel,
    policy: StepSizePolicy,
    noise: Vec<StreamRng>,
    delay_rngs: Vec<StreamRng>,
    parallel: bool,
    state: SolverState,
}

impl<'a> Solver<'a> {
    pub fn new(
        problem: &'a Problem,
        mixing: &'a MixingMatrix,
        delay: &'a DelayModel,
        policy: StepSizePolicy,
        options: &SolverOptions,
    ) -> Result<Self, SolverError> {
        let m = problem.node_count();
        let n = problem.dim();
        if mixing.size() != m {
            return Err(SolverError::Setup(format!("mixing matrix is {0}x{0} but the problem has {m} nodes", mixing.size())));
        }
        if !(policy.lipschitz >= 0.0 && policy.eta >= 0.0 && policy.step_size(0).is_finite()) {
            return Err(SolverError::Setup("step-size policy needs L >= 0, eta >= 0 and a finite alpha(0)".into()));
        }
        delay.validate()?;
        let x0 = match &options.initial {
            Some(v) if v.len() != n => return Err(SolverError::Setup(format!("initial iterate has length {}, expected {n}", v.len()))),
            Some(v) => v.clone(),
            None => DVector::zeros(n),
        };
        let seeder = StreamSeeder::new(options.seed);
        Ok(Self {
            problem,
            mixing,
            delay,
            policy,
            noise: (0..m).map(|i| seeder.stream("noise", i as u64)).collect(),
            delay_rngs: (0..m).map(|i| seeder.stream("delay", i as u64)).collect(),
            parallel: options.parallel,
            state: SolverState {
                t: 0,
                x: vec![x0; m],
                y: vec![DVector::zeros(n); m],
                radius: problem.radius(),
                stale: StaleBuffer::new(m, delay.max_delay()),
            },
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn policy(&self) -> StepSizePolicy {
        self.policy
    }

    pub fn into_state(self) -> SolverState {
        self.state
    }

    /// Executes iteration `t`: buffer `g_i(t)`, draw `τ_i(t)`, mix, step,
    /// project, and fold `x(t+1)` into the running average when `t ≥ 1`.
    pub fn step(&mut self) -> Result<StepInfo, SolverError> {
        let t = self.state.t;
        let objectives = self.problem.objectives();
        let x = &self.state.x;

        let grads: Vec<StochasticGradient> = if self.parallel {
            objectives
                .par_iter()
                .zip(x.par_iter())
                .zip(self.noise.par_iter_mut())
                .map(|((f, xi), rng)| f.stochastic_gradient_unchecked(xi, rng))
                .collect()
        } else {
            objectives
                .iter()
                .zip(x.iter())
                .zip(self.noise.iter_mut())
                .map(|((f, xi), rng)| f.stochastic_gradient_unchecked(xi, rng))
                .collect()
        };
        if grads.iter().any(|g| g.value.iter().any(|v| !v.is_finite())) {
            return Err(SolverError::Divergence { t });
        }
        for (i, g) in grads.into_iter().enumerate() {
            self.state.stale.push(i, t, x[i].clone(), g.value);
        }

        let delays: Vec<usize> = self.delay_rngs.iter_mut().map(|rng| self.delay.sample(t, rng)).collect();
        let alpha = self.policy.step_size(t);
        let radius = self.state.radius;
        let stale = &self.state.stale;
        let mixing = self.mixing;

        let update = |i: usize| -> Result<DVector<f64>, SolverError> {
            let mut v = DVector::zeros(x[i].len());
            for &(j, w) in mixing.row(i) {
                v.axpy(w, &x[j], 1.0);
            }
            v.axpy(-alpha, stale.gradient(i, t - delays[i])?, 1.0);
            project_vector(&mut v, radius);
            Ok(v)
        };
        let next: Vec<DVector<f64>> = if self.parallel {
            (0..x.len()).into_par_iter().map(update).collect::<Result<_, _>>()?
        } else {
            (0..x.len()).map(update).collect::<Result<_, _>>()?
        };
        if next.iter().any(|v| v.iter().any(|e| !e.is_finite())) {
            return Err(SolverError::Divergence { t });
        }

        let disagreement_x = disagreement_rows(x).frobenius;
        let step_norm = x.iter().zip(&next).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        if t >= 1 {
            let w = 1.0 / t as f64;
            for (y, xn) in self.state.y.iter_mut().zip(&next) {
                *y = &*y * (1.0 - w) + xn * w;
            }
        }
        self.state.x = next;
        self.state.t += 1;
        Ok(StepInfo { t, alpha, delays, disagreement_x, step_norm })
    }
}

/// One row of a run trace, describing iteration `t ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    pub alpha: f64,
    /// `f(z(t)) − f*`
    pub obj_gap: f64,
    /// `Σ_i ‖y_i(t) − z(t)‖²`
    pub disagreement_y: f64,
    /// `‖(I − J) x(t)‖_F`
    pub disagreement_x: f64,
    pub max_delay: usize,
    /// `‖x(t+1) − x(t)‖_F`
    pub step_norm: f64,
    /// `t ≥ 8 m B²`, the regime of the simplified stale-iterate bound
    pub stale_regime: bool,
    pub wall_clock: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// number of recorded iterations `T` (the run executes iterations `0..=T`)
    pub iterations: usize,
    pub solver: SolverOptions,
    pub record_delays: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    /// realized `τ_i(t)` for `t = 0..=T`, when requested
    pub delays: Option<Vec<Vec<usize>>>,
    pub f_star: f64,
    pub final_x: Vec<DVector<f64>>,
    pub final_y: Vec<DVector<f64>>,
    pub final_z: DVector<f64>,
}

pub fn run(
    problem: &Problem,
    mixing: &MixingMatrix,
    delay: &DelayModel,
    policy: StepSizePolicy,
    options: &RunOptions,
    f_star: f64,
) -> Result<RunTrace, SolverError> {
    if options.iterations == 0 {
        return Err(SolverError::Setup("a run needs T >= 1".into()));
    }
    let mut solver = Solver::new(problem, mixing, delay, policy, &options.solver)?;
    let m = problem.node_count() as f64;
    let regime_start = 8.0 * m * delay.second_moment();
    let mut records = Vec::with_capacity(options.iterations);
    let mut delays = options.record_delays.then(Vec::new);
    for _ in 0..=options.iterations {
        let info = solver.step()?;
        if let Some(d) = delays.as_mut() {
            d.push(info.delays.clone());
        }
        if info.t == 0 {
            continue;
        }
        let state = solver.state();
        let z = state.z();
        let obj_gap = problem.value(&z) - f_star;
        if !obj_gap.is_finite() {
            return Err(SolverError::Divergence { t: info.t });
        }
        records.push(TraceRecord {
            t: info.t,
            alpha: info.alpha,
            obj_gap,
            disagreement_y: disagreement_rows(state.y()).sum_sq,
            disagreement_x: info.disagreement_x,
            max_delay: info.delays.iter().copied().max().unwrap_or(0),
            step_norm: info.step_norm,
            stale_regime: info.t as f64 >= regime_start,
            wall_clock: None,
        });
    }
    let state = solver.into_state();
    let final_z = state.z();
    Ok(RunTrace { records, delays, f_star, final_x: state.x, final_y: state.y, final_z })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub x_star: DVector<f64>,
    pub f_star: f64,
    pub iterations: usize,
    pub gradient_map_norm: f64,
    pub converged: bool,
}

/// Default gradient-map tolerance of the reference solver.
pub const REFERENCE_TOL: f64 = 1e-10;

/// Projected accelerated gradient on `Σ f_i` over `X` with step `1 / Σ L_i`
/// and function-value restarts.
pub fn centralized_reference(problem: &Problem, tol: f64, max_iter: usize) -> ReferenceSolution {
    let radius = problem.radius();
    let lip = problem.total_lipschitz().max(f64::MIN_POSITIVE);
    let n = problem.dim();
    let project = |mut v: DVector<f64>| {
        project_vector(&mut v, radius);
        v
    };
    let gradient_map = |x: &DVector<f64>| {
        let g = problem.gradient(x);
        (x - project(x - &g / lip)).norm() * lip
    };

    let mut x = DVector::zeros(n);
    let mut fx = problem.value(&x);
    let mut best = (x.clone(), fx);
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut gm = gradient_map(&x);
    let mut iterations = 0;
    while gm > tol && iterations < max_iter {
        iterations += 1;
        let mut x_next = project(&y - problem.gradient(&y) / lip);
        let mut f_next = problem.value(&x_next);
        if f_next > fx {
            // restart: drop the momentum and take a plain projected step from x
            momentum = 1.0;
            x_next = project(&x - problem.gradient(&x) / lip);
            f_next = problem.value(&x_next);
            y = x_next.clone();
        } else {
            let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
            y = &x_next + (&x_next - &x) * ((momentum - 1.0) / next_momentum);
            momentum = next_momentum;
        }
        x = x_next;
        fx = f_next;
        if fx <= best.1 {
            best = (x.clone(), fx);
        }
        gm = gradient_map(&x);
    }
    let converged = gm <= tol;
    let (x_star, f_star) = if converged { (x, fx) } else { best };
    let gradient_map_norm = if converged { gm } else { gradient_map(&x_star) };
    ReferenceSolution { x_star, f_star, iterations, gradient_map_norm, converged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DesignMatrix;
    use crate::network::{build_topology, metropolis_mixing, TopologyKind};
    use crate::objectives::{make_objective, Loss};

    fn scalar_quadratic(center: f64, radius: f64) -> Problem {
        let f = make_objective(
            Loss::LeastSquares,
            DesignMatrix::from_dense(&DMatrix::from_element(1, 1, 1.0)),
            DVector::from_element(1, center),
            0.0,
        )
        .unwrap();
        Problem::new(vec![f], radius).unwrap()
    }

    #[test]
    fn step_size_values() {
        let p = StepSizePolicy::new(1.0, 0.01);
        assert_eq!(p.step_size(0), 0.5);
        assert_eq!(p.step_size(10_000), 0.25);
        let mut prev = p.step_size(0);
        for t in (1..=1_000_000).step_by(997) {
            let a = p.step_size(t);
            assert!(a <= prev && a > 0.0);
            prev = a;
        }
    }

    #[test]
    fn projection_examples() {
        let v = DMatrix::from_row_slice(1, 3, &[1.5, -2.0, 0.3]);
        assert_eq!(project_box(&v, 1.0), DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.3]));
        let inside = DMatrix::from_row_slice(2, 2, &[0.1, -0.9, 1.0, 0.0]);
        assert_eq!(project_box(&inside, 1.0), inside);
    }

    #[test]
    fn consensus_average_examples() {
        let v = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(consensus_average(&[v.clone(), v.clone(), v.clone()]), v);
        let u = DVector::from_vec(vec![1.0, 3.0]);
        let w = DVector::from_vec(vec![3.0, -1.0]);
        assert_eq!(consensus_average(&[u, w]), DVector::from_vec(vec![2.0, 1.0]));
    }

    #[test]
    fn scalar_first_step() {
        let problem = scalar_quadratic(0.0, 10.0);
        let mixing = MixingMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0));
        let delay = DelayModel::None;
        let opts = SolverOptions { initial: Some(DVector::from_element(1, 1.0)), ..Default::default() };
        let mut solver = Solver::new(&problem, &mixing, &delay, StepSizePolicy::new(1.0, 0.0), &opts).unwrap();
        solver.step().unwrap();
        assert_eq!(solver.state().x()[0][0], 0.5);
    }

    #[test]
    fn zero_gradients_contract_disagreement() {
        // f_i = 0 everywhere: the iteration is pure averaging
        let topo = build_topology(&TopologyKind::Ring { m: 6 }, 0).unwrap();
        let mixing = metropolis_mixing(&topo, true).unwrap();
        let objs: Vec<_> = (0..6)
            .map(|_| make_objective(Loss::LeastSquares, DesignMatrix::zeros(1, 2), DVector::zeros(1), 0.0).unwrap())
            .collect();
        let problem = Problem::new(objs, 5.0).unwrap();
        let delay = DelayModel::None;
        let mut solver = Solver::new(&problem, &mixing, &delay, StepSizePolicy::new(1.0, 0.1), &SolverOptions::default()).unwrap();
        solver.state.x = (0..6).map(|i| DVector::from_vec(vec![i as f64 * 0.5, -(i as f64)])).collect();
        let mut prev = disagreement_rows(solver.state().x()).frobenius;
        for _ in 0..20 {
            let info = solver.step().unwrap();
            let now = disagreement_rows(solver.state().x()).frobenius;
            assert_eq!(info.disagreement_x, prev);
            assert!(now <= mixing.lambda() * prev + 1e-12);
            prev = now;
        }
    }

    #[test]
    fn reference_clamped_and_interior() {
        let sol = centralized_reference(&scalar_quadratic(2.0, 1.0), REFERENCE_TOL, 10_000);
        assert!(sol.converged);
        assert!((sol.x_star[0] - 1.0).abs() <= 1e-10);
        let sol = centralized_reference(&scalar_quadratic(0.3, 1.0), REFERENCE_TOL, 10_000);
        assert!((sol.x_star[0] - 0.3).abs() <= 1e-10);
    }

    #[test]
    fn reference_flags_non_convergence() {
        let f = make_objective(
            Loss::LeastSquares,
            DesignMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 0.999, 0.999, 1.0])),
            DVector::from_vec(vec![0.3, -0.2]),
            0.0,
        )
        .unwrap();
        let sol = centralized_reference(&Problem::new(vec![f], 1.0).unwrap(), 1e-14, 3);
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 3);
    }

    #[test]
    fn run_rejects_bad_setup() {
        let problem = scalar_quadratic(0.0, 1.0);
        let mixing = MixingMatrix::from_matrix(DMatrix::identity(2, 2));
        let opts = RunOptions { iterations: 3, solver: SolverOptions::default(), record_delays: false };
        let err = run(&problem, &mixing, &DelayModel::None, StepSizePolicy::new(1.0, 0.01), &opts, 0.0).unwrap_err();
        assert!(matches!(err, SolverError::Setup(_)));
    }

    #[test]
    fn single_record_for_one_iteration() {
        let problem = scalar_quadratic(0.5, 1.0);
        let mixing = MixingMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0));
        let opts = RunOptions { iterations: 1, solver: SolverOptions::default(), record_delays: true };
        let trace = run(&problem, &mixing, &DelayModel::None, StepSizePolicy::new(1.0, 0.01), &opts, 0.0).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.delays.as_ref().unwrap().len(), 2);
        // z(1) = x(2)
        assert_eq!(trace.final_z, trace.final_x[0]);
    }
}
