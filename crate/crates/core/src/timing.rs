//! Virtual wall-clock comparison of a barrier-synchronized run against the
//! asynchronous delayed-gradient run.
//!
//! Both runs draw per-node compute times from the same named substreams.
//! The synchronous run completes an iteration once the slowest node has
//! finished (`τ = 0`). In the asynchronous run nodes mix at every
//! communication tick `kΔ` using whatever gradient they completed last;
//! the staleness this induces is the delay `τ_i(t)`.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::delay::DelayModel;
use crate::network::MixingMatrix;
use crate::problem::Problem;
use crate::rng::{StreamRng, StreamSeeder};
use crate::solver::{consensus_average, project_vector, Solver, SolverError, SolverOptions, StepSizePolicy};

/// Per-gradient compute-time distribution (any time unit; milliseconds in the shipped configs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ComputeTime {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Uniform on `[lo, hi]`, except node `node` whose draws are scaled by `factor`.
    Straggler { lo: f64, hi: f64, node: usize, factor: f64 },
}

impl ComputeTime {
    pub fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            ComputeTime::Constant { value } => value > 0.0 && value.is_finite(),
            ComputeTime::Uniform { lo, hi } => lo > 0.0 && hi >= lo && hi.is_finite(),
            ComputeTime::Straggler { lo, hi, factor, .. } => lo > 0.0 && hi >= lo && hi.is_finite() && factor > 0.0 && factor.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("compute-time support must be positive and finite: {self:?}"))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, node: usize, rng: &mut R) -> f64 {
        let uniform = |lo: f64, hi: f64, rng: &mut R| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        match *self {
            ComputeTime::Constant { value } => value,
            ComputeTime::Uniform { lo, hi } => uniform(lo, hi, rng),
            ComputeTime::Straggler { lo, hi, node: slow, factor } => {
                let d = uniform(lo, hi, rng);
                if node == slow {
                    d * factor
                } else {
                    d
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingOptions {
    pub compute: ComputeTime,
    /// communication period `Δ` of the asynchronous run
    pub comm_interval: f64,
    /// total virtual wall-clock time
    pub budget: f64,
    pub seed: u64,
}

impl TimingOptions {
    /// Number of communication ticks (and output rows): `round(budget / Δ)`.
    pub fn ticks(&self) -> usize {
        (self.budget / self.comm_interval).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub wall_clock: f64,
    pub sync_gap: f64,
    pub async_gap: f64,
    /// iterations completed by each run at this time
    pub sync_iterations: usize,
    pub async_iterations: usize,
    /// largest `τ_i(t)` used by the asynchronous update at this tick
    pub async_max_delay: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingComparison {
    pub rows: Vec<TimingRow>,
    /// completion time of each synchronous iteration
    pub sync_timestamps: Vec<f64>,
}

impl TimingComparison {
    /// First wall-clock time at which the selected gap is at most `threshold`.
    pub fn time_to_gap(&self, threshold: f64, asynchronous: bool) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| (if asynchronous { r.async_gap } else { r.sync_gap }) <= threshold)
            .map(|r| r.wall_clock)
    }
}

/// Running average of `x(t+1)`, `t ≥ 1`, fed one iterate at a time.
struct Averager {
    y: Vec<DVector<f64>>,
    count: usize,
    seen: usize,
}

impl Averager {
    fn new(m: usize, n: usize) -> Self {
        Self { y: vec![DVector::zeros(n); m], count: 0, seen: 0 }
    }

    /// Feeds `x(k)` for `k = 1, 2, …`; `x(1)` is not averaged.
    fn push(&mut self, x: &[DVector<f64>]) {
        self.seen += 1;
        if self.seen < 2 {
            return;
        }
        self.count += 1;
        let w = 1.0 / self.count as f64;
        for (y, xi) in self.y.iter_mut().zip(x) {
            *y = &*y * (1.0 - w) + xi * w;
        }
    }

    /// `z` when available, otherwise the node mean of the latest iterate.
    fn point(&self, latest: &[DVector<f64>]) -> DVector<f64> {
        if self.count == 0 {
            consensus_average(latest)
        } else {
            consensus_average(&self.y)
        }
    }
}

struct Pending {
    iteration: usize,
    gradient: DVector<f64>,
    finish: f64,
}

pub fn async_timing_run(
    problem: &Problem,
    mixing: &MixingMatrix,
    policy: StepSizePolicy,
    options: &TimingOptions,
    f_star: f64,
) -> Result<TimingComparison, SolverError> {
    options.compute.validate().map_err(SolverError::Setup)?;
    if !(options.comm_interval > 0.0 && options.budget >= options.comm_interval) {
        return Err(SolverError::Setup("need comm_interval > 0 and budget >= comm_interval".into()));
    }
    let m = problem.node_count();
    let n = problem.dim();
    let ticks = options.ticks();
    let dt = options.comm_interval;
    let seeder = StreamSeeder::new(options.seed);
    let compute_streams = || -> Vec<StreamRng> { (0..m).map(|i| seeder.stream("compute", i as u64)).collect() };

    // Synchronous baseline: one barrier iteration per max-over-nodes compute time.
    let sync_gaps_at = {
        let delay = DelayModel::None;
        let mut solver = Solver::new(problem, mixing, &delay, policy, &SolverOptions { seed: options.seed, initial: None, parallel: false })?;
        let mut rngs = compute_streams();
        let mut averager = Averager::new(m, n);
        let mut clock = 0.0;
        let mut timestamps = Vec::new();
        let mut gaps = vec![problem.value(&consensus_average(solver.state().x())) - f_star];
        loop {
            let barrier = (0..m).map(|i| options.compute.sample(i, &mut rngs[i])).fold(0.0, f64::max);
            if clock + barrier > options.budget {
                break;
            }
            clock += barrier;
            solver.step()?;
            averager.push(solver.state().x());
            timestamps.push(clock);
            gaps.push(problem.value(&averager.point(solver.state().x())) - f_star);
        }
        (timestamps, gaps)
    };
    let (sync_timestamps, sync_gaps) = sync_gaps_at;

    // Asynchronous run.
    let objectives = problem.objectives();
    let mut compute = compute_streams();
    let mut noise: Vec<StreamRng> = (0..m).map(|i| seeder.stream("noise", i as u64)).collect();
    let radius = problem.radius();
    let mut x: Vec<DVector<f64>> = vec![DVector::zeros(n); m];
    let mut latest: Vec<Option<(usize, DVector<f64>)>> = vec![None; m];
    let mut pending: Vec<Option<Pending>> = (0..m)
        .map(|i| {
            let g = objectives[i].stochastic_gradient_unchecked(&x[i], &mut noise[i]).value;
            Some(Pending { iteration: 0, gradient: g, finish: options.compute.sample(i, &mut compute[i]) })
        })
        .collect();
    let mut averager = Averager::new(m, n);
    let mut rows = Vec::with_capacity(ticks);
    let mut sync_done = 0;

    for k in 1..=ticks {
        let now = k as f64 * dt;
        let t = k - 1;
        let mut deferred = Vec::new();
        for i in 0..m {
            while let Some(p) = pending[i].take() {
                if p.finish > now {
                    pending[i] = Some(p);
                    break;
                }
                let finished_at = p.finish;
                let s = p.iteration;
                latest[i] = Some((s, p.gradient));
                if s < t {
                    // x(t) exists already: restart on it immediately
                    let g = objectives[i].stochastic_gradient_unchecked(&x[i], &mut noise[i]).value;
                    let finish = finished_at + options.compute.sample(i, &mut compute[i]);
                    pending[i] = Some(Pending { iteration: t, gradient: g, finish });
                } else {
                    deferred.push(i);
                }
            }
        }

        let alpha = policy.step_size(t);
        let mut max_delay = 0;
        let mut next = Vec::with_capacity(m);
        for (i, last) in latest.iter().enumerate() {
            let mut v = DVector::zeros(n);
            for &(j, w) in mixing.row(i) {
                v.axpy(w, &x[j], 1.0);
            }
            match last {
                Some((s, g)) => {
                    v.axpy(-alpha, g, 1.0);
                    max_delay = max_delay.max(t - s);
                }
                None => max_delay = max_delay.max(t),
            }
            project_vector(&mut v, radius);
            if v.iter().any(|e| !e.is_finite()) {
                return Err(SolverError::Divergence { t });
            }
            next.push(v);
        }
        x = next;
        averager.push(&x);

        for i in deferred {
            let g = objectives[i].stochastic_gradient_unchecked(&x[i], &mut noise[i]).value;
            let finish = now + options.compute.sample(i, &mut compute[i]);
            pending[i] = Some(Pending { iteration: k, gradient: g, finish });
        }

        while sync_done < sync_timestamps.len() && sync_timestamps[sync_done] <= now + 1e-12 * now {
            sync_done += 1;
        }
        rows.push(TimingRow {
            wall_clock: now,
            sync_gap: sync_gaps[sync_done],
            async_gap: problem.value(&averager.point(&x)) - f_star,
            sync_iterations: sync_done,
            async_iterations: k,
            async_max_delay: max_delay,
        });
    }
    Ok(TimingComparison { rows, sync_timestamps })
}
