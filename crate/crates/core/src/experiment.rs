//! Config-driven experiments: seed-averaged runs with bound envelopes,
//! parameter sweeps and the wall-clock timing comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{bound_constants, disagreement_envelope, fit_loglog_rate, BoundConstants, BoundInputs};
use crate::config::{BuildError, ConfigError, ExperimentConfig};
use crate::delay::DelayModel;
use crate::io::{csv_string, delays_csv, timing_csv, write_atomic, IoError, TRACE_COLUMNS};
use crate::network::{MixingMatrix, NetworkTopology};
use crate::problem::Problem;
use crate::rng::StreamSeeder;
use crate::solver::{centralized_reference, run, ReferenceSolution, RunOptions, RunTrace, SolverError, SolverOptions, StepSizePolicy};
use crate::timing::{async_timing_run, TimingComparison, TimingOptions};
use crate::tomo::{image_to_csv, TomoProblem};

/// Tolerance of the `f(z(T)) − f* ≥ 0` sign check.
pub const SIGN_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("config has no [{0}] section")]
    MissingSection(&'static str),
}

/// Everything shared by the runs of one experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub topology: NetworkTopology,
    pub mixing: MixingMatrix,
    pub problem: Problem,
    pub tomo: Option<TomoProblem>,
    pub reference: ReferenceSolution,
    pub eta: f64,
    pub policy: StepSizePolicy,
    /// `None` when `λ = 0` (complete-graph averaging), where the constants are undefined
    pub bounds: Option<BoundConstants>,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    config.validate()?;
    let (topology, mixing) = config.build_network().map_err(BuildError::from)?;
    let built = config.build_problem()?;
    let problem = built.problem;
    let reference = centralized_reference(&problem, config.solver.reference_tol, config.solver.reference_max_iter);
    let eta = config.resolve_eta(&problem, &mixing)?;
    let policy = StepSizePolicy::new(problem.max_lipschitz(), eta);
    let bounds = bound_constants(BoundInputs {
        lambda: mixing.lambda(),
        g: problem.gradient_bound(),
        l: problem.max_lipschitz(),
        eta,
        m: problem.node_count(),
        n: problem.dim(),
        radius: problem.radius(),
        b: config.delay.moment_bound(),
        sigma: problem.sigma(),
    })
    .ok();
    Ok(Prepared { config: config.clone(), topology, mixing, problem, tomo: built.tomo, reference, eta, policy, bounds })
}

/// Seed of replica `k` of a run with base seed `base`.
pub fn replica_seed(base: u64, k: usize) -> u64 {
    StreamSeeder::new(base).stream("replica", k as u64).next_u64()
}

/// Seed-mean trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanRecord {
    pub t: usize,
    pub alpha: f64,
    pub obj_gap: f64,
    /// mean of `Σ_i ‖y_i − z‖²`
    pub disagreement_y: f64,
    /// mean of `‖(I − J) y‖_F`
    pub disagreement_y_norm: f64,
    pub disagreement_x: f64,
    /// largest delay over nodes and replicas
    pub max_delay: usize,
    pub bound_disagreement: Option<f64>,
    pub bound_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub applicable: bool,
    pub passed: bool,
    pub violations: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub iterations: usize,
    pub seed_count: usize,
    pub nodes: usize,
    pub dim: usize,
    pub lambda: f64,
    pub eta: f64,
    pub lipschitz: f64,
    pub gradient_bound: f64,
    pub f_star: f64,
    pub reference_converged: bool,
    pub initial_gap: f64,
    pub final_gap: f64,
    pub final_disagreement_y: f64,
    pub final_disagreement_x: f64,
    /// log-log slopes over the last decade `[T/10, T]`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_disagreement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_disagreement_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tomo_relative_error: Option<f64>,
    pub verdicts: Vec<Verdict>,
}

impl Summary {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub prepared: Prepared,
    pub traces: Vec<RunTrace>,
    pub mean: Vec<MeanRecord>,
    pub summary: Summary,
}

impl ExperimentResult {
    /// Node mean of the final consensus averages over replicas.
    pub fn mean_final_z(&self) -> DVector<f64> {
        let n = self.prepared.problem.dim();
        self.traces.iter().fold(DVector::zeros(n), |acc, tr| acc + &tr.final_z) / self.traces.len() as f64
    }

    pub fn trace_csv(&self) -> Result<String, IoError> {
        let bounds = self.mean.iter().all(|r| r.bound_disagreement.is_some() && r.bound_gap.is_some());
        let mut header: Vec<&str> = TRACE_COLUMNS.to_vec();
        if bounds {
            header.extend(["bound_disagreement", "bound_gap"]);
        }
        csv_string(
            &header,
            self.mean.iter().map(|r| {
                let mut row = vec![
                    r.t.to_string(),
                    r.alpha.to_string(),
                    r.obj_gap.to_string(),
                    r.disagreement_y.to_string(),
                    r.disagreement_x.to_string(),
                    r.max_delay.to_string(),
                ];
                if bounds {
                    row.push(r.bound_disagreement.unwrap_or_default().to_string());
                    row.push(r.bound_gap.unwrap_or_default().to_string());
                }
                row
            }),
        )
    }
}

/// Runs `run.seed_count` replicas and aggregates them; no files are written.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    let prepared = prepare(config)?;
    execute_prepared(prepared)
}

pub fn execute_prepared(prepared: Prepared) -> Result<ExperimentResult, ExperimentError> {
    let cfg = &prepared.config;
    let n = prepared.problem.dim();
    let initial = (cfg.solver.initial != 0.0).then(|| DVector::from_element(n, cfg.solver.initial));
    let run_one = |k: usize| {
        let options = RunOptions {
            iterations: cfg.solver.iterations,
            solver: SolverOptions { seed: replica_seed(cfg.run.seed, k), initial: initial.clone(), parallel: cfg.solver.parallel },
            record_delays: cfg.run.record_delays,
        };
        run(&prepared.problem, &prepared.mixing, &cfg.delay, prepared.policy, &options, prepared.reference.f_star)
    };
    let traces: Vec<RunTrace> = (0..cfg.run.seed_count).into_par_iter().map(run_one).collect::<Result<_, _>>()?;
    let mean = aggregate(&prepared, &traces);
    let summary = summarize(&prepared, &traces, &mean);
    Ok(ExperimentResult { prepared, traces, mean, summary })
}

fn aggregate(prepared: &Prepared, traces: &[RunTrace]) -> Vec<MeanRecord> {
    let t_max = prepared.config.solver.iterations;
    let k = traces.len() as f64;
    let envelope = prepared.bounds.map(|_| {
        let p = &prepared.problem;
        disagreement_envelope(t_max, p.gradient_bound(), p.node_count(), prepared.mixing.lambda(), prepared.eta, p.max_lipschitz())
    });
    (0..t_max)
        .map(|i| {
            let first = &traces[0].records[i];
            let mean = |f: &dyn Fn(&crate::solver::TraceRecord) -> f64| traces.iter().map(|tr| f(&tr.records[i])).sum::<f64>() / k;
            MeanRecord {
                t: first.t,
                alpha: first.alpha,
                obj_gap: mean(&|r| r.obj_gap),
                disagreement_y: mean(&|r| r.disagreement_y),
                disagreement_y_norm: mean(&|r| r.disagreement_y.sqrt()),
                disagreement_x: mean(&|r| r.disagreement_x),
                max_delay: traces.iter().map(|tr| tr.records[i].max_delay).max().unwrap_or(0),
                bound_disagreement: envelope.as_ref().map(|e| e[i]),
                bound_gap: prepared.bounds.map(|b| b.consensus_gap(first.t as f64)),
            }
        })
        .collect()
}

fn last_decade_slope(mean: &[MeanRecord], f: impl Fn(&MeanRecord) -> f64) -> Option<f64> {
    let t_max = mean.last()?.t as f64;
    let series: Vec<(f64, f64)> = mean.iter().map(|r| (r.t as f64, f(r))).collect();
    fit_loglog_rate(&series, t_max / 10.0, t_max).ok().map(|fit| fit.slope)
}

fn summarize(prepared: &Prepared, traces: &[RunTrace], mean: &[MeanRecord]) -> Summary {
    let cfg = &prepared.config;
    let p = &prepared.problem;
    let last = mean.last().expect("T >= 1");
    let x0 = DVector::from_element(p.dim(), cfg.solver.initial);
    let mut verdicts = Vec::new();

    // Per-iteration x-disagreement envelope; it holds surely only without gradient noise.
    let deterministic = p.sigma() == 0.0;
    match (&prepared.bounds, deterministic) {
        (Some(_), true) => {
            let mut violations = 0;
            let mut worst: f64 = 0.0;
            for tr in traces {
                for (rec, m) in tr.records.iter().zip(mean) {
                    let bound = m.bound_disagreement.unwrap_or(f64::INFINITY);
                    worst = worst.max(rec.disagreement_x / bound);
                    if rec.disagreement_x > bound {
                        violations += 1;
                    }
                }
            }
            verdicts.push(Verdict {
                name: "disagreement_envelope".into(),
                applicable: true,
                passed: violations == 0,
                violations,
                detail: format!("max ratio disagreement/bound = {worst:.3e}"),
            });
        }
        _ => verdicts.push(Verdict {
            name: "disagreement_envelope".into(),
            applicable: false,
            passed: true,
            violations: 0,
            detail: if deterministic { "lambda = 0: bound constants undefined".into() } else { "sigma > 0: the envelope holds surely only for sigma = 0".into() },
        }),
    }
    match prepared.bounds {
        Some(_) => {
            let violations = mean.iter().filter(|r| r.obj_gap > r.bound_gap.unwrap_or(f64::INFINITY)).count();
            let worst = mean.iter().map(|r| r.obj_gap / r.bound_gap.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
            verdicts.push(Verdict {
                name: "gap_bound".into(),
                applicable: true,
                passed: violations == 0,
                violations,
                detail: format!("max ratio gap/bound = {worst:.3e}"),
            });
        }
        None => verdicts.push(Verdict {
            name: "gap_bound".into(),
            applicable: false,
            passed: true,
            violations: 0,
            detail: "lambda = 0: bound constants undefined".into(),
        }),
    }
    let violations = mean.iter().filter(|r| r.obj_gap < -SIGN_TOL).count();
    let lowest = mean.iter().map(|r| r.obj_gap).fold(f64::INFINITY, f64::min);
    verdicts.push(Verdict {
        name: "gap_sign".into(),
        applicable: true,
        passed: violations == 0,
        violations,
        detail: format!("min mean gap = {lowest:e}"),
    });

    let tomo_relative_error = prepared.tomo.as_ref().map(|tp| {
        let z = traces.iter().fold(DVector::zeros(p.dim()), |acc, tr| acc + &tr.final_z) / traces.len() as f64;
        tp.relative_error(&z)
    });

    Summary {
        iterations: cfg.solver.iterations,
        seed_count: traces.len(),
        nodes: p.node_count(),
        dim: p.dim(),
        lambda: prepared.mixing.lambda(),
        eta: prepared.eta,
        lipschitz: p.max_lipschitz(),
        gradient_bound: p.gradient_bound(),
        f_star: prepared.reference.f_star,
        reference_converged: prepared.reference.converged,
        initial_gap: p.value(&x0) - prepared.reference.f_star,
        final_gap: last.obj_gap,
        final_disagreement_y: last.disagreement_y,
        final_disagreement_x: last.disagreement_x,
        slope_gap: last_decade_slope(mean, |r| r.obj_gap),
        slope_disagreement: last_decade_slope(mean, |r| r.disagreement_y_norm),
        slope_disagreement_x: last_decade_slope(mean, |r| r.disagreement_x),
        tomo_relative_error,
        verdicts,
    }
}

/// Gnuplot script for `trace.csv` in the same directory.
pub fn gnuplot_script(with_bounds: bool) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset key autotitle columnhead\nset logscale xy\nset xlabel 'T'\nset terminal pngcairo size 1200,450\nset output 'trace.png'\nset multiplot layout 1,2\n",
    );
    if with_bounds {
        s.push_str("plot 'trace.csv' using 1:3 with lines title 'f(z(T)) - f*', '' using 1:8 with lines dt 2 title 'bound'\n");
        s.push_str("plot 'trace.csv' using 1:4 with lines title 'sum_i |y_i - z|^2', '' using 1:5 with lines title '|(I-J)x|', '' using 1:7 with lines dt 2 title 'x envelope'\n");
    } else {
        s.push_str("plot 'trace.csv' using 1:3 with lines title 'f(z(T)) - f*'\n");
        s.push_str("plot 'trace.csv' using 1:4 with lines title 'sum_i |y_i - z|^2', '' using 1:5 with lines title '|(I-J)x|'\n");
    }
    s.push_str("unset multiplot\n");
    s
}

/// Writes trace, summary and optional extras into `dir`; returns the written paths.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut written = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<(), ExperimentError> {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
        Ok(())
    };
    let trace = result.trace_csv()?;
    put("trace.csv", &trace)?;
    put("summary.toml", &result.summary.to_toml())?;
    let cfg = &result.prepared.config;
    if cfg.run.gnuplot {
        put("plot.gp", &gnuplot_script(result.mean.iter().all(|r| r.bound_gap.is_some())))?;
    }
    if cfg.run.record_delays {
        if let Some(d) = result.traces[0].delays.as_ref() {
            put("delays.csv", &delays_csv(d)?)?;
        }
    }
    if let Some(tp) = &result.prepared.tomo {
        put("image.csv", &image_to_csv(&tp.dims, &result.mean_final_z()))?;
        put("image_true.csv", &image_to_csv(&tp.dims, &tp.x_true))?;
    }
    Ok(written)
}

pub fn run_experiment(config: &ExperimentConfig, dir: &Path) -> Result<ExperimentResult, ExperimentError> {
    let result = execute(config)?;
    write_outputs(&result, dir)?;
    Ok(result)
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub index: usize,
    pub delay_max: Option<usize>,
    pub sigma: f64,
    pub nodes: usize,
    pub config: ExperimentConfig,
}

fn delay_with_max(base: &DelayModel, b: usize) -> DelayModel {
    match (base, b) {
        (DelayModel::TruncatedGeometric { p, .. }, b) => DelayModel::TruncatedGeometric { p: *p, max: b },
        (_, 0) => DelayModel::None,
        (DelayModel::Fixed { .. }, b) => DelayModel::Fixed { tau: b },
        (_, b) => DelayModel::Uniform { max: b },
    }
}

/// Cartesian grid over delay bound, noise level and node count; cell `k` uses seed `base + k`.
pub fn sweep_cells(config: &ExperimentConfig) -> Result<Vec<SweepCell>, ExperimentError> {
    let grid = config.sweep.clone().ok_or(ExperimentError::MissingSection("sweep"))?;
    let delays: Vec<Option<usize>> = if grid.delay_max.is_empty() { vec![None] } else { grid.delay_max.iter().map(|&b| Some(b)).collect() };
    let sigmas = if grid.sigma.is_empty() { vec![config.solver.sigma] } else { grid.sigma.clone() };
    let nodes = if grid.nodes.is_empty() { vec![config.node_count()] } else { grid.nodes.clone() };
    let mut cells = Vec::new();
    for &b in &delays {
        for &sigma in &sigmas {
            for &m in &nodes {
                let mut c = config.clone();
                c.sweep = None;
                if let Some(b) = b {
                    c.delay = delay_with_max(&config.delay, b);
                }
                c.solver.sigma = sigma;
                c.network.topology = config
                    .network
                    .topology
                    .with_node_count(m)
                    .map_err(|e| ConfigError::Field { field: "sweep.nodes".into(), msg: e.to_string() })?;
                let index = cells.len();
                c.run.seed = config.run.seed.wrapping_add(index as u64);
                cells.push(SweepCell { index, delay_max: b, sigma, nodes: m, config: c });
            }
        }
    }
    Ok(cells)
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub cell: SweepCell,
    pub result: Result<ExperimentResult, ExperimentError>,
}

/// Runs every cell (in parallel) without writing files.
pub fn sweep(config: &ExperimentConfig) -> Result<Vec<SweepOutcome>, ExperimentError> {
    let cells = sweep_cells(config)?;
    Ok(cells.into_par_iter().map(|cell| SweepOutcome { result: execute(&cell.config), cell }).collect())
}

/// Comparison table aligned on `t`: `obj_gap` and `disagreement_y` per successful cell.
pub fn comparison_csv(outcomes: &[SweepOutcome]) -> Result<String, IoError> {
    let ok: Vec<(usize, &ExperimentResult)> = outcomes.iter().filter_map(|o| o.result.as_ref().ok().map(|r| (o.cell.index, r))).collect();
    let mut header = vec!["t".to_string()];
    for (i, _) in &ok {
        header.push(format!("obj_gap_cell{i}"));
        header.push(format!("disagreement_y_cell{i}"));
    }
    let rows = ok.iter().map(|(_, r)| r.mean.len()).max().unwrap_or(0);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_string(
        &header,
        (0..rows)
            .filter(|&k| ok.iter().all(|(_, r)| k < r.mean.len()))
            .map(|k| {
                let mut row = vec![(k + 1).to_string()];
                for (_, r) in &ok {
                    row.push(r.mean[k].obj_gap.to_string());
                    row.push(r.mean[k].disagreement_y.to_string());
                }
                row
            }),
    )
}

/// Per-cell status table: parameters, outcome and headline numbers.
pub fn sweep_summary_csv(outcomes: &[SweepOutcome]) -> Result<String, IoError> {
    csv_string(
        &["cell", "delay_max", "sigma", "nodes", "status", "final_gap", "final_disagreement_y", "message"],
        outcomes.iter().map(|o| {
            let c = &o.cell;
            let b = c.delay_max.map_or_else(|| c.config.delay.max_delay().to_string(), |b| b.to_string());
            match &o.result {
                Ok(r) => vec![
                    c.index.to_string(),
                    b,
                    c.sigma.to_string(),
                    c.nodes.to_string(),
                    "ok".into(),
                    r.summary.final_gap.to_string(),
                    r.summary.final_disagreement_y.to_string(),
                    String::new(),
                ],
                Err(e) => vec![c.index.to_string(), b, c.sigma.to_string(), c.nodes.to_string(), "failed".into(), String::new(), String::new(), e.to_string()],
            }
        }),
    )
}

/// Runs the sweep and writes `cell-<k>/` outputs, `comparison.csv` and `sweep.csv`.
pub fn run_sweep(config: &ExperimentConfig, dir: &Path) -> Result<Vec<SweepOutcome>, ExperimentError> {
    let mut outcomes = sweep(config)?;
    for o in &mut outcomes {
        if let Ok(r) = &o.result {
            if let Err(e) = write_outputs(r, &dir.join(format!("cell-{}", o.cell.index))) {
                o.result = Err(e);
            }
        }
    }
    write_atomic(&dir.join("comparison.csv"), comparison_csv(&outcomes)?.as_bytes())?;
    write_atomic(&dir.join("sweep.csv"), sweep_summary_csv(&outcomes)?.as_bytes())?;
    Ok(outcomes)
}

#[derive(Debug, Clone)]
pub struct TimingReport {
    pub comparison: TimingComparison,
    pub threshold: f64,
    pub sync_time: Option<f64>,
    pub async_time: Option<f64>,
    pub eta: f64,
}

impl TimingReport {
    pub fn render(&self) -> String {
        let fmt = |t: Option<f64>| t.map_or_else(|| "not reached".to_string(), |v| v.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "rows {}", self.comparison.rows.len());
        let _ = writeln!(s, "threshold {}", self.threshold);
        let _ = writeln!(s, "sync time-to-threshold {}", fmt(self.sync_time));
        let _ = writeln!(s, "async time-to-threshold {}", fmt(self.async_time));
        s
    }
}

/// Synchronous vs asynchronous wall-clock comparison from the `[timing]` section.
pub fn timing_compare(config: &ExperimentConfig) -> Result<TimingReport, ExperimentError> {
    let timing = config.timing.clone().ok_or(ExperimentError::MissingSection("timing"))?;
    let prepared = prepare(config)?;
    let options = TimingOptions { compute: timing.compute, comm_interval: timing.comm_interval, budget: timing.budget, seed: config.run.seed };
    let comparison = async_timing_run(&prepared.problem, &prepared.mixing, prepared.policy, &options, prepared.reference.f_star)?;
    let threshold = timing.threshold.unwrap_or_else(|| {
        // a tenth of the initial gap unless configured
        let x0 = DVector::zeros(prepared.problem.dim());
        0.1 * (prepared.problem.value(&x0) - prepared.reference.f_star)
    });
    Ok(TimingReport {
        sync_time: comparison.time_to_gap(threshold, false),
        async_time: comparison.time_to_gap(threshold, true),
        comparison,
        threshold,
        eta: prepared.eta,
    })
}

pub fn run_timing(config: &ExperimentConfig, dir: &Path) -> Result<TimingReport, ExperimentError> {
    let report = timing_compare(config)?;
    write_atomic(&dir.join("timing.csv"), timing_csv(&report.comparison)?.as_bytes())?;
    Ok(report)
}
