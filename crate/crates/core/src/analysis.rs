//! Numerical evaluation of the convergence bounds and empirical rate fitting.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("lambda must lie in (0, 1), got {0}")]
    Lambda(f64),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("value {value} at t = {t} is not positive; cannot take logs")]
    NonPositive { t: f64, value: f64 },
    #[error("need at least {needed} points in the fit window, found {found}")]
    TooFewPoints { needed: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disagreement {
    /// `‖(I − J) v‖_F`
    pub frobenius: f64,
    /// `Σ_i ‖v_i − v̄‖²`
    pub sum_sq: f64,
}

pub fn disagreement_rows(rows: &[DVector<f64>]) -> Disagreement {
    let m = rows.len() as f64;
    let mut mean = DVector::zeros(rows[0].len());
    for r in rows {
        mean += r;
    }
    mean /= m;
    let sum_sq: f64 = rows.iter().map(|r| (r - &mean).norm_squared()).sum();
    Disagreement { frobenius: sum_sq.sqrt(), sum_sq }
}

/// Disagreement of an `m × n` matrix whose rows are node copies.
pub fn disagreement_metrics(v: &DMatrix<f64>) -> Disagreement {
    let rows: Vec<DVector<f64>> = v.row_iter().map(|r| r.transpose()).collect();
    disagreement_rows(&rows)
}

fn check_lambda(lambda: f64) -> Result<(), AnalysisError> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(AnalysisError::Lambda(lambda))
    }
}

/// `α(s) = 1 / (c1 + c2 √s)`; the `s = 0` term is taken as zero when `c1 = 0`.
fn alpha(c1: f64, c2: f64, s: usize) -> f64 {
    if s == 0 && c1 == 0.0 {
        0.0
    } else {
        1.0 / (c1 + c2 * (s as f64).sqrt())
    }
}

/// `S(t) = Σ_{s=0}^{t-1} α(s) λ^{t-s-1}` for `t = 1..=t_max`, via `S(t+1) = λ S(t) + α(t)`.
/// Accepts `λ ∈ [0, 1)`.
pub fn weighted_sum_series(c1: f64, c2: f64, lambda: f64, t_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t_max);
    let mut acc = 0.0;
    for s in 0..t_max {
        acc = lambda * acc + alpha(c1, c2, s);
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSum {
    pub exact: f64,
    pub bound: f64,
    /// set when `c1 = 0` and the undefined `s = 0` term was dropped
    pub dropped_first_term: bool,
}

/// Exact geometric weighted step-size sum and its closed-form bound
/// `√π λ⁻² / (c2 √t log λ⁻¹)`.
pub fn geometric_weighted_sum(c1: f64, c2: f64, lambda: f64, t: usize) -> Result<WeightedSum, AnalysisError> {
    check_lambda(lambda)?;
    if !(c2 > 0.0) || c1 < 0.0 || t == 0 {
        return Err(AnalysisError::Argument(format!("need c1 >= 0, c2 > 0, t >= 1 (c1={c1}, c2={c2}, t={t})")));
    }
    let exact = *weighted_sum_series(c1, c2, lambda, t).last().unwrap();
    Ok(WeightedSum { exact, bound: closed_form_sum(c2, lambda, t as f64), dropped_first_term: c1 == 0.0 })
}

fn closed_form_sum(c2: f64, lambda: f64, t: f64) -> f64 {
    PI.sqrt() / (lambda * lambda * c2 * t.sqrt() * (1.0 / lambda).ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisagreementBound {
    /// `√m G Σ_{s<t} α(s) λ^{t-s-1}`
    pub exact_form: f64,
    /// `√(πm) G λ⁻² / (η √t log λ⁻¹)`
    pub closed_form: f64,
    /// running-average form `2√(πm) G λ⁻² / (η √t log λ⁻¹)`
    pub average_form: f64,
}

pub fn disagreement_bound(t: usize, g: f64, m: usize, lambda: f64, eta: f64, l: f64) -> Result<DisagreementBound, AnalysisError> {
    let ws = geometric_weighted_sum(2.0 * l, 2.0 * eta, lambda, t)?;
    let root_m = (m as f64).sqrt();
    let closed_form = root_m * g * ws.bound;
    Ok(DisagreementBound { exact_form: root_m * g * ws.exact, closed_form, average_form: 2.0 * closed_form })
}

/// Exact-form disagreement envelope `√m G S(t)` for `t = 1..=t_max`, valid for `λ ∈ [0, 1)`.
pub fn disagreement_envelope(t_max: usize, g: f64, m: usize, lambda: f64, eta: f64, l: f64) -> Vec<f64> {
    let root_m = (m as f64).sqrt();
    weighted_sum_series(2.0 * l, 2.0 * eta, lambda, t_max).into_iter().map(|s| root_m * g * s).collect()
}

/// Inputs to the bound constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub lambda: f64,
    pub g: f64,
    pub l: f64,
    pub eta: f64,
    pub m: usize,
    pub n: usize,
    pub radius: f64,
    /// `B` with `E[τ²] ≤ B²`
    pub b: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub inputs: BoundInputs,
    /// consecutive-iterate constant `C`
    pub c: f64,
    /// running-average gap constant `K`
    pub k: f64,
    /// `2√(mn) R`
    pub diameter: f64,
}

pub fn bound_constants(inputs: BoundInputs) -> Result<BoundConstants, AnalysisError> {
    check_lambda(inputs.lambda)?;
    if !(inputs.eta > 0.0) {
        return Err(AnalysisError::Argument(format!("eta must be positive, got {}", inputs.eta)));
    }
    let BoundInputs { lambda, g, l, eta, m, n, radius, b, sigma } = inputs;
    let m_f = m as f64;
    let c = m_f.sqrt() * g / eta * (PI.sqrt() / (lambda * lambda * (1.0 / lambda).ln()) + 0.5);
    let diameter = 2.0 * (m_f * n as f64).sqrt() * radius;
    let k = eta * diameter * diameter + 4.0 * (2.0 * m_f * l).sqrt() * diameter * c * b + 4.0 * m_f * sigma * sigma / eta;
    Ok(BoundConstants { inputs, c, k, diameter })
}

impl BoundConstants {
    fn root_m(&self) -> f64 {
        (self.inputs.m as f64).sqrt()
    }

    /// `E‖x(t+1) − x(t)‖ ≤ C / √t`
    pub fn consecutive_difference(&self, t: f64) -> f64 {
        self.c / t.sqrt()
    }

    /// `E‖x(t) − x(t − τ(t))‖ ≤ C(√(2m) B / √t + 4 m B² / t)`
    pub fn stale_difference(&self, t: f64) -> f64 {
        let m = self.inputs.m as f64;
        let b = self.inputs.b;
        self.c * ((2.0 * m).sqrt() * b / t.sqrt() + 4.0 * m * b * b / t)
    }

    /// Threshold `8 m B²` beyond which the stale difference is at most `2√(2m) C B / √t`.
    pub fn stale_regime_start(&self) -> f64 {
        8.0 * self.inputs.m as f64 * self.inputs.b * self.inputs.b
    }

    /// `E f(y(T)) − f* ≤ L D²/T + K/√T`
    pub fn running_average_gap(&self, t: f64) -> f64 {
        self.inputs.l * self.diameter * self.diameter / t + self.k / t.sqrt()
    }

    /// `E f(z(T)) − f* ≤ (L D² + 2√m L C²)/T + (K + 2√m C G)/√T`
    pub fn consensus_gap(&self, t: f64) -> f64 {
        let BoundInputs { l, g, .. } = self.inputs;
        let first = l * self.diameter * self.diameter + 2.0 * self.root_m() * l * self.c * self.c;
        let second = self.k + 2.0 * self.root_m() * self.c * g;
        first / t + second / t.sqrt()
    }

    /// Coefficient of `1/√T` in [`Self::consensus_gap`].
    pub fn consensus_gap_rate_constant(&self) -> f64 {
        self.k + 2.0 * self.root_m() * self.c * self.inputs.g
    }

    /// Closed-form x-disagreement bound at `t`.
    pub fn disagreement_closed_form(&self, t: f64) -> f64 {
        let BoundInputs { lambda, g, eta, .. } = self.inputs;
        self.root_m() * g * PI.sqrt() / (lambda * lambda * eta * t.sqrt() * (1.0 / lambda).ln())
    }

    /// Running-average disagreement bound at `T`.
    pub fn average_disagreement(&self, t: f64) -> f64 {
        2.0 * self.disagreement_closed_form(t)
    }
}

/// η minimizing `K(η) + 2√m C(η) G` over a logarithmic grid on `[lo, hi]`.
pub fn optimal_eta(inputs: BoundInputs, lo: f64, hi: f64, points: usize) -> Result<f64, AnalysisError> {
    if !(lo > 0.0 && hi > lo && points >= 2) {
        return Err(AnalysisError::Argument("eta grid needs 0 < lo < hi and at least two points".into()));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut best = (f64::INFINITY, lo);
    for i in 0..points {
        let eta = (llo + (lhi - llo) * i as f64 / (points - 1) as f64).exp();
        let value = bound_constants(BoundInputs { eta, ..inputs })?.consensus_gap_rate_constant();
        if value < best.0 {
            best = (value, eta);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Minimum number of samples for [`fit_loglog_rate`].
pub const MIN_FIT_POINTS: usize = 10;

/// Least-squares line through `(log t, log value)` for samples with `t ∈ [lo, hi]`.
pub fn fit_loglog_rate(series: &[(f64, f64)], lo: f64, hi: f64) -> Result<LogLogFit, AnalysisError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(t, v) in series.iter().filter(|(t, _)| *t >= lo && *t <= hi) {
        if !(v > 0.0) || !(t > 0.0) {
            return Err(AnalysisError::NonPositive { t, value: v });
        }
        xs.push(t.ln());
        ys.push(v.ln());
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(AnalysisError::TooFewPoints { needed: MIN_FIT_POINTS, found: xs.len() });
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(LogLogFit { slope, intercept: my - slope * mx, points: xs.len() })
}
