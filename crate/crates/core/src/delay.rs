//! Gradient staleness: delay distributions and the per-node history buffer.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DelayError {
    #[error("invalid delay model: {0}")]
    Invalid(String),
    #[error("stale buffer underrun: node {node} asked for iteration {requested} at iteration {current} (depth {depth})")]
    Underrun { node: usize, requested: usize, current: usize, depth: usize },
}

/// Distribution of `τ_i(t)`, shared by all nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DelayModel {
    None,
    Fixed { tau: usize },
    /// Uniform on `{1, …, max}`.
    Uniform { max: usize },
    /// `P(τ = k) ∝ p (1 − p)^k` for `k = 0, …, max`.
    TruncatedGeometric { p: f64, max: usize },
}

impl DelayModel {
    pub fn validate(&self) -> Result<(), DelayError> {
        match *self {
            DelayModel::Uniform { max: 0 } => Err(DelayError::Invalid("uniform delay needs max >= 1".into())),
            DelayModel::TruncatedGeometric { p, .. } if !(p > 0.0 && p <= 1.0) => {
                Err(DelayError::Invalid(format!("geometric parameter p must lie in (0, 1], got {p}")))
            }
            _ => Ok(()),
        }
    }

    /// Largest delay the model can produce.
    pub fn max_delay(&self) -> usize {
        match *self {
            DelayModel::None => 0,
            DelayModel::Fixed { tau } => tau,
            DelayModel::Uniform { max } | DelayModel::TruncatedGeometric { max, .. } => max,
        }
    }

    fn geometric_weights(p: f64, max: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..=max).map(|k| p * (1.0 - p).powi(k as i32)).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    /// Exact `E[τ²]` of the unclamped distribution.
    pub fn second_moment(&self) -> f64 {
        match *self {
            DelayModel::None => 0.0,
            DelayModel::Fixed { tau } => (tau * tau) as f64,
            DelayModel::Uniform { max } => {
                let b = max as f64;
                (b + 1.0) * (2.0 * b + 1.0) / 6.0
            }
            DelayModel::TruncatedGeometric { p, max } => Self::geometric_weights(p, max)
                .iter()
                .enumerate()
                .map(|(k, w)| w * (k * k) as f64)
                .sum(),
        }
    }

    /// `B = sqrt(E[τ²])`.
    pub fn moment_bound(&self) -> f64 {
        self.second_moment().sqrt()
    }

    /// Draws `τ_i(t)`, clamped to `t` so that `t − τ ≥ 0`.
    pub fn sample<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> usize {
        let raw = match *self {
            DelayModel::None => 0,
            DelayModel::Fixed { tau } => tau,
            DelayModel::Uniform { max } => rng.random_range(1..=max),
            DelayModel::TruncatedGeometric { p, max } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let weights = Self::geometric_weights(p, max);
                weights
                    .iter()
                    .position(|w| {
                        acc += w;
                        u < acc
                    })
                    .unwrap_or(max)
            }
        };
        raw.min(t)
    }
}

#[derive(Debug, Clone)]
struct Slot {
    iteration: usize,
    iterate: DVector<f64>,
    gradient: DVector<f64>,
}

/// Ring buffer of the last `depth` iterates and stochastic gradients of every node.
#[derive(Debug, Clone)]
pub struct StaleBuffer {
    depth: usize,
    slots: Vec<Vec<Option<Slot>>>,
    latest: Option<usize>,
}

impl StaleBuffer {
    /// Buffer deep enough for `max_delay` (`depth = max_delay + 1`).
    pub fn new(nodes: usize, max_delay: usize) -> Self {
        let depth = max_delay + 1;
        Self { depth, slots: vec![vec![None; depth]; nodes], latest: None }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Stores node `i`'s iterate and gradient evaluated at iteration `s`.
    pub fn push(&mut self, node: usize, s: usize, iterate: DVector<f64>, gradient: DVector<f64>) {
        self.slots[node][s % self.depth] = Some(Slot { iteration: s, iterate, gradient });
        self.latest = Some(self.latest.map_or(s, |l| l.max(s)));
    }

    /// Iterations currently held for `node`, oldest first.
    pub fn held(&self, node: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.slots[node].iter().flatten().map(|s| s.iteration).collect();
        v.sort_unstable();
        v
    }

    fn slot(&self, node: usize, s: usize) -> Result<&Slot, DelayError> {
        let current = self.latest.unwrap_or(0);
        match &self.slots[node][s % self.depth] {
            Some(slot) if slot.iteration == s => Ok(slot),
            _ => Err(DelayError::Underrun { node, requested: s, current, depth: self.depth }),
        }
    }

    pub fn gradient(&self, node: usize, s: usize) -> Result<&DVector<f64>, DelayError> {
        self.slot(node, s).map(|s| &s.gradient)
    }

    pub fn iterate(&self, node: usize, s: usize) -> Result<&DVector<f64>, DelayError> {
        self.slot(node, s).map(|s| &s.iterate)
    }
}
