//! The global problem `min_{x ∈ X} Σ_i f_i(x)` and the synthetic data generators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DesignMatrix;
use crate::objectives::{make_objective, BoundParameters, LocalObjective, Loss, ObjectiveError};

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("problem needs at least one node objective")]
    Empty,
    #[error("node {node} has dimension {got}, expected {expected}")]
    Dimension { node: usize, got: usize, expected: usize },
    #[error("box radius must be positive, got {0}")]
    Radius(f64),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Node objectives plus the box `X = {‖x‖∞ ≤ R}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    objectives: Vec<LocalObjective>,
    radius: f64,
}

impl Problem {
    pub fn new(objectives: Vec<LocalObjective>, radius: f64) -> Result<Self, ProblemError> {
        let first = objectives.first().ok_or(ProblemError::Empty)?;
        let n = first.dim();
        if let Some((node, f)) = objectives.iter().enumerate().find(|(_, f)| f.dim() != n) {
            return Err(ProblemError::Dimension { node, got: f.dim(), expected: n });
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ProblemError::Radius(radius));
        }
        Ok(Self { objectives, radius })
    }

    pub fn objectives(&self) -> &[LocalObjective] {
        &self.objectives
    }

    pub fn node_count(&self) -> usize {
        self.objectives.len()
    }

    pub fn dim(&self) -> usize {
        self.objectives[0].dim()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Same data with every node's noise level replaced.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self { objectives: self.objectives.iter().cloned().map(|f| f.with_sigma(sigma)).collect(), radius: self.radius }
    }

    pub fn sigma(&self) -> f64 {
        self.objectives.iter().map(|f| f.sigma()).fold(0.0, f64::max)
    }

    /// `f(x) = Σ_i f_i(x)`
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.objectives.iter().map(|f| f.value_unchecked(x)).sum()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for f in &self.objectives {
            g += f.gradient_unchecked(x);
        }
        g
    }

    /// `L = max_i L_i`
    pub fn max_lipschitz(&self) -> f64 {
        self.objectives.iter().map(|f| f.lipschitz_constant()).fold(0.0, f64::max)
    }

    /// `Σ_i L_i`, a Lipschitz constant of `∇f`.
    pub fn total_lipschitz(&self) -> f64 {
        self.objectives.iter().map(|f| f.lipschitz_constant()).sum()
    }

    /// `max_i sup_X ‖∇f_i‖`
    pub fn exact_gradient_bound(&self) -> f64 {
        self.objectives.iter().map(|f| f.gradient_bound(self.radius)).fold(0.0, f64::max)
    }

    /// `G`, covering both exact and expected stochastic gradient norms.
    pub fn gradient_bound(&self) -> f64 {
        self.objectives.iter().map(|f| f.stochastic_gradient_bound(self.radius)).fold(0.0, f64::max)
    }

    pub fn bound_parameters(&self, delay_moment_bound: f64) -> BoundParameters {
        BoundParameters {
            g: self.gradient_bound(),
            l: self.max_lipschitz(),
            sigma: self.sigma(),
            b: delay_moment_bound,
            radius: self.radius,
        }
    }
}

/// Synthetic regression family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "kebab-case")]
pub enum SyntheticLoss {
    LeastSquares,
    Huber { delta: f64 },
    Logistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub loss: SyntheticLoss,
    pub nodes: usize,
    pub dim: usize,
    pub rows_per_node: usize,
    /// standard deviation of the observation noise in `b_i`
    pub data_noise: f64,
}

impl SyntheticSpec {
    /// The least-squares fixture: 25 nodes, n = 10, five rows per node.
    pub fn least_squares_fixture() -> Self {
        Self { loss: SyntheticLoss::LeastSquares, nodes: 25, dim: 10, rows_per_node: 5, data_noise: 0.001 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub problem: Problem,
    pub x_hat: DVector<f64>,
}

/// Draws `x̂ ~ U[0,1]^n`, Gaussian `A_i` with unit-norm columns and
/// `b_i = A_i x̂ + ε_i` (labels `sign(·)` with `sign(0) = 1` for logistic).
pub fn synthetic_problem<R: Rng + ?Sized>(spec: &SyntheticSpec, sigma: f64, radius: f64, rng: &mut R) -> Result<SyntheticData, ProblemError> {
    let n = spec.dim;
    let x_hat = DVector::from_iterator(n, (0..n).map(|_| rng.random::<f64>()));
    let mut objectives = Vec::with_capacity(spec.nodes);
    for _ in 0..spec.nodes {
        let p = spec.rows_per_node;
        let mut a = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mut col in a.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        let noise = DVector::from_iterator(p, (0..p).map(|_| spec.data_noise * rng.sample::<f64, _>(StandardNormal)));
        let clean = &a * &x_hat + noise;
        let (loss, b) = match spec.loss {
            SyntheticLoss::LeastSquares => (Loss::LeastSquares, clean),
            SyntheticLoss::Huber { delta } => (Loss::Huber { delta }, clean),
            SyntheticLoss::Logistic => (Loss::Logistic, clean.map(|v| if v >= 0.0 { 1.0 } else { -1.0 })),
        };
        objectives.push(make_objective(loss, DesignMatrix::from_dense(&a), b, sigma)?);
    }
    Ok(SyntheticData { problem: Problem::new(objectives, radius)?, x_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn fixture_columns_are_normalized() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data = synthetic_problem(&SyntheticSpec::least_squares_fixture(), 0.01, 1.0, &mut rng).unwrap();
        assert_eq!(data.problem.node_count(), 25);
        assert_eq!(data.problem.dim(), 10);
        for f in data.problem.objectives() {
            let a = f.data().0.to_dense();
            for col in a.column_iter() {
                assert!((col.norm() - 1.0).abs() < 1e-12);
            }
        }
        assert!(data.x_hat.iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn logistic_labels_are_signs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let spec = SyntheticSpec { loss: SyntheticLoss::Logistic, nodes: 4, dim: 3, rows_per_node: 6, data_noise: 0.001 };
        let data = synthetic_problem(&spec, 0.1, 1.0, &mut rng).unwrap();
        for f in data.problem.objectives() {
            assert!(f.data().1.iter().all(|&b| b == 1.0 || b == -1.0));
        }
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let f1 = make_objective(Loss::LeastSquares, DesignMatrix::zeros(1, 2), DVector::zeros(1), 0.0).unwrap();
        let f2 = make_objective(Loss::LeastSquares, DesignMatrix::zeros(1, 3), DVector::zeros(1), 0.0).unwrap();
        assert!(matches!(Problem::new(vec![f1.clone(), f2], 1.0), Err(ProblemError::Dimension { node: 1, .. })));
        assert!(matches!(Problem::new(vec![f1], 0.0), Err(ProblemError::Radius(_))));
        assert!(matches!(Problem::new(vec![], 1.0), Err(ProblemError::Empty)));
    }
}
