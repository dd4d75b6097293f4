//! Per-node convex objectives with exact and stochastic gradient oracles.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{DesignMatrix, DiscreteGradient};

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("logistic labels must be -1 or +1, found {value} at row {row}")]
    Label { row: usize, value: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Loss family and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Loss {
    /// `½‖Ax − b‖²`
    LeastSquares,
    /// Sum of Huber penalties of the residuals with threshold `delta`.
    Huber { delta: f64 },
    /// `Σ_j log(1 + exp(a_jᵀx)) − b̃_j a_jᵀx` with labels ±1 mapped to b̃ ∈ {0, 1}.
    Logistic,
    /// `½(‖Ax − b‖² + μ‖x‖²)`
    TikhonovIdentity { mu: f64 },
    /// `½(‖Ax − b‖² + μ‖Dx‖²)` with `D` the forward-difference gradient.
    TikhonovGradient { mu: f64, op: DiscreteGradient },
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Loss::LeastSquares => "least-squares",
            Loss::Huber { .. } => "huber",
            Loss::Logistic => "logistic",
            Loss::TikhonovIdentity { .. } => "tikhonov-identity",
            Loss::TikhonovGradient { .. } => "tikhonov-gradient",
        }
    }
}

/// A stochastic gradient draw together with the noise that was added.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticGradient {
    pub value: DVector<f64>,
    pub noise: DVector<f64>,
}

/// Node-private objective `f_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalObjective {
    loss: Loss,
    a: DesignMatrix,
    b: DVector<f64>,
    sigma: f64,
    lipschitz: f64,
    a_norm: f64,
    reg_norm: f64,
}

pub fn make_objective(loss: Loss, a: DesignMatrix, b: DVector<f64>, sigma: f64) -> Result<LocalObjective, ObjectiveError> {
    if b.len() != a.nrows() {
        return Err(ObjectiveError::Shape(format!("A has {} rows but b has {} entries", a.nrows(), b.len())));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(ObjectiveError::Parameter(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    match &loss {
        Loss::Huber { delta } if !(*delta > 0.0 && delta.is_finite()) => {
            return Err(ObjectiveError::Parameter(format!("huber delta must be > 0, got {delta}")));
        }
        Loss::Logistic => {
            if let Some((row, &value)) = b.iter().enumerate().find(|(_, &v)| v != 1.0 && v != -1.0) {
                return Err(ObjectiveError::Label { row, value });
            }
        }
        Loss::TikhonovIdentity { mu } | Loss::TikhonovGradient { mu, .. } if !(*mu >= 0.0 && mu.is_finite()) => {
            return Err(ObjectiveError::Parameter(format!("mu must be >= 0, got {mu}")));
        }
        Loss::TikhonovGradient { op, .. } if op.input_len() != a.ncols() => {
            return Err(ObjectiveError::Shape(format!(
                "gradient operator acts on {} pixels but A has {} columns",
                op.input_len(),
                a.ncols()
            )));
        }
        _ => {}
    }
    let gram = a.gram_norm();
    let reg_norm = match &loss {
        Loss::TikhonovIdentity { .. } => 1.0,
        Loss::TikhonovGradient { op, .. } => op.gram_norm(),
        _ => 0.0,
    };
    let lipschitz = match &loss {
        Loss::LeastSquares | Loss::Huber { .. } => gram,
        Loss::Logistic => gram / 4.0,
        Loss::TikhonovIdentity { mu } => gram + mu,
        Loss::TikhonovGradient { mu, .. } => gram + mu * reg_norm,
    };
    Ok(LocalObjective { loss, a, b, sigma, lipschitz, a_norm: gram.sqrt(), reg_norm })
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - delta / 2.0)
    }
}

impl LocalObjective {
    pub fn loss(&self) -> &Loss {
        &self.loss
    }

    pub fn data(&self) -> (&DesignMatrix, &DVector<f64>) {
        (&self.a, &self.b)
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<(), ObjectiveError> {
        if x.len() != self.dim() {
            return Err(ObjectiveError::Shape(format!("expected a vector of length {}, got {}", self.dim(), x.len())));
        }
        Ok(())
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.mul(x) - &self.b
    }

    fn label01(&self, row: usize) -> f64 {
        if self.b[row] > 0.0 {
            1.0
        } else {
            0.0
        }
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64, ObjectiveError> {
        self.check_dim(x)?;
        Ok(self.value_unchecked(x))
    }

    pub(crate) fn value_unchecked(&self, x: &DVector<f64>) -> f64 {
        match &self.loss {
            Loss::LeastSquares => 0.5 * self.residual(x).norm_squared(),
            Loss::Huber { delta } => self.residual(x).iter().map(|&r| huber(r, *delta)).sum(),
            Loss::Logistic => (0..self.a.nrows())
                .map(|j| {
                    let z = self.a.row_dot(j, x);
                    softplus(z) - self.label01(j) * z
                })
                .sum(),
            Loss::TikhonovIdentity { mu } => 0.5 * (self.residual(x).norm_squared() + mu * x.norm_squared()),
            Loss::TikhonovGradient { mu, op } => 0.5 * (self.residual(x).norm_squared() + mu * op.apply(x).norm_squared()),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, ObjectiveError> {
        self.check_dim(x)?;
        Ok(self.gradient_unchecked(x))
    }

    pub(crate) fn gradient_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.loss {
            Loss::LeastSquares => self.a.tr_mul(&self.residual(x)),
            Loss::Huber { delta } => {
                // the quadratic branch owns the breakpoint |r| = δ
                let clipped = self.residual(x).map(|r| r.clamp(-delta, *delta));
                self.a.tr_mul(&clipped)
            }
            Loss::Logistic => {
                let mut g = DVector::zeros(self.dim());
                for j in 0..self.a.nrows() {
                    let z = self.a.row_dot(j, x);
                    self.a.axpy_row(j, logistic_sigmoid(z) - self.label01(j), &mut g);
                }
                g
            }
            Loss::TikhonovIdentity { mu } => self.a.tr_mul(&self.residual(x)) + x * *mu,
            Loss::TikhonovGradient { mu, op } => self.a.tr_mul(&self.residual(x)) + op.apply_transpose(&op.apply(x)) * *mu,
        }
    }

    /// `∇f(x) + ε`, `ε ~ N(0, σ² I)` drawn from `rng`. Draws nothing when σ = 0.
    pub fn stochastic_gradient<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> Result<StochasticGradient, ObjectiveError> {
        self.check_dim(x)?;
        Ok(self.stochastic_gradient_unchecked(x, rng))
    }

    pub(crate) fn stochastic_gradient_unchecked<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> StochasticGradient {
        let exact = self.gradient_unchecked(x);
        let noise = if self.sigma > 0.0 {
            DVector::from_iterator(exact.len(), (0..exact.len()).map(|_| self.sigma * rng.sample::<f64, _>(StandardNormal)))
        } else {
            DVector::zeros(exact.len())
        };
        StochasticGradient { value: exact + &noise, noise }
    }

    /// Gradient Lipschitz constant `L_i`.
    pub fn lipschitz_constant(&self) -> f64 {
        self.lipschitz
    }

    /// Upper bound on `sup ‖∇f(x)‖` over the box `‖x‖∞ ≤ radius`.
    pub fn gradient_bound(&self, radius: f64) -> f64 {
        let ball = (self.dim() as f64).sqrt() * radius;
        let quadratic = self.a_norm * (self.a_norm * ball + self.b.norm());
        match &self.loss {
            Loss::LeastSquares => quadratic,
            Loss::Huber { delta } => {
                let clipped: f64 = (0..self.a.nrows()).map(|j| delta * self.a.row_norm(j)).sum();
                quadratic.min(clipped)
            }
            Loss::Logistic => (0..self.a.nrows()).map(|j| self.a.row_norm(j)).sum(),
            Loss::TikhonovIdentity { mu } | Loss::TikhonovGradient { mu, .. } => quadratic + mu * self.reg_norm * ball,
        }
    }

    /// Bound on `E‖∇F(x; ξ)‖`: the exact bound plus `σ√n`.
    pub fn stochastic_gradient_bound(&self, radius: f64) -> f64 {
        self.gradient_bound(radius) + self.sigma * (self.dim() as f64).sqrt()
    }
}

/// Problem-wide constants entering the convergence bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParameters {
    /// uniform bound on exact and expected stochastic gradient norms
    pub g: f64,
    /// `max_i L_i`
    pub l: f64,
    pub sigma: f64,
    /// `B` with `E[τ²] ≤ B²`
    pub b: f64,
    pub radius: f64,
}
