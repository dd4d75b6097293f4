//! Synthetic straight-ray travel-time tomography.
//!
//! The image lives on a grid of unit pixels (voxels). The last axis is depth;
//! depth `0` is the ground surface where the sensors sit. Every node owns one
//! sensor and observes the travel times of rays from random interior sources
//! to its sensor: `b_i = A_i x_true + noise`, where `(A_i)_{kl}` is the length
//! of ray `k` inside pixel `l`.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{DesignMatrix, DiscreteGradient};
use crate::objectives::{make_objective, Loss};
use crate::problem::{Problem, ProblemError};
use crate::rng::StreamSeeder;

#[derive(Debug, Error, PartialEq)]
pub enum TomoError {
    #[error("invalid tomography parameters: {0}")]
    Parameters(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Phantom families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhantomKind {
    /// Gaussian bumps on a constant background.
    Blobs { count: usize, seed: u64 },
    /// Depth layers: constant along every axis but the last.
    Layered { seed: u64 },
}

fn check_dims(dims: &[usize]) -> Result<(), TomoError> {
    if dims.is_empty() || dims.len() > 3 || dims.contains(&0) {
        return Err(TomoError::Parameters(format!("grid must have 1 to 3 positive dimensions, got {dims:?}")));
    }
    Ok(())
}

fn unflatten(mut idx: usize, dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .map(|&d| {
            let c = idx % d;
            idx /= d;
            c
        })
        .collect()
}

pub fn make_phantom(dims: &[usize], kind: &PhantomKind, radius: f64) -> Result<DVector<f64>, TomoError> {
    check_dims(dims)?;
    if !(radius > 0.0) {
        return Err(TomoError::Parameters(format!("radius must be positive, got {radius}")));
    }
    let n: usize = dims.iter().product();
    let image = match *kind {
        PhantomKind::Blobs { count, seed } => {
            let mut rng = StreamSeeder::new(seed).stream("phantom", 0);
            let blobs: Vec<(Vec<f64>, f64, f64)> = (0..count)
                .map(|_| {
                    let center: Vec<f64> = dims.iter().map(|&d| rng.random::<f64>() * d as f64).collect();
                    let scale = dims.iter().copied().min().unwrap() as f64;
                    let width = (0.1 + 0.2 * rng.random::<f64>()) * scale;
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let amplitude = sign * (0.2 + 0.3 * rng.random::<f64>()) * radius;
                    (center, width, amplitude)
                })
                .collect();
            DVector::from_iterator(
                n,
                (0..n).map(|idx| {
                    let coord = unflatten(idx, dims);
                    let mut v = 0.5 * radius;
                    for (center, width, amplitude) in &blobs {
                        let d2: f64 = coord.iter().zip(center).map(|(&c, &m)| (c as f64 + 0.5 - m).powi(2)).sum();
                        v += amplitude * (-d2 / (2.0 * width * width)).exp();
                    }
                    v
                }),
            )
        }
        PhantomKind::Layered { seed } => {
            let mut rng = StreamSeeder::new(seed).stream("phantom", 1);
            let depth = *dims.last().unwrap();
            let layers = if depth < 2 { 1 } else { rng.random_range(2..=depth.min(6)) };
            let mut cuts: Vec<usize> = (0..layers - 1).map(|_| rng.random_range(1..depth.max(2))).collect();
            cuts.sort_unstable();
            let values: Vec<f64> = (0..layers).map(|_| radius * (0.2 + 0.8 * rng.random::<f64>())).collect();
            let per_depth: Vec<f64> = (0..depth).map(|z| values[cuts.iter().filter(|&&c| c <= z).count()]).collect();
            let stride: usize = dims[..dims.len() - 1].iter().product();
            DVector::from_iterator(n, (0..n).map(|idx| per_depth[idx / stride]))
        }
    };
    Ok(image.map(|v| v.clamp(0.0, radius)))
}

/// Exact per-pixel intersection lengths of the segment `from → to`.
///
/// Collects every parameter where the segment crosses an integer grid plane,
/// then assigns each sub-segment to the pixel containing its midpoint.
pub fn trace_ray(dims: &[usize], from: &[f64], to: &[f64]) -> Vec<(usize, f64)> {
    let dir: Vec<f64> = from.iter().zip(to).map(|(a, b)| b - a).collect();
    let length = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    if length == 0.0 {
        return Vec::new();
    }
    let mut ts = vec![0.0, 1.0];
    for (axis, &d) in dir.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let (lo, hi) = (from[axis].min(to[axis]), from[axis].max(to[axis]));
        let mut plane = lo.floor() + 1.0;
        while plane < hi {
            ts.push((plane - from[axis]) / d);
            plane += 1.0;
        }
    }
    ts.sort_by(f64::total_cmp);
    let mut strides = Vec::with_capacity(dims.len());
    let mut acc = 1;
    for &d in dims {
        strides.push(acc);
        acc *= d;
    }
    let mut out: Vec<(usize, f64)> = Vec::new();
    for w in ts.windows(2) {
        let dt = w[1] - w[0];
        if dt <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let mut idx = 0;
        for axis in 0..dims.len() {
            let c = (from[axis] + mid * dir[axis]).floor().clamp(0.0, (dims[axis] - 1) as f64) as usize;
            idx += c * strides[axis];
        }
        match out.last_mut() {
            Some((last, len)) if *last == idx => *len += dt * length,
            _ => out.push((idx, dt * length)),
        }
    }
    out
}

/// Sensor position of node `i` out of `m`, evenly spread over the surface.
pub fn sensor_position(dims: &[usize], i: usize, m: usize) -> Vec<f64> {
    let lateral = &dims[..dims.len() - 1];
    let mut pos = match lateral.len() {
        0 => vec![],
        1 => vec![(i as f64 + 0.5) * lateral[0] as f64 / m as f64],
        _ => {
            let cols = (m as f64).sqrt().ceil() as usize;
            let rows = m.div_ceil(cols);
            let (r, c) = (i / cols, i % cols);
            vec![(c as f64 + 0.5) * lateral[0] as f64 / cols as f64, (r as f64 + 0.5) * lateral[1] as f64 / rows as f64]
        }
    };
    pos.push(0.0);
    pos
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomoNode {
    pub sensor: Vec<f64>,
    pub sources: Vec<Vec<f64>>,
    pub a: DesignMatrix,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomoProblem {
    pub dims: Vec<usize>,
    pub x_true: DVector<f64>,
    pub nodes: Vec<TomoNode>,
    pub noise_std: f64,
    pub radius: f64,
}

/// Regularization attached to each node's travel-time misfit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Regularizer {
    None,
    Identity { mu: f64 },
    Gradient { mu: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomoSpec {
    pub dims: Vec<usize>,
    pub nodes: usize,
    pub rays_per_node: usize,
    pub noise_std: f64,
    pub radius: f64,
    pub phantom: PhantomKind,
}

pub fn generate_tomo_problem(spec: &TomoSpec, seed: u64) -> Result<TomoProblem, TomoError> {
    check_dims(&spec.dims)?;
    if spec.nodes == 0 || spec.rays_per_node == 0 {
        return Err(TomoError::Parameters("need at least one node and one ray per node".into()));
    }
    if !(spec.noise_std >= 0.0) {
        return Err(TomoError::Parameters(format!("noise_std must be >= 0, got {}", spec.noise_std)));
    }
    let dims = &spec.dims;
    let n: usize = dims.iter().product();
    let x_true = make_phantom(dims, &spec.phantom, spec.radius)?;
    let seeder = StreamSeeder::new(seed);
    let nodes = (0..spec.nodes)
        .map(|i| {
            let mut ray_rng = seeder.stream("tomo-rays", i as u64);
            let mut noise_rng = seeder.stream("tomo-noise", i as u64);
            let sensor = sensor_position(dims, i, spec.nodes);
            let mut sources = Vec::with_capacity(spec.rays_per_node);
            let mut rows = Vec::with_capacity(spec.rays_per_node);
            while rows.len() < spec.rays_per_node {
                let source: Vec<f64> = dims.iter().map(|&d| ray_rng.random::<f64>() * d as f64).collect();
                let row = trace_ray(dims, &source, &sensor);
                if row.is_empty() {
                    continue;
                }
                sources.push(source);
                rows.push(row);
            }
            let a = DesignMatrix::from_rows(n, rows);
            let clean = a.mul(&x_true);
            let b = if spec.noise_std > 0.0 {
                clean.map(|v| v + spec.noise_std * noise_rng.sample::<f64, _>(StandardNormal))
            } else {
                clean
            };
            TomoNode { sensor, sources, a, b }
        })
        .collect();
    Ok(TomoProblem { dims: dims.clone(), x_true, nodes, noise_std: spec.noise_std, radius: spec.radius })
}

pub fn discrete_gradient_operator(dims: &[usize]) -> DiscreteGradient {
    DiscreteGradient::new(dims)
}

impl TomoProblem {
    pub fn pixel_count(&self) -> usize {
        self.x_true.len()
    }

    /// Node objectives `½(‖A_i x − b_i‖² + μ R(x))` with stochastic-gradient noise `sigma`.
    pub fn to_problem(&self, regularizer: Regularizer, sigma: f64) -> Result<Problem, TomoError> {
        let objectives = self
            .nodes
            .iter()
            .map(|node| {
                let loss = match regularizer {
                    Regularizer::None => Loss::LeastSquares,
                    Regularizer::Identity { mu } => Loss::TikhonovIdentity { mu },
                    Regularizer::Gradient { mu } => Loss::TikhonovGradient { mu, op: DiscreteGradient::new(&self.dims) },
                };
                make_objective(loss, node.a.clone(), node.b.clone(), sigma).map_err(ProblemError::from)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Problem::new(objectives, self.radius)?)
    }

    pub fn relative_error(&self, image: &DVector<f64>) -> f64 {
        (image - &self.x_true).norm() / self.x_true.norm()
    }
}

/// Flat CSV image: a `# dims` comment line, a `value` header, then one pixel per line.
pub fn image_to_csv(dims: &[usize], image: &DVector<f64>) -> String {
    let dims_text: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    let mut out = format!("# dims {}\nvalue\n", dims_text.join(" "));
    for v in image.iter() {
        let _ = writeln!(out, "{v}");
    }
    out
}
