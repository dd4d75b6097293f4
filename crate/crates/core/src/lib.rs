//! Decentralized consensus optimization with delayed stochastic gradients.
//!
//! Nodes of an undirected network each hold a private convex objective `f_i`
//! and cooperatively minimize `Σ_i f_i(x)` over the box `‖x‖∞ ≤ R` by
//! mixing their iterates with neighbors and taking projected steps along
//! possibly stale stochastic gradients.
//!
//! Modules:
//! - [`network`]: topologies, Metropolis mixing matrices, spectral gap
//! - [`objectives`], [`problem`]: node objectives and synthetic data
//! - [`delay`]: delay distributions and the stale-gradient buffer
//! - [`solver`]: the iteration, running averages, reference solver
//! - [`timing`]: wall-clock simulation of synchronous vs asynchronous runs
//! - [`analysis`]: convergence bounds and log-log rate fits
//! - [`tomo`]: synthetic ray tomography problems
//! - [`config`], [`experiment`], [`io`]: config files, experiment runner, file formats

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod delay;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod network;
pub mod objectives;
pub mod problem;
pub mod rng;
pub mod solver;
pub mod timing;
pub mod tomo;

pub use nalgebra::{DMatrix, DVector};
