//! Ray tracing, difference operators and centralized recovery for the tomography pipeline.

use dsgd_core::linalg::DiscreteGradient;
use dsgd_core::objectives::{make_objective, Loss};
use dsgd_core::rng::StreamSeeder;
use dsgd_core::solver::centralized_reference;
use dsgd_core::tomo::{generate_tomo_problem, trace_ray, PhantomKind, Regularizer, TomoSpec};
use dsgd_core::{DMatrix, DVector};
use rand::Rng;

fn conservation(dims: &[usize], rays: usize, seed: u64) -> f64 {
    let mut rng = StreamSeeder::new(seed).stream("probe", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..rays {
        let p: Vec<f64> = dims.iter().map(|&d| rng.random::<f64>() * d as f64).collect();
        let q: Vec<f64> = dims.iter().map(|&d| rng.random::<f64>() * d as f64).collect();
        let length = p.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let row = trace_ray(dims, &p, &q);
        let total: f64 = row.iter().map(|(_, v)| v).sum();
        assert!(row.iter().all(|&(_, v)| v > 0.0));
        worst = worst.max((total - length).abs());
    }
    worst
}

#[test]
fn ray_lengths_are_conserved() {
    assert!(conservation(&[8, 8], 10_000, 1) <= 1e-9);
    assert!(conservation(&[5, 4, 6], 10_000, 2) <= 1e-9);
}

#[test]
fn gradient_operator_norm() {
    let op = DiscreteGradient::new(&[16, 16]);
    let d = op.to_dense();
    let top = (d.transpose() * &d).symmetric_eigen().eigenvalues.max();
    assert!(op.gram_norm() <= 8.0);
    assert!((op.gram_norm() - top).abs() <= 1e-6, "{} vs {top}", op.gram_norm());
}

#[test]
fn gradient_operator_matches_hand_built_matrix() {
    // 3×2 grid, first axis fastest
    let op = DiscreteGradient::new(&[3, 2]);
    let mut hand = DMatrix::<f64>::zeros(7, 6);
    let mut r = 0;
    for j in 0..2 {
        for i in 0..2 {
            hand[(r, j * 3 + i)] = -1.0;
            hand[(r, j * 3 + i + 1)] = 1.0;
            r += 1;
        }
    }
    for i in 0..3 {
        hand[(r, i)] = -1.0;
        hand[(r, 3 + i)] = 1.0;
        r += 1;
    }
    let x = DVector::from_fn(6, |k, _| (k as f64 * 1.3).cos());
    let mut a = op.apply(&x).as_slice().to_vec();
    let mut b = (&hand * &x).as_slice().to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() <= 1e-12);
    }
    let y = op.apply(&x);
    assert!((op.apply_transpose(&y).dot(&x) - y.norm_squared()).abs() <= 1e-12);
}

#[test]
fn tikhonov_gradient_matches_finite_differences() {
    let spec = TomoSpec {
        dims: vec![4, 4],
        nodes: 2,
        rays_per_node: 10,
        noise_std: 0.0,
        radius: 1.0,
        phantom: PhantomKind::Blobs { count: 2, seed: 1 },
    };
    let tomo = generate_tomo_problem(&spec, 4).unwrap();
    let node = &tomo.nodes[0];
    let f = make_objective(Loss::TikhonovGradient { mu: 0.3, op: DiscreteGradient::new(&[4, 4]) }, node.a.clone(), node.b.clone(), 0.0)
        .unwrap();
    let x = DVector::from_fn(16, |k, _| (k as f64 * 0.7).sin());
    let g = f.gradient(&x).unwrap();
    let h = 1e-6 * (1.0 + x.norm());
    for k in 0..16 {
        let mut up = x.clone();
        let mut down = x.clone();
        up[k] += h;
        down[k] -= h;
        let fd = (f.evaluate(&up).unwrap() - f.evaluate(&down).unwrap()) / (2.0 * h);
        assert!((fd - g[k]).abs() <= 1e-5 * g.norm().max(1.0));
    }
}

#[test]
fn centralized_solver_recovers_noiseless_image() {
    let spec = TomoSpec {
        dims: vec![8, 8],
        nodes: 8,
        rays_per_node: 64,
        noise_std: 0.0,
        radius: 1.0,
        phantom: PhantomKind::Blobs { count: 3, seed: 5 },
    };
    let tomo = generate_tomo_problem(&spec, 11).unwrap();
    let problem = tomo.to_problem(Regularizer::None, 0.0).unwrap();
    let reference = centralized_reference(&problem, 1e-10, 200_000);
    assert!(reference.converged);
    assert!(tomo.relative_error(&reference.x_star) <= 1e-4, "{}", tomo.relative_error(&reference.x_star));
}
