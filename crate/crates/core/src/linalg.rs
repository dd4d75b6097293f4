//! Small sparse/dense linear-algebra helpers shared by the objectives and the
//! tomography generator.

use nalgebra::{DMatrix, DVector};

/// Row-compressed matrix used for every per-node data matrix `A_i`.
///
/// Dense synthetic blocks are stored with all their entries; tomography rows
/// keep only the pixels a ray actually crosses.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut rows = Vec::with_capacity(a.nrows());
        for r in 0..a.nrows() {
            rows.push((0..a.ncols()).map(|c| (c, a[(r, c)])).collect::<Vec<_>>());
        }
        Self::from_rows(a.ncols(), rows)
    }

    /// Builds from `(column, value)` lists. Entries of one row are sorted by
    /// column and duplicates are summed.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < ncols, "column {c} out of range for {ncols} columns");
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Self { nrows: indptr.len() - 1, ncols, indptr, indices, values }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::from_rows(ncols, vec![Vec::new(); nrows])
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn row_dot(&self, r: usize, x: &DVector<f64>) -> f64 {
        let (idx, val) = self.row(r);
        idx.iter().zip(val).map(|(&c, &v)| v * x[c]).sum()
    }

    pub fn row_norm(&self, r: usize) -> f64 {
        self.row(r).1.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).1.iter().sum()
    }

    /// `A x`
    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.nrows, (0..self.nrows).map(|r| self.row_dot(r, x)))
    }

    /// `Aᵀ y`
    pub fn tr_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for r in 0..self.nrows {
            let (idx, val) = self.row(r);
            let yr = y[r];
            for (&c, &v) in idx.iter().zip(val) {
                out[c] += v * yr;
            }
        }
        out
    }

    /// Adds `weight * a_r` into `out`.
    pub fn axpy_row(&self, r: usize, weight: f64, out: &mut DVector<f64>) {
        let (idx, val) = self.row(r);
        for (&c, &v) in idx.iter().zip(val) {
            out[c] += weight * v;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                a[(r, c)] += v;
            }
        }
        a
    }

    /// Spectral norm of `AᵀA`, i.e. the largest squared singular value.
    pub fn gram_norm(&self) -> f64 {
        if self.nnz() == 0 {
            return 0.0;
        }
        power_iteration(self.ncols, |v| self.tr_mul(&self.mul(v)), POWER_TOL)
    }

    /// Spectral norm of `A`.
    pub fn op_norm(&self) -> f64 {
        self.gram_norm().sqrt()
    }

    pub fn is_dense_shaped(&self) -> bool {
        self.nnz() == self.nrows * self.ncols
    }
}

/// Relative tolerance used for every Lipschitz-constant estimate.
pub const POWER_TOL: f64 = 1e-8;

/// Largest eigenvalue of a symmetric positive semidefinite operator by power
/// iteration on a deterministic start vector.
///
/// Iterates until the Rayleigh quotient changes by less than `rel_tol`
/// relative, then keeps going a fixed number of extra sweeps so the estimate
/// sits well inside the tolerance.
pub fn power_iteration<F>(dim: usize, apply: F, rel_tol: f64) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    // Irregular start vector avoids being orthogonal to the top eigenvector
    // for the structured operators built here.
    let mut v = DVector::from_iterator(dim, (0..dim).map(|i| 1.0 + ((i as f64) * 0.618_033_988_7).fract()));
    v /= v.norm();
    let mut estimate = 0.0;
    let tight = rel_tol * 1e-4;
    for _ in 0..200_000 {
        let w = apply(&v);
        let rayleigh = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let done = (rayleigh - estimate).abs() <= tight * rayleigh.abs();
        estimate = rayleigh;
        v = w / norm;
        if done {
            break;
        }
    }
    estimate
}

/// Forward-difference discrete gradient on a 1, 2 or 3-dimensional grid.
///
/// Images are flattened with the first axis varying fastest:
/// `index = i0 + d0 * (i1 + d1 * i2)`. For every axis one difference row is
/// emitted per pixel that has a successor along that axis; boundary rows are
/// omitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteGradient {
    dims: Vec<usize>,
}

impl DiscreteGradient {
    pub fn new(dims: &[usize]) -> Self {
        assert!(!dims.is_empty() && dims.iter().all(|&d| d > 0), "grid dimensions must be positive");
        Self { dims: dims.to_vec() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn output_len(&self) -> usize {
        let n = self.input_len();
        self.dims.iter().map(|&d| n / d * (d - 1)).sum()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.dims.len());
        let mut acc = 1;
        for &d in &self.dims {
            s.push(acc);
            acc *= d;
        }
        s
    }

    /// Visits each difference row as `(row, plus_index, minus_index)`.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = self.input_len();
        let strides = self.strides();
        let mut row = 0;
        for (axis, &d) in self.dims.iter().enumerate() {
            let stride = strides[axis];
            for idx in 0..n {
                let coord = (idx / stride) % d;
                if coord + 1 < d {
                    f(row, idx + stride, idx);
                    row += 1;
                }
            }
        }
    }

    /// `D x`
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.output_len());
        self.for_each_row(|r, p, m| out[r] = x[p] - x[m]);
        out
    }

    /// `Dᵀ y`
    pub fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.input_len());
        self.for_each_row(|r, p, m| {
            out[p] += y[r];
            out[m] -= y[r];
        });
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.output_len(), self.input_len());
        self.for_each_row(|r, p, m| {
            d[(r, p)] = 1.0;
            d[(r, m)] = -1.0;
        });
        d
    }

    /// `‖DᵀD‖₂`
    pub fn gram_norm(&self) -> f64 {
        if self.output_len() == 0 {
            return 0.0;
        }
        power_iteration(self.input_len(), |v| self.apply_transpose(&self.apply(v)), POWER_TOL)
    }
}
