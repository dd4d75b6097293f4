//! Graph topologies and doubly-stochastic mixing matrices.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamSeeder;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("invalid topology parameters: {0}")]
    InvalidParameters(String),
    #[error("could not generate a connected graph after {attempts} attempts")]
    Generation { attempts: usize },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("mixing matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:.3e}); use the lazy variant (I + W) / 2")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("edge list parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Topology generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TopologyKind {
    Lattice2d { rows: usize, cols: usize },
    Ring { m: usize },
    Kregular { m: usize, k: usize },
    Complete { m: usize },
}

impl TopologyKind {
    pub fn node_count(&self) -> usize {
        match *self {
            TopologyKind::Lattice2d { rows, cols } => rows * cols,
            TopologyKind::Ring { m } | TopologyKind::Kregular { m, .. } | TopologyKind::Complete { m } => m,
        }
    }

    /// Same family resized to `m` nodes. Lattices become square and need a
    /// perfect-square `m`.
    pub fn with_node_count(&self, m: usize) -> Result<TopologyKind, NetworkError> {
        Ok(match *self {
            TopologyKind::Lattice2d { .. } => {
                let side = (m as f64).sqrt().round() as usize;
                if side * side != m {
                    return Err(NetworkError::InvalidParameters(format!(
                        "a square lattice needs a perfect-square node count, got {m}"
                    )));
                }
                TopologyKind::Lattice2d { rows: side, cols: side }
            }
            TopologyKind::Ring { .. } => TopologyKind::Ring { m },
            TopologyKind::Kregular { k, .. } => TopologyKind::Kregular { m, k },
            TopologyKind::Complete { .. } => TopologyKind::Complete { m },
        })
    }
}

/// Default number of k-regular generation attempts.
pub const KREGULAR_ATTEMPTS: usize = 100;

/// Undirected simple connected graph on nodes `0..m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkTopology {
    m: usize,
    edges: Vec<(usize, usize)>,
}

impl NetworkTopology {
    /// Validates and normalizes an edge set (pairs stored with `i < j`, sorted).
    pub fn new(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, NetworkError> {
        if m == 0 {
            return Err(NetworkError::InvalidTopology("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= m || j >= m {
                return Err(NetworkError::InvalidTopology(format!("edge ({i},{j}) references a node >= {m}")));
            }
            if i == j {
                return Err(NetworkError::InvalidTopology(format!("self-loop at node {i}")));
            }
            if !set.insert((i.min(j), i.max(j))) {
                return Err(NetworkError::InvalidTopology(format!("duplicate edge ({i},{j})")));
            }
        }
        let topo = Self { m, edges: set.into_iter().collect() };
        if !topo.is_connected() {
            return Err(NetworkError::InvalidTopology("graph is not connected".into()));
        }
        Ok(topo)
    }

    pub fn node_count(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.m];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.m * (self.m - 1) / 2
    }

    fn is_connected(&self) -> bool {
        connected(self.m, &self.edges)
    }

    /// Edge-list text: first line `m`, then one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.m);
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self, NetworkError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (n0, first) = lines.next().ok_or(NetworkError::Parse { line: 1, msg: "missing node count".into() })?;
        let m: usize = first.parse().map_err(|_| NetworkError::Parse { line: n0, msg: format!("bad node count {first:?}") })?;
        let mut edges = Vec::new();
        for (line, l) in lines {
            let parts: Vec<&str> = l.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(NetworkError::Parse { line, msg: "expected two node indices".into() });
            }
            let parse = |s: &str| s.parse::<usize>().map_err(|_| NetworkError::Parse { line, msg: format!("bad node index {s:?}") });
            edges.push((parse(parts[0])?, parse(parts[1])?));
        }
        Self::new(m, edges)
    }
}

fn connected(m: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); m];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; m];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == m
}

pub fn build_topology(kind: &TopologyKind, seed: u64) -> Result<NetworkTopology, NetworkError> {
    match *kind {
        TopologyKind::Lattice2d { rows, cols } => {
            if rows == 0 || cols == 0 {
                return Err(NetworkError::InvalidParameters("lattice needs positive rows and cols".into()));
            }
            let id = |r: usize, c: usize| r * cols + c;
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    if c + 1 < cols {
                        edges.push((id(r, c), id(r, c + 1)));
                    }
                    if r + 1 < rows {
                        edges.push((id(r, c), id(r + 1, c)));
                    }
                }
            }
            NetworkTopology::new(rows * cols, edges)
        }
        TopologyKind::Ring { m } => {
            if m == 0 {
                return Err(NetworkError::InvalidParameters("ring needs m >= 1".into()));
            }
            let edges: Vec<_> = match m {
                1 => vec![],
                2 => vec![(0, 1)],
                _ => (0..m).map(|i| (i, (i + 1) % m)).collect(),
            };
            NetworkTopology::new(m, edges)
        }
        TopologyKind::Complete { m } => {
            if m == 0 {
                return Err(NetworkError::InvalidParameters("complete graph needs m >= 1".into()));
            }
            NetworkTopology::new(m, (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))))
        }
        TopologyKind::Kregular { m, k } => kregular(m, k, seed, KREGULAR_ATTEMPTS),
    }
}

/// Random k-regular graph by sequential stub pairing, retrying with a fresh
/// substream until the result is simple and connected.
pub fn kregular(m: usize, k: usize, seed: u64, attempts: usize) -> Result<NetworkTopology, NetworkError> {
    if m == 0 || k == 0 || k >= m || !(m * k).is_multiple_of(2) {
        return Err(NetworkError::InvalidParameters(format!(
            "k-regular graph needs 0 < k < m and m*k even (m={m}, k={k})"
        )));
    }
    let seeder = StreamSeeder::new(seed);
    for attempt in 0..attempts {
        let mut rng = seeder.stream("kregular", attempt as u64);
        if let Some(edges) = pair_stubs(m, k, &mut rng) {
            if connected(m, &edges) {
                return NetworkTopology::new(m, edges);
            }
        }
    }
    Err(NetworkError::Generation { attempts })
}

fn pair_stubs(m: usize, k: usize, rng: &mut impl Rng) -> Option<Vec<(usize, usize)>> {
    let mut stubs: Vec<usize> = (0..m).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let mut edges = BTreeSet::new();
    while !stubs.is_empty() {
        let mut paired = false;
        for _ in 0..(50 * stubs.len()) {
            let a = rng.random_range(0..stubs.len());
            let b = rng.random_range(0..stubs.len());
            let (u, v) = (stubs[a], stubs[b]);
            if a == b || u == v || edges.contains(&(u.min(v), u.max(v))) {
                continue;
            }
            edges.insert((u.min(v), u.max(v)));
            let (hi, lo) = (a.max(b), a.min(b));
            stubs.swap_remove(hi);
            stubs.swap_remove(lo);
            paired = true;
            break;
        }
        if !paired {
            return None;
        }
    }
    Some(edges.into_iter().collect())
}

/// Symmetric doubly-stochastic mixing matrix together with its spectral gap.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    lambda: f64,
    rows: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    /// Wraps an arbitrary square matrix; use [`validate_mixing`] to check the
    /// mixing assumptions.
    pub fn from_matrix(weights: DMatrix<f64>) -> Self {
        assert!(weights.is_square(), "mixing matrix must be square");
        let lambda = spectral_gap(&weights);
        let rows = (0..weights.nrows())
            .map(|i| (0..weights.ncols()).filter(|&j| weights[(i, j)] != 0.0).map(|j| (j, weights[(i, j)])).collect())
            .collect();
        Self { weights, lambda, rows }
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn size(&self) -> usize {
        self.weights.nrows()
    }

    /// Nonzero `(j, w_ij)` entries of row `i`, in column order.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        eigenvalues(&self.weights).into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Metropolis–Hastings weights `w_ij = 1 / (1 + max(deg_i, deg_j))`.
pub fn metropolis_weights(topology: &NetworkTopology) -> DMatrix<f64> {
    let m = topology.node_count();
    let deg = topology.degrees();
    let mut w = DMatrix::zeros(m, m);
    for &(i, j) in topology.edges() {
        let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// Smallest eigenvalue allowed for a matrix to count as positive semidefinite.
pub const PSD_TOL: f64 = -1e-10;

pub fn metropolis_mixing(topology: &NetworkTopology, lazy: bool) -> Result<MixingMatrix, NetworkError> {
    let w = metropolis_weights(topology);
    if lazy {
        return Ok(MixingMatrix::from_matrix(lazy_shift(&w)));
    }
    let min_eigenvalue = eigenvalues(&w).into_iter().fold(f64::INFINITY, f64::min);
    if min_eigenvalue < PSD_TOL {
        return Err(NetworkError::NotPositiveSemidefinite { min_eigenvalue });
    }
    Ok(MixingMatrix::from_matrix(w))
}

/// Metropolis weights, lazily shifted only when the raw matrix is indefinite.
pub fn auto_metropolis_mixing(topology: &NetworkTopology) -> MixingMatrix {
    match metropolis_mixing(topology, false) {
        Ok(w) => w,
        Err(_) => MixingMatrix::from_matrix(lazy_shift(&metropolis_weights(topology))),
    }
}

/// `W = J`: every weight `1/m`. Only implementable on a complete graph.
pub fn uniform_complete_mixing(topology: &NetworkTopology) -> Result<MixingMatrix, NetworkError> {
    if !topology.is_complete() {
        return Err(NetworkError::InvalidParameters("uniform mixing needs a complete graph".into()));
    }
    let m = topology.node_count();
    Ok(MixingMatrix::from_matrix(DMatrix::from_element(m, m, 1.0 / m as f64)))
}

fn lazy_shift(w: &DMatrix<f64>) -> DMatrix<f64> {
    (DMatrix::identity(w.nrows(), w.ncols()) + w) * 0.5
}

fn eigenvalues(w: &DMatrix<f64>) -> Vec<f64> {
    let sym = (w + w.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().collect()
}

/// `λ = ‖W − J‖₂` via a symmetric eigendecomposition.
pub fn spectral_gap(w: &DMatrix<f64>) -> f64 {
    let m = w.nrows();
    if m == 0 {
        return 0.0;
    }
    let j = DMatrix::from_element(m, m, 1.0 / m as f64);
    eigenvalues(&(w - j)).into_iter().fold(0.0, |acc, e| acc.max(e.abs()))
}

/// Second-largest eigenvalue of `W` (zero for a single node).
pub fn second_largest_eigenvalue(w: &DMatrix<f64>) -> f64 {
    let mut ev = eigenvalues(w);
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.get(1).copied().unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Pass/fail report for the mixing-matrix assumptions.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub entries: Vec<CheckEntry>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{:<10} {:<4} {}", e.name, if e.passed { "PASS" } else { "FAIL" }, e.detail);
        }
        out
    }
}

/// Tolerance for symmetry and row-sum checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

pub fn validate_mixing(w: &MixingMatrix, topology: &NetworkTopology) -> ValidationReport {
    let weights = w.weights();
    let m = weights.nrows();
    assert_eq!(m, topology.node_count(), "mixing matrix and topology sizes differ");

    let asym = (weights - weights.transpose()).amax();
    let row_err = (0..m).map(|i| (weights.row(i).sum() - 1.0).abs()).fold(0.0, f64::max);
    let mut sparsity_violations = Vec::new();
    let mut negative = 0;
    for i in 0..m {
        for j in 0..m {
            let v = weights[(i, j)];
            if v < 0.0 {
                negative += 1;
            }
            if v > 0.0 && i != j && !topology.has_edge(i, j) {
                sparsity_violations.push((i, j));
            }
        }
    }
    let min_ev = w.smallest_eigenvalue();
    let lambda = w.lambda();
    // A complete graph admits W = J, where λ = 0 is the ideal value.
    let lambda_ok = if topology.is_complete() { (0.0..1.0).contains(&lambda) } else { lambda > 0.0 && lambda < 1.0 };

    let entries = vec![
        CheckEntry { name: "symmetry", passed: asym <= STOCHASTIC_TOL, detail: format!("max |w_ij - w_ji| = {asym:.3e}") },
        CheckEntry { name: "row-sums", passed: row_err <= STOCHASTIC_TOL, detail: format!("max |sum_j w_ij - 1| = {row_err:.3e}") },
        CheckEntry {
            name: "sparsity",
            passed: sparsity_violations.is_empty() && negative == 0,
            detail: format!("{} weights on non-edges, {} negative weights", sparsity_violations.len(), negative),
        },
        CheckEntry { name: "psd", passed: min_ev >= PSD_TOL, detail: format!("smallest eigenvalue {min_ev:.6e}") },
        CheckEntry { name: "lambda", passed: lambda_ok, detail: format!("lambda = {lambda:.12}") },
    ];
    ValidationReport { entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring4() -> NetworkTopology {
        build_topology(&TopologyKind::Ring { m: 4 }, 0).unwrap()
    }

    #[test]
    fn lattice_5x5_counts() {
        let t = build_topology(&TopologyKind::Lattice2d { rows: 5, cols: 5 }, 0).unwrap();
        assert_eq!(t.node_count(), 25);
        assert_eq!(t.edges().len(), 40);
        let deg = t.degrees();
        assert_eq!(deg[2 * 5 + 2], 4);
        assert_eq!(deg[0], 2);
    }

    #[test]
    fn small_rings_and_complete() {
        let t = build_topology(&TopologyKind::Ring { m: 3 }, 0).unwrap();
        assert_eq!(t.degrees(), vec![2, 2, 2]);
        let c = build_topology(&TopologyKind::Complete { m: 2 }, 0).unwrap();
        assert_eq!(c.edges(), &[(0, 1)]);
        assert_eq!(build_topology(&TopologyKind::Ring { m: 1 }, 0).unwrap().edges().len(), 0);
    }

    #[test]
    fn kregular_is_regular_and_connected() {
        for seed in 0..20 {
            let t = build_topology(&TopologyKind::Kregular { m: 32, k: 3 }, seed).unwrap();
            assert!(t.degrees().iter().all(|&d| d == 3));
        }
    }

    #[test]
    fn kregular_rejects_odd_stub_count() {
        assert!(matches!(
            build_topology(&TopologyKind::Kregular { m: 5, k: 3 }, 1),
            Err(NetworkError::InvalidParameters(_))
        ));
        assert!(matches!(
            build_topology(&TopologyKind::Kregular { m: 4, k: 4 }, 1),
            Err(NetworkError::InvalidParameters(_))
        ));
    }

    #[test]
    fn kregular_generation_error_when_attempts_exhausted() {
        // 1-regular graphs on more than two nodes are never connected.
        assert_eq!(kregular(6, 1, 3, 5), Err(NetworkError::Generation { attempts: 5 }));
    }

    #[test]
    fn invalid_edges_rejected() {
        assert!(NetworkTopology::new(3, [(0, 0), (1, 2)]).is_err());
        assert!(NetworkTopology::new(3, [(0, 1), (1, 0), (1, 2)]).is_err());
        assert!(NetworkTopology::new(3, [(0, 3)]).is_err());
        assert!(NetworkTopology::new(3, [(0, 1)]).is_err());
    }

    #[test]
    fn ring4_metropolis_is_indefinite() {
        let w = metropolis_weights(&ring4());
        assert!((w[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        match metropolis_mixing(&ring4(), false) {
            Err(NetworkError::NotPositiveSemidefinite { min_eigenvalue }) => {
                assert!((min_eigenvalue + 1.0 / 3.0).abs() < 1e-12)
            }
            other => panic!("expected PSD error, got {other:?}"),
        }
    }

    #[test]
    fn ring4_lazy_gap() {
        let w = metropolis_mixing(&ring4(), true).unwrap();
        assert!((w.lambda() - 2.0 / 3.0).abs() < 1e-12);
        assert!((second_largest_eigenvalue(w.weights()) - w.lambda()).abs() < 1e-10);
        assert!(validate_mixing(&w, &ring4()).all_passed());
    }

    #[test]
    fn uniform_complete_has_zero_gap() {
        let t = build_topology(&TopologyKind::Complete { m: 5 }, 0).unwrap();
        let w = uniform_complete_mixing(&t).unwrap();
        assert!(w.lambda().abs() < 1e-14);
        assert!(validate_mixing(&w, &t).all_passed());
    }

    #[test]
    fn validation_flags_row_scaling_and_nonedge_weight() {
        let t = ring4();
        let good = metropolis_mixing(&t, true).unwrap();
        let mut scaled = good.weights().clone();
        for j in 0..4 {
            scaled[(1, j)] *= 1.01;
        }
        let report = validate_mixing(&MixingMatrix::from_matrix(scaled), &t);
        assert!(!report.get("row-sums").unwrap().passed);

        let mut leaky = good.weights().clone();
        leaky[(0, 2)] = 0.01;
        leaky[(2, 0)] = 0.01;
        leaky[(0, 0)] -= 0.01;
        leaky[(2, 2)] -= 0.01;
        let report = validate_mixing(&MixingMatrix::from_matrix(leaky), &t);
        assert!(!report.get("sparsity").unwrap().passed);
        assert!(report.get("row-sums").unwrap().passed);
    }

    #[test]
    fn edge_list_roundtrip() {
        let t = build_topology(&TopologyKind::Lattice2d { rows: 3, cols: 4 }, 0).unwrap();
        let text = t.to_edge_list();
        assert!(text.starts_with("12\n"));
        assert_eq!(NetworkTopology::from_edge_list(&text).unwrap(), t);
        assert!(matches!(NetworkTopology::from_edge_list("3\n0 x\n"), Err(NetworkError::Parse { line: 2, .. })));
    }
}
