//! Weighted graphs, Laplacians, incidence matrices, shortest-path distances,
//! and the dense reference linear algebra used by the oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("vertex {0} out of range (n = {1})")]
    VertexOutOfRange(usize, usize),
    #[error("non-positive weight {0}")]
    NonPositiveWeight(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Undirected weighted graph on vertices `0..n`. Edges are stored with
/// `u < v`; parallel edges are merged by weight addition at ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    pub fn new(n: usize, raw_edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let mut merged: std::collections::BTreeMap<(usize, usize), f64> =
            std::collections::BTreeMap::new();
        for &(u, v, w) in raw_edges {
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if u >= n || v >= n {
                return Err(GraphError::VertexOutOfRange(u.max(v), n));
            }
            if w <= 0.0 || !w.is_finite() {
                return Err(GraphError::NonPositiveWeight(w));
            }
            let key = (u.min(v), u.max(v));
            *merged.entry(key).or_insert(0.0) += w;
        }
        Ok(WeightedGraph {
            n,
            edges: merged.into_iter().map(|((u, v), w)| (u, v, w)).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Largest edge weight, used for encoding-width decisions.
    pub fn max_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).fold(0.0, f64::max)
    }

    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v, w) in &self.edges {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        adj
    }

    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(u, v, _)| (u, v)).collect()
    }

    /// Dense Laplacian: `L_uv = -w(u,v)` off-diagonal, weighted degree on the
    /// diagonal.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(u, v, w) in &self.edges {
            l[(u, u)] += w;
            l[(v, v)] += w;
            l[(u, v)] -= w;
            l[(v, u)] -= w;
        }
        l
    }

    /// Edge-vertex incidence matrix: row `e` has `+1` at the head (larger id)
    /// and `-1` at the tail (smaller id).
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.m(), self.n);
        for (e, &(u, v, _)) in self.edges.iter().enumerate() {
            b[(e, v)] = 1.0;
            b[(e, u)] = -1.0;
        }
        b
    }

    pub fn weight_diagonal(&self) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.edges.iter().map(|e| e.2))
    }

    /// `x^T L x` without materializing `L`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> Result<f64, GraphError> {
        if x.len() != self.n {
            return Err(GraphError::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(self
            .edges
            .iter()
            .map(|&(u, v, w)| {
                let d = x[u] - x[v];
                w * d * d
            })
            .sum())
    }

    /// Laplacian-vector product, edge by edge.
    pub fn laplacian_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for &(u, v, w) in &self.edges {
            let d = w * (x[u] - x[v]);
            y[u] += d;
            y[v] -= d;
        }
        y
    }

    /// Exact shortest-path distances (Dijkstra from every source);
    /// `+inf` for disconnected pairs.
    pub fn all_pairs_distances(&self) -> DMatrix<f64> {
        let adj = self.adjacency();
        let mut dist = DMatrix::from_element(self.n, self.n, f64::INFINITY);
        for s in 0..self.n {
            let row = dijkstra(&adj, s);
            for v in 0..self.n {
                dist[(s, v)] = row[v];
            }
        }
        dist
    }

    /// Min-plus matrix-squaring distances; an independent oracle for
    /// [`WeightedGraph::all_pairs_distances`].
    pub fn all_pairs_distances_minplus(&self) -> DMatrix<f64> {
        let mut d = DMatrix::from_element(self.n, self.n, f64::INFINITY);
        for v in 0..self.n {
            d[(v, v)] = 0.0;
        }
        for &(u, v, w) in &self.edges {
            d[(u, v)] = d[(u, v)].min(w);
            d[(v, u)] = d[(v, u)].min(w);
        }
        let mut steps = 1usize;
        while steps < self.n {
            d = minplus_square(&d);
            steps *= 2;
        }
        d
    }

    pub fn connected_components(&self) -> Vec<usize> {
        let adj = self.adjacency();
        let mut comp = vec![usize::MAX; self.n];
        let mut next = 0;
        for s in 0..self.n {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = next;
            while let Some(v) = stack.pop() {
                for &(u, _) in &adj[v] {
                    if comp[u] == usize::MAX {
                        comp[u] = next;
                        stack.push(u);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn is_connected(&self) -> bool {
        self.n <= 1 || self.connected_components().iter().all(|&c| c == 0)
    }

    /// Parse lines of the form `u v w` (weight optional, default 1).
    pub fn parse_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        let mut max_vertex = 0usize;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('c') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 2 {
                return Err(GraphError::Parse {
                    line: idx + 1,
                    reason: "expected `u v [w]`".into(),
                });
            }
            let parse = |s: &str| -> Result<f64, GraphError> {
                s.parse().map_err(|_| GraphError::Parse {
                    line: idx + 1,
                    reason: format!("bad number {s:?}"),
                })
            };
            let u = parse(fields[0])? as usize;
            let v = parse(fields[1])? as usize;
            let w = if fields.len() > 2 { parse(fields[2])? } else { 1.0 };
            max_vertex = max_vertex.max(u).max(v);
            edges.push((u, v, w));
        }
        WeightedGraph::new(max_vertex + 1, &edges)
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap: BinaryHeap<(Reverse<ordered_bits>, usize)> = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push((Reverse(ordered_bits(0.0_f64.to_bits())), source));
    while let Some((Reverse(d), v)) = heap.pop() {
        let d = f64::from_bits(d.0);
        if d > dist[v] {
            continue;
        }
        for &(u, w) in &adj[v] {
            let nd = d + w;
            if nd < dist[u] {
                dist[u] = nd;
                heap.push((Reverse(ordered_bits(nd.to_bits())), u));
            }
        }
    }
    dist
}

// Non-negative f64 bit patterns order like the floats themselves.
#[allow(non_camel_case_types)]
#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct ordered_bits(u64);

fn minplus_square(d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let mut out = d.clone();
    for i in 0..n {
        for j in 0..n {
            let mut best = out[(i, j)];
            for k in 0..n {
                let via = d[(i, k)] + d[(k, j)];
                if via < best {
                    best = via;
                }
            }
            out[(i, j)] = best;
        }
    }
    out
}

/// A weighted graph carrying per-edge survival probabilities. `p == 1`
/// everywhere reduces all probabilistic algorithms to their deterministic
/// counterparts.
#[derive(Debug, Clone)]
pub struct ProbWeightedGraph {
    pub base: WeightedGraph,
    /// Survival probability per edge, aligned with `base.edges()`.
    pub p: Vec<f64>,
}

impl ProbWeightedGraph {
    pub fn certain(base: WeightedGraph) -> Self {
        let p = vec![1.0; base.m()];
        ProbWeightedGraph { base, p }
    }

    pub fn new(base: WeightedGraph, p: Vec<f64>) -> Result<Self, GraphError> {
        if p.len() != base.m() {
            return Err(GraphError::DimensionMismatch {
                expected: base.m(),
                got: p.len(),
            });
        }
        Ok(ProbWeightedGraph { base, p })
    }
}

// ---------------------------------------------------------------------------
// Dense reference linear algebra (trust anchor for the acceptance tests).
// ---------------------------------------------------------------------------

/// Pseudo-inverse application via symmetric eigendecomposition, dropping
/// eigenvalues below `1e-10 * lambda_max`.
pub fn pinv_apply(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let eig = a.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = 1e-10 * lambda_max.max(f64::MIN_POSITIVE);
    let mut y = DVector::zeros(a.nrows());
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff {
            let q = eig.eigenvectors.column(i);
            y += q * (q.dot(b) / lambda);
        }
    }
    y
}

/// Solve a symmetric positive (semi-)definite system, falling back to the
/// eigendecomposition pseudo-inverse when the Cholesky factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    match a.clone().cholesky() {
        Some(chol) => chol.solve(b),
        None => pinv_apply(a, b),
    }
}

/// Extreme finite generalized eigenvalues of `(A, B)` restricted to the
/// complement of the shared null space, via `B^{+1/2} A B^{+1/2}`.
pub fn generalized_extreme_eigenvalues(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Option<(f64, f64)> {
    let eig_b = b.clone().symmetric_eigen();
    let lambda_max = eig_b.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = 1e-10 * lambda_max.max(f64::MIN_POSITIVE);
    let kept: Vec<usize> = (0..b.nrows())
        .filter(|&i| eig_b.eigenvalues[i] > cutoff)
        .collect();
    if kept.is_empty() {
        return None;
    }
    // The eigensolver can mispair vectors inside near-degenerate clusters
    // and hand back a "kept" vector that actually lies in ker(B).
    // Multiplying by B annihilates any kernel contamination exactly; a QR
    // pass then recovers an orthonormal basis of the true range, dropping
    // directions that collapsed.
    let q0 = DMatrix::from_fn(b.nrows(), kept.len(), |r, c| eig_b.eigenvectors[(r, kept[c])]);
    let bq = b * q0;
    let qr = bq.qr();
    let rdiag_max = (0..kept.len())
        .map(|i| qr.r()[(i, i)].abs())
        .fold(0.0f64, f64::max);
    let full_q = qr.q();
    let cols: Vec<usize> = (0..kept.len())
        .filter(|&i| qr.r()[(i, i)].abs() > 1e-10 * rdiag_max.max(f64::MIN_POSITIVE))
        .collect();
    if cols.is_empty() {
        return None;
    }
    let q = DMatrix::from_fn(b.nrows(), cols.len(), |r, c| full_q[(r, cols[c])]);
    // Whitened pencil on the recovered range: C = L^{-1} (Q^T A Q) L^{-T}
    // with Q^T B Q = L L^T.
    let bp = q.transpose() * b * &q;
    let ap = q.transpose() * a * &q;
    let chol = bp.cholesky()?;
    let li_a = chol.l().solve_lower_triangular(&ap)?;
    let c = chol.l().solve_lower_triangular(&li_a.transpose())?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Some((min, max))
}

// ---------------------------------------------------------------------------
// Test-fixture generators.
// ---------------------------------------------------------------------------

pub fn erdos_renyi<R: Rng>(n: usize, p_edge: f64, rng: &mut R) -> WeightedGraph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen::<f64>() < p_edge {
                edges.push((u, v, 1.0));
            }
        }
    }
    WeightedGraph::new(n, &edges).expect("generator produces valid edges")
}

/// Erdos-Renyi resampled until connected, with weights drawn from `weights`.
pub fn connected_erdos_renyi<R: Rng>(
    n: usize,
    p_edge: f64,
    weight_range: (f64, f64),
    rng: &mut R,
) -> WeightedGraph {
    loop {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen::<f64>() < p_edge {
                    let w = rng.gen_range(weight_range.0..=weight_range.1);
                    edges.push((u, v, w));
                }
            }
        }
        let g = WeightedGraph::new(n, &edges).expect("generator produces valid edges");
        if g.is_connected() {
            return g;
        }
    }
}

pub fn grid_graph(rows: usize, cols: usize) -> WeightedGraph {
    let idx = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if r + 1 < rows {
                edges.push((idx(r, c), idx(r + 1, c), 1.0));
            }
            if c + 1 < cols {
                edges.push((idx(r, c), idx(r, c + 1), 1.0));
            }
        }
    }
    WeightedGraph::new(rows * cols, &edges).expect("grid edges valid")
}

pub fn random_geometric<R: Rng>(n: usize, radius: f64, rng: &mut R) -> WeightedGraph {
    let points: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let dx = points[u].0 - points[v].0;
            let dy = points[u].1 - points[v].1;
            let d = (dx * dx + dy * dy).sqrt();
            if d <= radius {
                edges.push((u, v, d.max(1e-6)));
            }
        }
    }
    WeightedGraph::new(n, &edges).expect("geometric edges valid")
}

/// Scale real weights to integers by `n^3 / eps`, the concrete choice for the
/// integer-weight spanner subroutine; returns the scaled graph and the factor.
pub fn integer_scaled(g: &WeightedGraph, eps: f64) -> (WeightedGraph, f64) {
    let factor = (g.n() as f64).powi(3) / eps;
    let edges: Vec<(usize, usize, f64)> = g
        .edges()
        .iter()
        .map(|&(u, v, w)| (u, v, (w * factor).round().max(1.0)))
        .collect();
    (
        WeightedGraph::new(g.n(), &edges).expect("scaling keeps edges valid"),
        factor,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_edge_laplacian() {
        let g = WeightedGraph::new(2, &[(0, 1, 1.0)]).unwrap();
        let l = g.laplacian();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn triangle_laplacian() {
        let g = WeightedGraph::new(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
        let l = g.laplacian();
        for i in 0..3 {
            assert_eq!(l[(i, i)], 2.0);
            for j in 0..3 {
                if i != j {
                    assert_eq!(l[(i, j)], -1.0);
                }
            }
        }
    }

    #[test]
    fn laplacian_equals_btwb() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = connected_erdos_renyi(8, 0.5, (0.5, 3.0), &mut rng);
        let l = g.laplacian();
        let b = g.incidence();
        let w = DMatrix::from_diagonal(&g.weight_diagonal());
        let btwb = b.transpose() * w * b;
        assert!((l - btwb).abs().max() < 1e-12);
    }

    #[test]
    fn path_distances() {
        let g = WeightedGraph::new(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let d = g.all_pairs_distances();
        assert_eq!(d[(0, 2)], 2.0);
    }

    #[test]
    fn disconnected_distance_is_infinite() {
        let g = WeightedGraph::new(3, &[(0, 1, 1.0)]).unwrap();
        let d = g.all_pairs_distances();
        assert!(d[(0, 2)].is_infinite());
    }

    #[test]
    fn dijkstra_matches_minplus_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let g = connected_erdos_renyi(10, 0.4, (0.1, 5.0), &mut rng);
            let a = g.all_pairs_distances();
            let b = g.all_pairs_distances_minplus();
            assert!((a - b).abs().max() < 1e-9);
        }
    }

    #[test]
    fn quadratic_form_cases() {
        let g = WeightedGraph::new(2, &[(0, 1, 3.0)]).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(g.quadratic_form(&x).unwrap(), 3.0);
        let ones = DVector::from_element(2, 5.0);
        assert_eq!(g.quadratic_form(&ones).unwrap(), 0.0);

        let bad = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            g.quadratic_form(&bad),
            Err(GraphError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn quadratic_form_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = connected_erdos_renyi(9, 0.5, (0.2, 2.0), &mut rng);
        let l = g.laplacian();
        for _ in 0..20 {
            let x = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
            let direct = g.quadratic_form(&x).unwrap();
            let dense = (x.transpose() * &l * &x)[(0, 0)];
            let scale = direct.abs().max(1.0);
            assert!((direct - dense).abs() / scale < 1e-12);
            assert!(direct >= -1e-12);
        }
    }

    #[test]
    fn laplacian_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let g = erdos_renyi(12, 0.4, &mut rng);
            let l = g.laplacian();
            let ones = DVector::from_element(12, 1.0);
            assert!((&l * &ones).abs().max() < 1e-12);
            let eig = l.clone().symmetric_eigen();
            let norm = l.abs().max();
            for &lambda in eig.eigenvalues.iter() {
                assert!(lambda >= -1e-10 * norm.max(1.0));
            }
        }
    }

    #[test]
    fn laplacian_additivity() {
        // Edge-disjoint unions add.
        let g1 = WeightedGraph::new(4, &[(0, 1, 2.0)]).unwrap();
        let g2 = WeightedGraph::new(4, &[(2, 3, 1.5)]).unwrap();
        let both = WeightedGraph::new(4, &[(0, 1, 2.0), (2, 3, 1.5)]).unwrap();
        assert_eq!(g1.laplacian() + g2.laplacian(), both.laplacian());
    }

    #[test]
    fn parallel_edges_merge() {
        let g = WeightedGraph::new(2, &[(0, 1, 1.0), (1, 0, 2.0)]).unwrap();
        assert_eq!(g.m(), 1);
        assert_eq!(g.edges()[0].2, 3.0);
    }

    #[test]
    fn edge_list_parsing() {
        let g = WeightedGraph::parse_edge_list("0 1 2.5\n1 2\n# comment\n").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.m(), 2);
        assert_eq!(g.edges()[0], (0, 1, 2.5));
        assert_eq!(g.edges()[1], (1, 2, 1.0));
    }

    #[test]
    fn pinv_solves_laplacian_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = connected_erdos_renyi(8, 0.6, (0.5, 2.0), &mut rng);
        let l = g.laplacian();
        let mut b = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
        let mean = b.mean();
        b.apply(|x| *x -= mean);
        let x = pinv_apply(&l, &b);
        assert!((&l * &x - &b).norm() < 1e-8 * b.norm().max(1.0));
    }

    #[test]
    fn generalized_eigs_identity_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = connected_erdos_renyi(8, 0.6, (0.5, 2.0), &mut rng);
        let l = g.laplacian();
        let (lo, hi) = generalized_extreme_eigenvalues(&l, &l).unwrap();
        assert!((lo - 1.0).abs() < 1e-8 && (hi - 1.0).abs() < 1e-8);
        let doubled = 2.0 * &l;
        let (lo, hi) = generalized_extreme_eigenvalues(&l, &doubled).unwrap();
        assert!((lo - 0.5).abs() < 1e-8 && (hi - 0.5).abs() < 1e-8);
    }
}
