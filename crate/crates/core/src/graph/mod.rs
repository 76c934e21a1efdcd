//! Weighted graphs, the normalized Laplacian, and homophily.

mod dataset;
pub mod synthetic;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, LinearOperator};

pub use dataset::{load_dataset, random_split, save_dataset, Dataset, LoadOptions, Masks, SplitRatios};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

impl Edge {
    pub fn new(src: usize, dst: usize, weight: f64) -> Self {
        Self { src, dst, weight }
    }

    pub fn unit(src: usize, dst: usize) -> Self {
        Self::new(src, dst, 1.0)
    }
}

/// Immutable weighted graph.
///
/// Undirected graphs store each edge once (with `src <= dst`) and expose it
/// symmetrically through [`Graph::adjacency`]. Directed graphs store one edge
/// per ordered pair.
#[derive(Debug, Clone)]
pub struct Graph {
    n_nodes: usize,
    directed: bool,
    edges: Vec<Edge>,
    adjacency: CsrMatrix,
}

impl Graph {
    /// Validate and build a graph.
    ///
    /// Repeated pairs carrying the same weight collapse into one edge; for an
    /// undirected graph `(i, j)` and `(j, i)` are the same pair. A repeated
    /// pair with a different weight is rejected.
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = Edge>, directed: bool) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidGraph("graph must have at least one node".into()));
        }
        let mut unique: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for e in edges {
            if e.src >= n_nodes || e.dst >= n_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) out of range for {} nodes",
                    e.src, e.dst, n_nodes
                )));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) has invalid weight {}",
                    e.src, e.dst, e.weight
                )));
            }
            let key = if directed { (e.src, e.dst) } else { (e.src.min(e.dst), e.src.max(e.dst)) };
            match unique.get(&key) {
                Some(&w) if w != e.weight => {
                    return Err(Error::InvalidGraph(format!(
                        "edge ({}, {}) given twice with weights {} and {}",
                        key.0, key.1, w, e.weight
                    )))
                }
                Some(_) => {}
                None => {
                    unique.insert(key, e.weight);
                }
            }
        }
        let edges: Vec<Edge> = unique.into_iter().map(|((s, d), w)| Edge::new(s, d, w)).collect();
        let mut triplets = Vec::with_capacity(2 * edges.len());
        for e in &edges {
            triplets.push((e.src, e.dst, e.weight));
            if !directed && e.src != e.dst {
                triplets.push((e.dst, e.src, e.weight));
            }
        }
        let adjacency = CsrMatrix::from_triplets(n_nodes, n_nodes, triplets);
        Ok(Self {
            n_nodes,
            directed,
            edges,
            adjacency,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Number of stored edges (undirected edges counted once).
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Weight matrix `W` in CSR form; symmetric iff the graph is undirected.
    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    /// Out-neighbors of `i` (all neighbors for undirected graphs).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.adjacency.row(i).0
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.adjacency.get(i, j)
    }

    /// Row sums `d_i = Σ_j w_ij` (out-degrees when directed).
    pub fn degrees(&self) -> Array1<f64> {
        self.adjacency.row_sums()
    }

    /// Undirected copy where each unordered pair keeps the larger of its two
    /// directed weights.
    pub fn symmetrized(&self) -> Self {
        if !self.directed {
            return self.clone();
        }
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for e in &self.edges {
            let key = (e.src.min(e.dst), e.src.max(e.dst));
            let w = merged.entry(key).or_insert(0.0);
            *w = w.max(e.weight);
        }
        let edges = merged.into_iter().map(|((s, d), w)| Edge::new(s, d, w));
        Self::new(self.n_nodes, edges, false).expect("symmetrization of a valid graph")
    }

    pub fn weight_matrix(&self) -> Array2<f64> {
        self.adjacency.to_dense()
    }

    pub fn normalized_laplacian(&self) -> NormalizedLaplacian {
        NormalizedLaplacian::new(self)
    }
}

/// Matrix-free `L̃ = I − D^{-1/2} W D^{-1/2}`.
///
/// Nodes with zero degree get `D^{-1/2} = 0` and a zero diagonal, so their
/// row and column of `L̃` vanish.
#[derive(Debug, Clone)]
pub struct NormalizedLaplacian {
    normalized_adjacency: CsrMatrix,
    normalized_adjacency_t: CsrMatrix,
    active: Vec<bool>,
    directed: bool,
}

impl NormalizedLaplacian {
    fn new(g: &Graph) -> Self {
        let inv_sqrt = inv_sqrt_degrees(&g.degrees());
        let normalized_adjacency = g.adjacency().map_values(|i, j, w| inv_sqrt[i] * w * inv_sqrt[j]);
        let normalized_adjacency_t = normalized_adjacency.transpose();
        Self {
            normalized_adjacency,
            normalized_adjacency_t,
            active: inv_sqrt.iter().map(|&v| v > 0.0).collect(),
            directed: g.is_directed(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        !self.directed
    }

    /// `D^{-1/2} W D^{-1/2}`.
    pub fn normalized_adjacency(&self) -> &CsrMatrix {
        &self.normalized_adjacency
    }

    fn masked(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (mut row, &on) in out.axis_iter_mut(Axis(0)).zip(&self.active) {
            if !on {
                row.fill(0.0);
            }
        }
        out
    }
}

impl LinearOperator for NormalizedLaplacian {
    fn dim(&self) -> usize {
        self.active.len()
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.masked(x) - self.normalized_adjacency.mul_dense(x)
    }

    fn apply_transpose(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.masked(x) - self.normalized_adjacency_t.mul_dense(x)
    }
}

/// `d^{-1/2}` with the zero-degree convention.
pub fn inv_sqrt_degrees(d: &Array1<f64>) -> Array1<f64> {
    d.mapv(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 })
}

/// Mean, over nodes with at least one (out-)neighbor, of the fraction of
/// neighbors sharing the node's label.
///
/// Returns `NaN` when no node has a neighbor.
pub fn homophily(g: &Graph, labels: &[usize]) -> Result<f64> {
    if labels.len() != g.n_nodes() {
        return Err(Error::Shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            g.n_nodes()
        )));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..g.n_nodes() {
        let nbrs = g.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        let same = nbrs.iter().filter(|&&j| labels[j] == labels[i]).count();
        total += same as f64 / nbrs.len() as f64;
        counted += 1;
    }
    Ok(if counted == 0 { f64::NAN } else { total / counted as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, PowerIteration};
    use ndarray::array;
    use proptest::prelude::*;

    fn path2() -> Graph {
        Graph::new(2, [Edge::unit(0, 1)], false).unwrap()
    }

    fn triangle() -> Graph {
        Graph::new(3, [Edge::unit(0, 1), Edge::unit(1, 2), Edge::unit(0, 2)], false).unwrap()
    }

    /// Dense `I − D^{-1/2} W D^{-1/2}` computed straight from the definition.
    fn dense_laplacian(g: &Graph) -> Array2<f64> {
        let w = g.weight_matrix();
        let d = w.sum_axis(Axis(1));
        let n = g.n_nodes();
        Array2::from_shape_fn((n, n), |(i, j)| {
            if d[i] == 0.0 || d[j] == 0.0 {
                return 0.0;
            }
            let id = if i == j { 1.0 } else { 0.0 };
            id - w[[i, j]] / (d[i] * d[j]).sqrt()
        })
    }

    #[test]
    fn path_laplacian() {
        let l = path2().normalized_laplacian().to_dense();
        assert_eq!(l, array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn edgeless_laplacian_is_zero() {
        let g = Graph::new(4, [], false).unwrap();
        assert_eq!(g.normalized_laplacian().to_dense(), Array2::<f64>::zeros((4, 4)));
    }

    #[test]
    fn triangle_laplacian() {
        let l = triangle().normalized_laplacian().to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { -0.5 };
                assert!((l[[i, j]] - expected).abs() < 1e-15);
            }
        }
        assert!(max_abs_diff(l.view(), dense_laplacian(&triangle()).view()) < 1e-15);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(
            Graph::new(2, [Edge::new(0, 1, -1.0)], false),
            Err(Error::InvalidGraph(_))
        ));
        assert!(Graph::new(2, [Edge::unit(0, 2)], false).is_err());
        assert!(Graph::new(2, [Edge::unit(0, 1), Edge::new(1, 0, 2.0)], false).is_err());
        assert!(Graph::new(0, [], false).is_err());
    }

    #[test]
    fn undirected_duplicates_merge() {
        let g = Graph::new(2, [Edge::unit(0, 1), Edge::unit(1, 0)], false).unwrap();
        assert_eq!(g.n_edges(), 1);
        assert_eq!(g.weight(1, 0), Some(1.0));
        let d = Graph::new(2, [Edge::unit(0, 1), Edge::unit(1, 0)], true).unwrap();
        assert_eq!(d.n_edges(), 2);
    }

    #[test]
    fn directed_laplacian_uses_out_degree() {
        let g = Graph::new(3, [Edge::unit(0, 1), Edge::unit(0, 2), Edge::unit(1, 2)], true).unwrap();
        assert_eq!(g.degrees(), array![2.0, 1.0, 0.0]);
        let l = g.normalized_laplacian();
        assert!(!l.is_symmetric());
        assert!(max_abs_diff(l.to_dense().view(), dense_laplacian(&g).view()) < 1e-15);
        let lt = l.apply_transpose(Array2::eye(3).view());
        assert!(max_abs_diff(lt.view(), l.to_dense().t()) < 1e-15);
    }

    #[test]
    fn symmetrize_keeps_max_weight() {
        let g = Graph::new(2, [Edge::new(0, 1, 1.0), Edge::new(1, 0, 3.0)], true).unwrap();
        let s = g.symmetrized();
        assert!(!s.is_directed());
        assert_eq!(s.weight(0, 1), Some(3.0));
        assert_eq!(s.weight(1, 0), Some(3.0));
    }

    #[test]
    fn homophily_examples() {
        let t = triangle();
        assert_eq!(homophily(&t, &[0, 0, 0]).unwrap(), 1.0);
        let h = homophily(&t, &[0, 0, 1]).unwrap();
        assert!((h - 1.0 / 3.0).abs() < 1e-15);
        // isolated node 3 is excluded
        let g = Graph::new(4, [Edge::unit(0, 1), Edge::unit(1, 2), Edge::unit(0, 2)], false).unwrap();
        assert!((homophily(&g, &[0, 0, 1, 1]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(homophily(&Graph::new(2, [], false).unwrap(), &[0, 1]).unwrap().is_nan());
        assert!(homophily(&t, &[0, 1]).is_err());
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (3usize..40).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n, 0.1f64..3.0), 1..4 * n).prop_map(move |es| {
                let edges = es.into_iter().filter(|(a, b, _)| a != b).map(|(a, b, w)| Edge::new(a, b, w));
                let mut uniq: BTreeMap<(usize, usize), f64> = BTreeMap::new();
                for e in edges {
                    uniq.entry((e.src.min(e.dst), e.src.max(e.dst))).or_insert(e.weight);
                }
                Graph::new(n, uniq.into_iter().map(|((a, b), w)| Edge::new(a, b, w)), false).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn sqrt_degree_is_null_vector(g in arb_graph()) {
            let d = g.degrees();
            let v = Array2::from_shape_fn((g.n_nodes(), 1), |(i, _)| d[i].sqrt());
            let out = g.normalized_laplacian().apply(v.view());
            prop_assert!(out.iter().all(|x| x.abs() < 1e-12));
        }

        #[test]
        fn spectrum_bounded_by_two(g in arb_graph()) {
            let lam = PowerIteration::default().largest_eigenvalue(&g.normalized_laplacian());
            prop_assert!(lam <= 2.0 + 1e-9, "lambda_max = {}", lam);
        }

        #[test]
        fn operator_matches_dense_definition(g in arb_graph()) {
            let l = g.normalized_laplacian();
            prop_assert!(max_abs_diff(l.to_dense().view(), dense_laplacian(&g).view()) < 1e-14);
        }

        #[test]
        fn homophily_label_permutation_invariant(
            g in arb_graph(),
            seed in any::<u64>(),
        ) {
            let n = g.n_nodes();
            let labels: Vec<usize> = (0..n).map(|i| ((i as u64).wrapping_mul(seed | 1) % 4) as usize).collect();
            // relabel the alphabet 0→2, 1→0, 2→3, 3→1
            let perm = [2usize, 0, 3, 1];
            let relabeled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
            let a = homophily(&g, &labels).unwrap();
            let b = homophily(&g, &relabeled).unwrap();
            prop_assert!((a.is_nan() && b.is_nan()) || (a - b).abs() < 1e-15);
            prop_assert!(a.is_nan() || (0.0..=1.0).contains(&a));
        }
    }
}
