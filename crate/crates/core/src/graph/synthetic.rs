//! Seeded synthetic graphs and signals for tests, verification and the
//! experiment harness.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::stratified_masks;
use super::{Dataset, Edge, Graph, Masks, SplitRatios};
use crate::error::Result;
use crate::linalg::{symmetric_eigen, LinearOperator};

/// Erdős-Rényi graph `G(n, p)` with unit weights, plus a path through all
/// nodes so that no node is isolated and the graph is connected.
pub fn random_connected(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<Edge> = (1..n).map(|i| Edge::unit(i - 1, i)).collect();
    for i in 0..n {
        for j in (i + 2)..n {
            if rng.random_bool(p) {
                edges.push(Edge::unit(i, j));
            }
        }
    }
    Graph::new(n, edges, false).expect("generated edges are valid")
}

/// Like [`random_connected`] but with weights drawn from `[0.5, 2)`.
pub fn random_weighted(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<Edge> = (1..n).map(|i| Edge::new(i - 1, i, rng.random_range(0.5..2.0))).collect();
    for i in 0..n {
        for j in (i + 2)..n {
            if rng.random_bool(p) {
                edges.push(Edge::new(i, j, rng.random_range(0.5..2.0)));
            }
        }
    }
    Graph::new(n, edges, false).expect("generated edges are valid")
}

/// Directed random graph; every node gets at least one out-edge.
pub fn random_directed(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<Edge> = (0..n).map(|i| Edge::unit(i, (i + 1) % n)).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && j != (i + 1) % n && rng.random_bool(p) {
                edges.push(Edge::unit(i, j));
            }
        }
    }
    Graph::new(n, edges, true).expect("generated edges are valid")
}

/// Stochastic block model: `n` nodes split evenly over `classes` blocks,
/// intra-block edge probability `p_in`, inter-block `p_out`.
/// Returns the graph and the block label of each node.
pub fn sbm(n: usize, classes: usize, p_in: f64, p_out: f64, seed: u64) -> (Graph, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i * classes / n).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push(Edge::unit(i, j));
            }
        }
    }
    (Graph::new(n, edges, false).expect("generated edges are valid"), labels)
}

/// Two disjoint cliques of `size` nodes each, labeled 0 and 1.
pub fn two_cliques(size: usize) -> (Graph, Vec<usize>) {
    let mut edges = Vec::new();
    for offset in [0, size] {
        for i in 0..size {
            for j in (i + 1)..size {
                edges.push(Edge::unit(offset + i, offset + j));
            }
        }
    }
    let labels = (0..2 * size).map(|i| i / size).collect();
    (Graph::new(2 * size, edges, false).expect("generated edges are valid"), labels)
}

/// Gaussian class-mean features: class `c` has mean `separation` in
/// coordinate `c mod n_features` and zero elsewhere, plus unit noise.
pub fn class_features(labels: &[usize], n_features: usize, separation: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    Array2::from_shape_fn((labels.len(), n_features), |(i, j)| {
        let mean = if labels[i] % n_features == j { separation } else { 0.0 };
        mean + noise.sample(&mut rng)
    })
}

/// Dataset built on an SBM graph with class-mean features and a stratified split.
#[allow(clippy::too_many_arguments)]
pub fn sbm_dataset(
    n: usize,
    classes: usize,
    p_in: f64,
    p_out: f64,
    n_features: usize,
    separation: f64,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Dataset> {
    let (graph, labels) = sbm(n, classes, p_in, p_out, seed);
    let features = class_features(&labels, n_features, separation, seed.wrapping_add(1));
    let masks = stratified_masks(&labels, ratios, seed.wrapping_add(2))?;
    Dataset::new(graph, features, labels, masks)
}

/// Two-clique dataset where only the first node of each clique is labeled
/// for training and every other node is test.
pub fn two_clique_dataset(size: usize, n_features: usize) -> Result<Dataset> {
    let (graph, labels) = two_cliques(size);
    let n = 2 * size;
    let features = Array2::from_shape_fn((n, n_features), |(i, j)| if labels[i] == j % 2 { 1.0 } else { 0.0 });
    let train: Vec<bool> = (0..n).map(|i| i % size == 0).collect();
    let masks = Masks {
        test: train.iter().map(|&t| !t).collect(),
        val: vec![false; n],
        train,
    };
    Dataset::new(graph, features, labels, masks)
}

/// Smooth signal: each column a random combination of the `k` lowest
/// nontrivial Laplacian eigenvectors, scaled to unit root-mean-square.
/// Requires an undirected graph small enough for a dense eigendecomposition.
pub fn low_frequency_signal(g: &Graph, k: usize, n_features: usize, seed: u64) -> Result<Array2<f64>> {
    let n = g.n_nodes();
    let (_, vectors) = symmetric_eigen(g.normalized_laplacian().to_dense().view())?;
    let k = k.min(n.saturating_sub(1)).max(1);
    let basis = vectors.slice(s![.., 1..=k.min(n - 1)]).to_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mix = Array2::from_shape_fn((basis.ncols(), n_features), |_| normal.sample(&mut rng));
    let mut signal = basis.dot(&mix);
    for mut col in signal.columns_mut() {
        let rms = (col.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if rms > 0.0 {
            col /= rms;
        }
    }
    Ok(signal)
}

/// I.i.d. zero-mean Gaussian noise of standard deviation `sigma`.
pub fn gaussian_noise(rows: usize, cols: usize, sigma: f64, seed: u64) -> Array2<f64> {
    if sigma == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and nonnegative");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(&mut rng))
}
