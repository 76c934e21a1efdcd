//! Undecimated quasi-framelet transforms on graphs.
//!
//! For a bank `g_0..g_K`, level `L`, dilation `s` and coarsest scale `m`
//! the transform stacks
//!
//! ```text
//! W_{0,L} = g_0(L̃/s^{m+L}) ⋯ g_0(L̃/s^m)
//! W_{k,0} = g_k(L̃/s^m)                                  k = 1..K
//! W_{k,ℓ} = g_k(L̃/s^{m+ℓ}) g_0(L̃/s^{m+ℓ-1}) ⋯ g_0(L̃/s^m)  ℓ = 1..L
//! ```
//!
//! in the block order `(0, L)`, then `(1, 0) .. (K, 0)`, `(1, 1) .. (K, L)`.
//! In exact mode the functions are applied through a dense eigendecomposition
//! of `L̃`; in Chebyshev mode every factor is a degree-`n` Chebyshev
//! interpolant applied matrix-free.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{chebyshev_apply, chebyshev_apply_transpose, chebyshev_fit, ChebyshevApprox, FilterBank};
use crate::graph::{Graph, NormalizedLaplacian};
use crate::linalg::{frobenius_norm, symmetric_eigen, LinearOperator, PowerIteration, ScaledOperator};

static NEXT_SYSTEM_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformMode {
    Exact,
    Chebyshev { degree: usize },
}

impl Default for TransformMode {
    fn default() -> Self {
        TransformMode::Chebyshev { degree: 3 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    /// Largest graph accepted in exact mode.
    pub dense_cap: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { dense_cap: 3000 }
    }
}

/// `(band, level)`: band 0 is the low-pass product, bands `1..=K` high-pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockIndex {
    pub band: usize,
    pub level: usize,
}

/// Smallest integer `m` with `s^{-m} λ_max ≤ π`; 0 for an empty spectrum.
pub fn coarsest_scale(lambda_max: f64, dilation: f64) -> i32 {
    if lambda_max <= 0.0 {
        return 0;
    }
    let mut m = ((lambda_max / PI).ln() / dilation.ln()).ceil() as i32;
    while lambda_max * dilation.powi(-(m - 1)) <= PI {
        m -= 1;
    }
    while lambda_max * dilation.powi(-m) > PI {
        m += 1;
    }
    m
}

#[derive(Debug)]
enum Operators {
    Exact {
        eigenvectors: Array2<f64>,
        /// Diagonal spectral response of each block.
        responses: Vec<Array1<f64>>,
    },
    Chebyshev {
        laplacian: NormalizedLaplacian,
        /// One fit per scaling function, shared by all scales.
        approxes: Vec<ChebyshevApprox>,
    },
}

#[derive(Debug)]
pub struct FrameletSystem {
    id: u64,
    n_nodes: usize,
    directed: bool,
    bank: FilterBank,
    level: usize,
    dilation: f64,
    coarsest_scale: i32,
    lambda_max: f64,
    mode: TransformMode,
    blocks: Vec<BlockIndex>,
    operators: Operators,
}

pub fn build_system(g: &Graph, bank: &FilterBank, level: usize, dilation: f64, mode: TransformMode) -> Result<FrameletSystem> {
    build_system_with(g, bank, level, dilation, mode, BuildOptions::default())
}

pub fn build_system_with(
    g: &Graph,
    bank: &FilterBank,
    level: usize,
    dilation: f64,
    mode: TransformMode,
    opts: BuildOptions,
) -> Result<FrameletSystem> {
    if !(dilation > 1.0 && dilation.is_finite()) {
        return Err(Error::Config(format!("dilation scale must be > 1, got {dilation}")));
    }
    let laplacian = g.normalized_laplacian();
    let lambda_max = if g.is_directed() {
        2.0
    } else {
        PowerIteration::default().largest_eigenvalue(&laplacian)
    };
    let m = coarsest_scale(lambda_max, dilation);
    let k = bank.k();
    let mut blocks = vec![BlockIndex { band: 0, level }];
    for l in 0..=level {
        for band in 1..=k {
            blocks.push(BlockIndex { band, level: l });
        }
    }

    let operators = match mode {
        TransformMode::Exact => {
            if g.is_directed() {
                return Err(Error::Config("exact framelet mode requires an undirected graph".into()));
            }
            if g.n_nodes() > opts.dense_cap {
                return Err(Error::Config(format!(
                    "exact framelet mode limited to {} nodes, graph has {}",
                    opts.dense_cap,
                    g.n_nodes()
                )));
            }
            let (eigenvalues, eigenvectors) = symmetric_eigen(laplacian.to_dense().view())?;
            let scaled = |l: usize| eigenvalues.mapv(|lam| lam * dilation.powi(-(m + l as i32)));
            let mut low_prefix = vec![Array1::<f64>::ones(g.n_nodes())];
            for l in 0..=level {
                let next = &low_prefix[l] * &scaled(l).mapv(|xi| bank.eval(0, xi));
                low_prefix.push(next);
            }
            let responses = blocks
                .iter()
                .map(|b| {
                    if b.band == 0 {
                        low_prefix[level + 1].clone()
                    } else {
                        &low_prefix[b.level] * &scaled(b.level).mapv(|xi| bank.eval(b.band, xi))
                    }
                })
                .collect();
            Operators::Exact {
                eigenvectors,
                responses,
            }
        }
        TransformMode::Chebyshev { degree } => {
            let approxes = (0..=k)
                .map(|band| chebyshev_fit(|xi| bank.eval(band, xi), degree))
                .collect::<Result<Vec<_>>>()?;
            Operators::Chebyshev { laplacian, approxes }
        }
    };

    Ok(FrameletSystem {
        id: NEXT_SYSTEM_ID.fetch_add(1, Ordering::Relaxed),
        n_nodes: g.n_nodes(),
        directed: g.is_directed(),
        bank: bank.clone(),
        level,
        dilation,
        coarsest_scale: m,
        lambda_max,
        mode,
        blocks,
        operators,
    })
}

impl FrameletSystem {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dilation(&self) -> f64 {
        self.dilation
    }

    pub fn coarsest_scale(&self) -> i32 {
        self.coarsest_scale
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn mode(&self) -> TransformMode {
        self.mode
    }

    pub fn blocks(&self) -> &[BlockIndex] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    fn scale_factor(&self, level: usize) -> f64 {
        self.dilation.powi(-(self.coarsest_scale + level as i32))
    }

    fn check_rows(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.nrows() != self.n_nodes {
            return Err(Error::Shape(format!(
                "signal has {} rows, system has {} nodes",
                x.nrows(),
                self.n_nodes
            )));
        }
        Ok(())
    }

    /// `g_band(L̃ / s^{m+level}) X`, or its transpose.
    fn cheb_factor(&self, band: usize, level: usize, x: ArrayView2<'_, f64>, transpose: bool) -> Array2<f64> {
        let Operators::Chebyshev { laplacian, approxes } = &self.operators else {
            unreachable!("chebyshev factor on an exact system")
        };
        let op = ScaledOperator {
            inner: laplacian,
            factor: self.scale_factor(level),
        };
        let out = if transpose {
            chebyshev_apply_transpose(&approxes[band], &op, x)
        } else {
            chebyshev_apply(&approxes[band], &op, x)
        };
        out.expect("row count checked by caller")
    }

    /// `W_b X` for a single block.
    pub fn apply_block(&self, b: usize, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_rows(x)?;
        let idx = self.blocks[b];
        Ok(match &self.operators {
            Operators::Exact {
                eigenvectors,
                responses,
            } => spectral_apply(eigenvectors, &responses[b], x),
            Operators::Chebyshev { .. } => {
                let (top, lows) = if idx.band == 0 { (self.level, self.level + 1) } else { (idx.level, idx.level) };
                let mut acc = x.to_owned();
                for l in 0..lows {
                    acc = self.cheb_factor(0, l, acc.view(), false);
                }
                if idx.band != 0 {
                    acc = self.cheb_factor(idx.band, top, acc.view(), false);
                }
                acc
            }
        })
    }

    /// `W_bᵀ X` for a single block.
    pub fn apply_block_transpose(&self, b: usize, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_rows(x)?;
        let idx = self.blocks[b];
        Ok(match &self.operators {
            Operators::Exact {
                eigenvectors,
                responses,
            } => spectral_apply(eigenvectors, &responses[b], x),
            Operators::Chebyshev { .. } => {
                let mut acc = x.to_owned();
                let lows = if idx.band == 0 {
                    self.level + 1
                } else {
                    acc = self.cheb_factor(idx.band, idx.level, acc.view(), true);
                    idx.level
                };
                for l in (0..lows).rev() {
                    acc = self.cheb_factor(0, l, acc.view(), true);
                }
                acc
            }
        })
    }

    /// Dense matrix of block `b`.
    pub fn block_matrix(&self, b: usize) -> Array2<f64> {
        self.apply_block(b, Array2::eye(self.n_nodes).view()).expect("identity has matching rows")
    }
}

/// `U diag(h) Uᵀ X`
fn spectral_apply(u: &Array2<f64>, h: &Array1<f64>, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut coeffs = u.t().dot(&x);
    for (mut row, &hv) in coeffs.axis_iter_mut(Axis(0)).zip(h) {
        row *= hv;
    }
    u.dot(&coeffs)
}

/// Framelet coefficients `W X`, one `n × f` block per operator.
#[derive(Debug, Clone)]
pub struct FrameletCoefficients {
    blocks: Vec<Array2<f64>>,
    system_id: u64,
}

impl FrameletCoefficients {
    /// Bind externally produced blocks to `sys`, checking count and shapes.
    pub fn from_blocks(sys: &FrameletSystem, blocks: Vec<Array2<f64>>) -> Result<Self> {
        if blocks.len() != sys.n_blocks() {
            return Err(Error::Shape(format!(
                "{} coefficient blocks for a system with {}",
                blocks.len(),
                sys.n_blocks()
            )));
        }
        let cols = blocks.first().map_or(0, |b| b.ncols());
        if blocks.iter().any(|b| b.nrows() != sys.n_nodes || b.ncols() != cols) {
            return Err(Error::Shape("coefficient block shapes differ from the system".into()));
        }
        Ok(Self {
            blocks,
            system_id: sys.id,
        })
    }

    pub fn blocks(&self) -> &[Array2<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.blocks
    }

    pub fn into_blocks(self) -> Vec<Array2<f64>> {
        self.blocks
    }

    pub fn is_from(&self, sys: &FrameletSystem) -> bool {
        self.system_id == sys.id
    }

    /// `Σ_b ‖block_b‖²_F`
    pub fn energy(&self) -> f64 {
        self.blocks.iter().map(|b| frobenius_norm(b.view()).powi(2)).sum()
    }
}

/// `block_b = W_b X` for every operator.
pub fn decompose(sys: &FrameletSystem, x: ArrayView2<'_, f64>) -> Result<FrameletCoefficients> {
    sys.check_rows(x)?;
    let blocks = match &sys.operators {
        Operators::Exact {
            eigenvectors,
            responses,
        } => {
            let spectral = eigenvectors.t().dot(&x);
            responses
                .iter()
                .map(|h| {
                    let mut c = spectral.clone();
                    for (mut row, &hv) in c.axis_iter_mut(Axis(0)).zip(h) {
                        row *= hv;
                    }
                    eigenvectors.dot(&c)
                })
                .collect()
        }
        Operators::Chebyshev { .. } => {
            let k = sys.bank.k();
            let mut out: Vec<Array2<f64>> = Vec::with_capacity(sys.n_blocks());
            out.push(Array2::zeros((0, 0)));
            // prefix_l = g_0(L̃/s^{m+l-1}) ⋯ g_0(L̃/s^m) X
            let mut prefix = x.to_owned();
            for l in 0..=sys.level {
                for band in 1..=k {
                    out.push(sys.cheb_factor(band, l, prefix.view(), false));
                }
                prefix = sys.cheb_factor(0, l, prefix.view(), false);
            }
            out[0] = prefix;
            out
        }
    };
    Ok(FrameletCoefficients {
        blocks,
        system_id: sys.id,
    })
}

/// `Σ_b W_bᵀ block_b`, summed in block order.
pub fn reconstruct(sys: &FrameletSystem, coeffs: &FrameletCoefficients) -> Result<Array2<f64>> {
    if !coeffs.is_from(sys) {
        return Err(Error::SystemMismatch);
    }
    match &sys.operators {
        Operators::Exact {
            eigenvectors,
            responses,
        } => {
            let cols = coeffs.blocks[0].ncols();
            let mut spectral = Array2::<f64>::zeros((sys.n_nodes, cols));
            for (block, h) in coeffs.blocks.iter().zip(responses) {
                let mut c = eigenvectors.t().dot(block);
                for (mut row, &hv) in c.axis_iter_mut(Axis(0)).zip(h) {
                    row *= hv;
                }
                spectral += &c;
            }
            Ok(eigenvectors.dot(&spectral))
        }
        Operators::Chebyshev { .. } => {
            let k = sys.bank.k();
            let high = |band: usize, level: usize| &coeffs.blocks[1 + level * k + (band - 1)];
            // nested evaluation from the finest level down to the coarsest
            let mut acc = sys.cheb_factor(0, sys.level, coeffs.blocks[0].view(), true);
            for l in (0..=sys.level).rev() {
                if l < sys.level {
                    acc = sys.cheb_factor(0, l, acc.view(), true);
                }
                for band in 1..=k {
                    acc += &sys.cheb_factor(band, l, high(band, l).view(), true);
                }
            }
            Ok(acc)
        }
    }
}

/// Per-block diagonal filter `θ`, one length-`n` vector per block.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta(pub Vec<Array1<f64>>);

impl Theta {
    pub fn ones(sys: &FrameletSystem) -> Self {
        Self::from_gains(sys, &vec![1.0; sys.n_blocks()])
    }

    /// `θ_b = gains[b] · 1`
    pub fn from_gains(sys: &FrameletSystem, gains: &[f64]) -> Self {
        Self(gains.iter().map(|&g| Array1::from_elem(sys.n_nodes, g)).collect())
    }

    pub fn n_blocks(&self) -> usize {
        self.0.len()
    }

    pub fn check(&self, sys: &FrameletSystem) -> Result<()> {
        if self.0.len() != sys.n_blocks() {
            return Err(Error::Shape(format!(
                "theta has {} blocks, system has {}",
                self.0.len(),
                sys.n_blocks()
            )));
        }
        if self.0.iter().any(|t| t.len() != sys.n_nodes) {
            return Err(Error::Shape("theta vector length differs from node count".into()));
        }
        Ok(())
    }
}

/// Scale the rows of `x` by `diag`.
pub(crate) fn scale_rows(mut x: Array2<f64>, diag: &Array1<f64>) -> Array2<f64> {
    for (mut row, &d) in x.axis_iter_mut(Axis(0)).zip(diag) {
        row *= d;
    }
    x
}

/// `Wᵀ diag(θ) W X`
pub fn framelet_conv(sys: &FrameletSystem, theta: &Theta, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    theta.check(sys)?;
    let mut coeffs = decompose(sys, x)?;
    for (block, t) in coeffs.blocks.iter_mut().zip(&theta.0) {
        *block = scale_rows(std::mem::take(block), t);
    }
    reconstruct(sys, &coeffs)
}

/// `‖Σ_b W_bᵀ W_b − I‖_F` from dense block matrices.
pub fn tight_frame_residual(sys: &FrameletSystem) -> f64 {
    let n = sys.n_nodes;
    let mut gram = Array2::<f64>::zeros((n, n));
    for b in 0..sys.n_blocks() {
        let w = sys.block_matrix(b);
        gram += &w.t().dot(&w);
    }
    gram -= &Array2::eye(n);
    frobenius_norm(gram.view())
}

/// `‖reconstruct(decompose(X)) − X‖_F / ‖X‖_F`
pub fn round_trip_error(sys: &FrameletSystem, x: ArrayView2<'_, f64>) -> Result<f64> {
    let back = reconstruct(sys, &decompose(sys, x)?)?;
    Ok(crate::linalg::relative_error(back.view(), x))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CoefficientManifest {
    bank: String,
    level: usize,
    dilation: f64,
    coarsest_scale: i32,
    mode: TransformMode,
    n_nodes: usize,
    blocks: Vec<ManifestBlock>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct ManifestBlock {
    file: String,
    band: usize,
    level: usize,
}

impl CoefficientManifest {
    fn for_system(sys: &FrameletSystem) -> Self {
        Self {
            bank: sys.bank.name.clone(),
            level: sys.level,
            dilation: sys.dilation,
            coarsest_scale: sys.coarsest_scale,
            mode: sys.mode,
            n_nodes: sys.n_nodes,
            blocks: sys
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| ManifestBlock {
                    file: format!("block_{i:03}_band{}_level{}.csv", b.band, b.level),
                    band: b.band,
                    level: b.level,
                })
                .collect(),
        }
    }
}

pub(crate) fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::load(path, k + 1, format!("cannot parse {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.first().is_some_and(|r| r.len() != row.len()) {
            return Err(Error::load(path, k + 1, "ragged row"));
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), cols), flat).expect("rectangular rows"))
}

/// Write the blocks as CSV matrices plus a `manifest.json`.
pub fn save_coefficients(sys: &FrameletSystem, coeffs: &FrameletCoefficients, dir: &Path) -> Result<()> {
    if !coeffs.is_from(sys) {
        return Err(Error::SystemMismatch);
    }
    fs::create_dir_all(dir)?;
    let manifest = CoefficientManifest::for_system(sys);
    for (entry, block) in manifest.blocks.iter().zip(&coeffs.blocks) {
        write_matrix_csv(&dir.join(&entry.file), block)?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Read coefficients written by [`save_coefficients`], requiring the manifest
/// to describe `sys`.
pub fn load_coefficients(sys: &FrameletSystem, dir: &Path) -> Result<FrameletCoefficients> {
    let manifest: CoefficientManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest != CoefficientManifest::for_system(sys) {
        return Err(Error::SystemMismatch);
    }
    let blocks = manifest
        .blocks
        .iter()
        .map(|b| read_matrix_csv(&dir.join(&b.file)))
        .collect::<Result<Vec<_>>>()?;
    FrameletCoefficients::from_blocks(sys, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::builtin_bank;
    use crate::graph::synthetic::{random_connected, random_directed, random_weighted};
    use crate::graph::Edge;
    use crate::linalg::{max_abs_diff, relative_error};
    use ndarray::array;
    use proptest::prelude::*;

    fn signal(n: usize, f: usize, seed: u64) -> Array2<f64> {
        Array2::from_shape_fn((n, f), |(i, j)| ((i * 31 + j * 17) as f64 + seed as f64 * 0.37).sin())
    }

    fn path2() -> Graph {
        Graph::new(2, [Edge::unit(0, 1)], false).unwrap()
    }

    #[test]
    fn block_counts() {
        let g = random_connected(10, 0.3, 1);
        let lin = builtin_bank("linear").unwrap();
        let sys = build_system(&g, &lin, 1, 2.0, TransformMode::Exact).unwrap();
        assert_eq!(sys.n_blocks(), 5);
        assert_eq!(
            sys.blocks(),
            &[
                BlockIndex { band: 0, level: 1 },
                BlockIndex { band: 1, level: 0 },
                BlockIndex { band: 2, level: 0 },
                BlockIndex { band: 1, level: 1 },
                BlockIndex { band: 2, level: 1 },
            ]
        );
        let haar = builtin_bank("haar").unwrap();
        assert_eq!(build_system(&g, &haar, 0, 2.0, TransformMode::Exact).unwrap().n_blocks(), 2);
        assert_eq!(build_system(&g, &lin, 3, 1.5, TransformMode::Chebyshev { degree: 3 }).unwrap().n_blocks(), 9);
    }

    #[test]
    fn coarsest_scale_rule() {
        // direct search oracle over a window of integers
        let search = |lam: f64, s: f64| (-60..60).find(|&m| lam * s.powi(-m) <= PI).unwrap();
        assert_eq!(coarsest_scale(2.0, 2.0), 0);
        for &(lam, s) in &[(2.0, 1.5), (1.7, 3.0), (2.0, 6.0), (PI, 2.0), (PI * 2.0, 2.0), (0.01, 1.1), (1.999, 1.01)] {
            assert_eq!(coarsest_scale(lam, s), search(lam, s), "lam {lam} s {s}");
        }
        assert_eq!(coarsest_scale(0.0, 2.0), 0);
    }

    #[test]
    fn path_system_scale() {
        let sys = build_system(&path2(), &builtin_bank("haar").unwrap(), 0, 2.0, TransformMode::Exact).unwrap();
        assert!((sys.lambda_max() - 2.0).abs() < 1e-6);
        assert_eq!(sys.coarsest_scale(), 0);
    }

    #[test]
    fn haar_level_zero_matches_spectral_definition() {
        let g = random_connected(12, 0.3, 4);
        let sys = build_system(&g, &builtin_bank("haar").unwrap(), 0, 2.0, TransformMode::Exact).unwrap();
        let (vals, vecs) = symmetric_eigen(g.normalized_laplacian().to_dense().view()).unwrap();
        let m = sys.coarsest_scale();
        for (b, f) in [(0usize, (|x: f64| (x / 2.0).cos()) as fn(f64) -> f64), (1, |x: f64| (x / 2.0).sin())] {
            let h = vals.mapv(|l| f(l * 2f64.powi(-m)));
            let expected = vecs.dot(&Array2::from_diag(&h)).dot(&vecs.t());
            assert!(max_abs_diff(sys.block_matrix(b).view(), expected.view()) < 1e-12);
        }
    }

    #[test]
    fn invalid_builds() {
        let g = random_connected(6, 0.3, 1);
        let bank = builtin_bank("haar").unwrap();
        assert!(matches!(build_system(&g, &bank, 1, 1.0, TransformMode::Exact), Err(Error::Config(_))));
        let d = random_directed(6, 0.2, 1);
        assert!(build_system(&d, &bank, 1, 2.0, TransformMode::Exact).is_err());
        assert!(build_system(&d, &bank, 1, 2.0, TransformMode::Chebyshev { degree: 3 }).is_ok());
        let small = BuildOptions { dense_cap: 5 };
        assert!(build_system_with(&g, &bank, 1, 2.0, TransformMode::Exact, small).is_err());
    }

    #[test]
    fn zero_signal_and_zero_coefficients() {
        let g = random_connected(10, 0.3, 2);
        let sys = build_system(&g, &builtin_bank("linear").unwrap(), 1, 2.0, TransformMode::Exact).unwrap();
        let c = decompose(&sys, Array2::<f64>::zeros((10, 3)).view()).unwrap();
        assert!(c.blocks().iter().all(|b| b.iter().all(|&v| v == 0.0)));
        let back = reconstruct(&sys, &c).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_round_trip_and_energy() {
        let g = random_weighted(25, 0.2, 7);
        let x = signal(25, 4, 1);
        for bank in ["haar", "linear"] {
            for level in 0..3 {
                let sys = build_system(&g, &builtin_bank(bank).unwrap(), level, 2.0, TransformMode::Exact).unwrap();
                let c = decompose(&sys, x.view()).unwrap();
                let energy = frobenius_norm(x.view()).powi(2);
                assert!((c.energy() - energy).abs() / energy < 1e-8);
                let back = reconstruct(&sys, &c).unwrap();
                assert!(relative_error(back.view(), x.view()) < 1e-8);
            }
        }
    }

    #[test]
    fn chebyshev_matches_exact() {
        let g = random_connected(20, 0.25, 11);
        let bank = builtin_bank("linear").unwrap();
        let x = signal(20, 3, 2);
        let exact = build_system(&g, &bank, 1, 2.0, TransformMode::Exact).unwrap();
        let cheb = build_system(&g, &bank, 1, 2.0, TransformMode::Chebyshev { degree: 10 }).unwrap();
        let ce = decompose(&exact, x.view()).unwrap();
        let cc = decompose(&cheb, x.view()).unwrap();
        for (a, b) in ce.blocks().iter().zip(cc.blocks()) {
            assert!(max_abs_diff(a.view(), b.view()) < 1e-4);
        }
        // block-at-a-time application agrees with the shared-prefix decomposition
        for b in 0..cheb.n_blocks() {
            let single = cheb.apply_block(b, x.view()).unwrap();
            assert!(max_abs_diff(single.view(), cc.blocks()[b].view()) < 1e-12);
        }
    }

    #[test]
    fn chebyshev_round_trip_improves_with_degree() {
        let g = random_connected(20, 0.25, 3);
        let bank = builtin_bank("linear").unwrap();
        let x = signal(20, 2, 5);
        let errs: Vec<f64> = [2, 3, 7, 10]
            .iter()
            .map(|&n| {
                let sys = build_system(&g, &bank, 1, 2.0, TransformMode::Chebyshev { degree: n }).unwrap();
                round_trip_error(&sys, x.view()).unwrap()
            })
            .collect();
        assert!(errs[3] < 1e-3, "{errs:?}");
        assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
    }

    #[test]
    fn reconstruct_rejects_foreign_coefficients() {
        let g = random_connected(8, 0.3, 1);
        let bank = builtin_bank("haar").unwrap();
        let a = build_system(&g, &bank, 1, 2.0, TransformMode::Exact).unwrap();
        let b = build_system(&g, &bank, 1, 2.0, TransformMode::Exact).unwrap();
        let c = decompose(&a, signal(8, 1, 0).view()).unwrap();
        assert!(matches!(reconstruct(&b, &c), Err(Error::SystemMismatch)));
        assert!(decompose(&a, signal(7, 1, 0).view()).is_err());
    }

    #[test]
    fn conv_special_cases() {
        let g = random_connected(15, 0.3, 8);
        let haar = builtin_bank("haar").unwrap();
        let sys = build_system(&g, &haar, 0, 2.0, TransformMode::Exact).unwrap();
        let x = signal(15, 2, 3);
        let ones = framelet_conv(&sys, &Theta::ones(&sys), x.view()).unwrap();
        assert!(relative_error(ones.view(), x.view()) < 1e-8);
        let zeros = framelet_conv(&sys, &Theta::from_gains(&sys, &[0.0, 0.0]), x.view()).unwrap();
        assert!(zeros.iter().all(|v| v.abs() < 1e-15));
        // low-pass only: U g_0(Λ/s^m)² Uᵀ X
        let low = framelet_conv(&sys, &Theta::from_gains(&sys, &[1.0, 0.0]), x.view()).unwrap();
        let (vals, vecs) = symmetric_eigen(g.normalized_laplacian().to_dense().view()).unwrap();
        let h = vals.mapv(|l| (l * 2f64.powi(-sys.coarsest_scale()) / 2.0).cos().powi(2));
        let expected = vecs.dot(&Array2::from_diag(&h)).dot(&vecs.t()).dot(&x);
        assert!(max_abs_diff(low.view(), expected.view()) < 1e-8);
        assert!(framelet_conv(&sys, &Theta::from_gains(&sys, &[1.0]), x.view()).is_err());
    }

    #[test]
    fn directed_chebyshev_is_finite() {
        let g = random_directed(15, 0.15, 2);
        let sys = build_system(&g, &builtin_bank("linear").unwrap(), 1, 2.0, TransformMode::Chebyshev { degree: 7 }).unwrap();
        assert_eq!(sys.lambda_max(), 2.0);
        let x = signal(15, 2, 1);
        let c = decompose(&sys, x.view()).unwrap();
        let back = reconstruct(&sys, &c).unwrap();
        assert!(back.iter().all(|v| v.is_finite()));
        // transpose path agrees with the dense transpose
        for b in 0..sys.n_blocks() {
            let dense = sys.block_matrix(b);
            let t = sys.apply_block_transpose(b, x.view()).unwrap();
            assert!(max_abs_diff(t.view(), dense.t().dot(&x).view()) < 1e-10);
        }
    }

    #[test]
    fn coefficients_round_trip_through_disk() {
        let g = random_connected(9, 0.3, 1);
        let sys = build_system(&g, &builtin_bank("linear").unwrap(), 1, 2.0, TransformMode::Chebyshev { degree: 3 }).unwrap();
        let c = decompose(&sys, signal(9, 2, 4).view()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_coefficients(&sys, &c, dir.path()).unwrap();
        let back = load_coefficients(&sys, dir.path()).unwrap();
        for (a, b) in back.blocks().iter().zip(c.blocks()) {
            assert_eq!(a, b);
        }
        let other = build_system(&g, &builtin_bank("haar").unwrap(), 1, 2.0, TransformMode::Chebyshev { degree: 3 }).unwrap();
        assert!(matches!(load_coefficients(&other, dir.path()), Err(Error::SystemMismatch)));
    }

    #[test]
    fn path_graph_tight_frame() {
        let sys = build_system(&path2(), &builtin_bank("linear").unwrap(), 2, 1.5, TransformMode::Exact).unwrap();
        assert!(tight_frame_residual(&sys) < 1e-12);
        let x = array![[1.0], [0.0]];
        assert!(round_trip_error(&sys, x.view()).unwrap() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn tight_frame_on_random_graphs(n in 3usize..50, seed in any::<u64>(), level in 0usize..3, linear in any::<bool>()) {
            let g = random_weighted(n, 0.15, seed);
            let bank = builtin_bank(if linear { "linear" } else { "haar" }).unwrap();
            let sys = build_system(&g, &bank, level, 2.0, TransformMode::Exact).unwrap();
            prop_assert_eq!(sys.n_blocks(), 1 + bank.k() * (level + 1));
            prop_assert!(tight_frame_residual(&sys) < 1e-8);
        }

        #[test]
        fn decompose_reconstruct_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let g = random_connected(12, 0.3, seed);
            let sys = build_system(&g, &builtin_bank("linear").unwrap(), 1, 2.0, TransformMode::Chebyshev { degree: 3 }).unwrap();
            let x = signal(12, 2, seed % 17);
            let y = signal(12, 2, seed % 13 + 100);
            let combo = &x * a + &y * b;
            let lhs = decompose(&sys, combo.view()).unwrap();
            let cx = decompose(&sys, x.view()).unwrap();
            let cy = decompose(&sys, y.view()).unwrap();
            for ((l, p), q) in lhs.blocks().iter().zip(cx.blocks()).zip(cy.blocks()) {
                prop_assert!(max_abs_diff(l.view(), (p * a + q * b).view()) < 1e-10);
            }
            let rl = reconstruct(&sys, &lhs).unwrap();
            let rr = reconstruct(&sys, &cx).unwrap() * a + reconstruct(&sys, &cy).unwrap() * b;
            prop_assert!(max_abs_diff(rl.view(), rr.view()) < 1e-10);
        }
    }
}
