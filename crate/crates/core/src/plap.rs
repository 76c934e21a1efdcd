//! Generalized p-Laplacian regularizer and its fixed-point solver.
//!
//! For node rows `f_i` of `F` the scaled edge difference is
//! `Δ_ij = sqrt(w_ij/d_j) f_j − sqrt(w_ij/d_i) f_i`, the node gradient is the
//! vector of `‖Δ_ij‖₂` over the neighbors of `i`, and the regularizer is
//! `S(F) = ½ Σ_i φ(‖∇F(v_i)‖_p)`. [`PLaplacian::solve`] minimizes
//! `S(F) + μ‖F − Y‖²_F` by the message-passing iteration
//! `F ← α D^{-1/2} M D^{-1/2} F + β Y`.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{inv_sqrt_degrees, Graph};
use crate::linalg::{dense_solve, frobenius_norm, CsrMatrix, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `φ(ξ) = ξ^p`
    Power,
    /// `φ(ξ) = sqrt(ξ² + ε²) − ε`
    RegTv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub p: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-3
}

impl PenaltySpec {
    /// Power penalty; `p = 1` is only available through [`PenaltySpec::reg_tv`].
    pub fn power(p: f64) -> Result<Self> {
        let spec = Self {
            kind: PenaltyKind::Power,
            p,
            epsilon: default_epsilon(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn reg_tv(p: f64, epsilon: f64) -> Result<Self> {
        let spec = Self {
            kind: PenaltyKind::RegTv,
            p,
            epsilon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PenaltyKind::Power if !(self.p > 1.0 && self.p.is_finite()) => Err(Error::Config(format!(
                "power penalty needs p > 1 (use reg_tv for p = 1), got {}",
                self.p
            ))),
            PenaltyKind::RegTv if !(self.p >= 1.0 && self.p.is_finite()) => {
                Err(Error::Config(format!("reg_tv penalty needs p >= 1, got {}", self.p)))
            }
            _ if !(self.epsilon > 0.0 && self.epsilon.is_finite()) => {
                Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)))
            }
            _ => Ok(()),
        }
    }

    pub fn phi(&self, xi: f64) -> f64 {
        match self.kind {
            PenaltyKind::Power => xi.powf(self.p),
            PenaltyKind::RegTv => (xi * xi + self.epsilon * self.epsilon).sqrt() - self.epsilon,
        }
    }

    pub fn phi_prime(&self, xi: f64) -> f64 {
        match self.kind {
            PenaltyKind::Power => self.p * xi.powf(self.p - 1.0),
            PenaltyKind::RegTv => xi / (xi * xi + self.epsilon * self.epsilon).sqrt(),
        }
    }
}

impl fmt::Display for PenaltySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PenaltyKind::Power => write!(f, "power(p={})", self.p),
            PenaltyKind::RegTv => write!(f, "reg_tv(p={}, eps={})", self.p, self.epsilon),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub mu: f64,
    /// Counted iterations `T`, run after the warm-up.
    #[serde(alias = "T")]
    pub iterations: usize,
    pub warmup: usize,
    pub tol: f64,
    pub grad_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            iterations: 5,
            warmup: 10,
            tol: 1e-6,
            grad_floor: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.mu) {
            return Err(Error::Config(format!("mu must be > 0, got {}", self.mu)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iteration count T must be positive".into()));
        }
        if !positive(self.tol) || !positive(self.grad_floor) {
            return Err(Error::Config("tol and grad_floor must be > 0".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.warmup + self.iterations
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    /// Objective after each step.
    pub objective: Vec<f64>,
    /// `‖F^{t+1} − F^t‖_F` for each step.
    pub deltas: Vec<f64>,
    /// Number of leading entries that belong to warm-up steps.
    pub warmup: usize,
    pub converged: bool,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// CSV with columns `iteration,phase,objective,delta`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "iteration,phase,objective,delta")?;
        for (t, (obj, delta)) in self.objective.iter().zip(&self.deltas).enumerate() {
            let phase = if t < self.warmup { "warmup" } else { "main" };
            writeln!(w, "{},{},{},{}", t + 1, phase, obj, delta)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Edge weights `M`, with the diagonal scalings `α` and `β = 2μα`.
#[derive(Debug, Clone)]
pub struct MessageMatrices {
    pub m: CsrMatrix,
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
}

/// p-Laplacian machinery bound to one graph and its degree vector.
#[derive(Debug, Clone)]
pub struct PLaplacian<'g> {
    graph: &'g Graph,
    degrees: Array1<f64>,
    inv_sqrt: Array1<f64>,
}

impl<'g> PLaplacian<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        let degrees = graph.degrees();
        let inv_sqrt = inv_sqrt_degrees(&degrees);
        Self {
            graph,
            degrees,
            inv_sqrt,
        }
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn degrees(&self) -> &Array1<f64> {
        &self.degrees
    }

    fn check_rows(&self, f: ArrayView2<'_, f64>) -> Result<()> {
        if f.nrows() != self.graph.n_nodes() {
            return Err(Error::Shape(format!(
                "signal has {} rows, graph has {} nodes",
                f.nrows(),
                self.graph.n_nodes()
            )));
        }
        Ok(())
    }

    /// `Δ_ij` for an edge `(i, j)`.
    pub fn edge_difference(&self, f: ArrayView2<'_, f64>, i: usize, j: usize) -> Result<Array1<f64>> {
        self.check_rows(f)?;
        let w = self
            .graph
            .weight(i, j)
            .ok_or_else(|| Error::InvalidGraph(format!("({i}, {j}) is not an edge")))?;
        for node in [i, j] {
            if self.degrees[node] <= 0.0 {
                return Err(Error::DegenerateDegree { node });
            }
        }
        Ok(&f.row(j) * (w / self.degrees[j]).sqrt() - &f.row(i) * (w / self.degrees[i]).sqrt())
    }

    /// `‖Δ_ij‖₂` for every stored adjacency entry, aligned with the CSR layout.
    fn edge_norms(&self, f: ArrayView2<'_, f64>) -> Vec<f64> {
        let adj = self.graph.adjacency();
        let mut out = Vec::with_capacity(adj.nnz());
        for i in 0..adj.n_rows() {
            let (cols, ws) = adj.row(i);
            let fi = f.row(i);
            for (&j, &w) in cols.iter().zip(ws) {
                let si = w.sqrt() * self.inv_sqrt[i];
                let sj = w.sqrt() * self.inv_sqrt[j];
                let fj = f.row(j);
                let sq: f64 = fi.iter().zip(fj.iter()).map(|(a, b)| (sj * b - si * a).powi(2)).sum();
                out.push(sq.sqrt());
            }
        }
        out
    }

    fn gradient_norms_from(&self, edge_norms: &[f64], p: f64) -> Array1<f64> {
        let adj = self.graph.adjacency();
        let mut k = 0;
        Array1::from_iter((0..adj.n_rows()).map(|i| {
            let deg = adj.row(i).0.len();
            let slice = &edge_norms[k..k + deg];
            k += deg;
            p_norm(slice, p)
        }))
    }

    /// `‖∇_W F(v_i)‖_p` for every node (0 for nodes without neighbors).
    pub fn gradient_norms(&self, f: ArrayView2<'_, f64>, p: f64) -> Result<Array1<f64>> {
        self.check_rows(f)?;
        Ok(self.gradient_norms_from(&self.edge_norms(f), p))
    }

    pub fn node_gradient_norm(&self, f: ArrayView2<'_, f64>, i: usize, p: f64) -> Result<f64> {
        self.check_rows(f)?;
        let norms: Vec<f64> = self
            .graph
            .neighbors(i)
            .iter()
            .map(|&j| {
                let w = self.graph.weight(i, j).expect("neighbor has a weight");
                let si = w.sqrt() * self.inv_sqrt[i];
                let sj = w.sqrt() * self.inv_sqrt[j];
                (&f.row(j) * sj - &f.row(i) * si).iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect();
        Ok(p_norm(&norms, p))
    }

    /// `S^φ_p(F) = ½ Σ_i φ(‖∇_W F(v_i)‖_p)`
    pub fn regularizer(&self, f: ArrayView2<'_, f64>, penalty: &PenaltySpec) -> Result<f64> {
        let g = self.gradient_norms(f, penalty.p)?;
        Ok(0.5 * g.iter().map(|&x| penalty.phi(x)).sum::<f64>())
    }

    /// `S^φ_p(F) + μ‖F − Y‖²_F`
    pub fn objective(&self, f: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, penalty: &PenaltySpec, mu: f64) -> Result<f64> {
        if f.dim() != y.dim() {
            return Err(Error::Shape(format!("F is {:?}, Y is {:?}", f.dim(), y.dim())));
        }
        let fidelity = frobenius_norm((&f - &y).view()).powi(2);
        Ok(self.regularizer(f, penalty)? + mu * fidelity)
    }

    /// `M`, `α`, `β` evaluated at `F`.
    ///
    /// Gradient norms and edge-difference norms are floored at `grad_floor`
    /// before entering negative powers.
    pub fn message_matrices(
        &self,
        f: ArrayView2<'_, f64>,
        penalty: &PenaltySpec,
        mu: f64,
        grad_floor: f64,
    ) -> Result<MessageMatrices> {
        self.check_rows(f)?;
        let p = penalty.p;
        let edge_norms = self.edge_norms(f);
        let node_norms = self.gradient_norms_from(&edge_norms, p);
        let psi: Array1<f64> = node_norms.mapv(|x| {
            let x = x.max(grad_floor);
            penalty.phi_prime(x) / x.powf(p - 1.0)
        });
        let mut k = 0;
        let m = self.graph.adjacency().map_values(|i, j, w| {
            let delta = edge_norms[k].max(grad_floor);
            k += 1;
            let edge_factor = if p == 2.0 { 1.0 } else { delta.powf(p - 2.0) };
            0.5 * w * (psi[i] + psi[j]) * edge_factor
        });
        let alpha = Array1::from_iter((0..m.n_rows()).map(|i| {
            let d = self.degrees[i];
            let spread = if d > 0.0 { m.row(i).1.iter().sum::<f64>() / d } else { 0.0 };
            1.0 / (spread + 2.0 * mu)
        }));
        let beta = alpha.mapv(|a| 2.0 * mu * a);
        Ok(MessageMatrices { m, alpha, beta })
    }

    /// `α D^{-1/2} M D^{-1/2} F + β Y`
    pub fn propagate(&self, mm: &MessageMatrices, f: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(f.raw_dim());
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (cols, ms) = mm.m.row(i);
            for (&j, &mij) in cols.iter().zip(ms) {
                let coef = mij * self.inv_sqrt[i] * self.inv_sqrt[j];
                if coef != 0.0 {
                    row.scaled_add(coef, &f.row(j));
                }
            }
            row *= mm.alpha[i];
            row.scaled_add(mm.beta[i], &y.row(i));
        }
        out
    }

    /// `‖F − (α D^{-1/2} M D^{-1/2} F + β Y)‖_F / ‖F‖_F` with `M, α, β` taken at `F`.
    pub fn fixed_point_residual(
        &self,
        f: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        penalty: &PenaltySpec,
        cfg: &SolverConfig,
    ) -> Result<f64> {
        let mm = self.message_matrices(f, penalty, cfg.mu, cfg.grad_floor)?;
        let next = self.propagate(&mm, f, y);
        let scale = frobenius_norm(f);
        let diff = frobenius_norm((&next - &f).view());
        Ok(if scale > 0.0 { diff / scale } else { diff })
    }

    /// Run `warmup + T` message-passing steps from `F⁰ = Y`.
    pub fn solve(&self, y: ArrayView2<'_, f64>, penalty: &PenaltySpec, cfg: &SolverConfig) -> Result<(Array2<f64>, SolverTrace)> {
        self.check_rows(y)?;
        penalty.validate()?;
        cfg.validate()?;
        let mut f = y.to_owned();
        let mut trace = SolverTrace {
            warmup: cfg.warmup,
            ..SolverTrace::default()
        };
        for t in 0..cfg.total_steps() {
            let mm = self.message_matrices(f.view(), penalty, cfg.mu, cfg.grad_floor)?;
            let next = self.propagate(&mm, f.view(), y);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { iteration: t + 1 });
            }
            let delta = frobenius_norm((&next - &f).view());
            let scale = frobenius_norm(f.view()).max(1.0);
            trace.converged = delta / scale < cfg.tol;
            trace.deltas.push(delta);
            f = next;
            trace.objective.push(self.objective(f.view(), y, penalty, cfg.mu)?);
        }
        Ok((f, trace))
    }

    /// `μ (μ I + L̃)^{-1} Y` by a dense solve; the `p = 2` minimizer.
    pub fn closed_form_p2(&self, y: ArrayView2<'_, f64>, mu: f64, dense_cap: usize) -> Result<Array2<f64>> {
        self.check_rows(y)?;
        if self.graph.is_directed() {
            return Err(Error::Config("closed form requires an undirected graph".into()));
        }
        let n = self.graph.n_nodes();
        if n > dense_cap {
            return Err(Error::Config(format!("closed form limited to {dense_cap} nodes, graph has {n}")));
        }
        if mu.is_nan() || mu <= 0.0 {
            return Err(Error::Config(format!("mu must be > 0, got {mu}")));
        }
        let mut a = self.graph.normalized_laplacian().to_dense();
        a.diag_mut().mapv_inplace(|v| v + mu);
        Ok(dense_solve(a.view(), y)? * mu)
    }
}

fn p_norm(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    if p == 2.0 {
        return values.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    // scaled to avoid under/overflow for large p
    max * values.iter().map(|v| (v / max).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Columnwise relative residual `max_c ‖a_c − b_c‖ / ‖b_c‖`.
pub fn columnwise_relative(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.columns()
        .into_iter()
        .zip(b.columns())
        .map(|(ac, bc): (ArrayView1<f64>, ArrayView1<f64>)| {
            let mut diff = 0.0;
            let mut norm = 0.0;
            Zip::from(&ac).and(&bc).for_each(|x, y| {
                diff += (x - y) * (x - y);
                norm += y * y;
            });
            if norm > 0.0 {
                (diff / norm).sqrt()
            } else {
                diff.sqrt()
            }
        })
        .fold(0.0, f64::max)
}
