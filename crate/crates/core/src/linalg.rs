//! Small linear-algebra layer: a CSR matrix, an operator trait shared by
//! sparse and dense maps, power iteration, and nalgebra bridges for the
//! dense eigen/solve paths.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// A square linear map applied to column blocks of an `n × f` matrix.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64>;

    fn apply_transpose(&self, x: ArrayView2<'_, f64>) -> Array2<f64>;

    /// Materialize the operator by applying it to the identity.
    fn to_dense(&self) -> Array2<f64> {
        self.apply(Array2::eye(self.dim()).view())
    }
}

impl LinearOperator for Array2<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.dot(&x)
    }

    fn apply_transpose(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.t().dot(&x)
    }

    fn to_dense(&self) -> Array2<f64> {
        self.clone()
    }
}

/// Compressed sparse row matrix with `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from unsorted triplets. Duplicate `(row, col)` entries are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < n_rows && c < n_cols);
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|k| vals[k])
    }

    pub fn row_sums(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n_rows).map(|i| self.row(i).1.iter().sum()))
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push((j, i, v));
            }
        }
        Self::from_triplets(self.n_cols, self.n_rows, triplets)
    }

    /// Same sparsity pattern with every value replaced by `f(row, col, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.values[k] = f(i, self.col_idx[k], self.values[k]);
            }
        }
        out
    }

    pub fn mul_dense(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n_cols, "csr product: dimension mismatch");
        let mut out = Array2::zeros((self.n_rows, x.ncols()));
        for (i, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out_row.scaled_add(v, &x.row(j));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[[i, j]] = v;
            }
        }
        out
    }
}

/// `factor · A` for an inner operator `A`.
pub struct ScaledOperator<'a, A: LinearOperator + ?Sized> {
    pub inner: &'a A,
    pub factor: f64,
}

impl<A: LinearOperator + ?Sized> LinearOperator for ScaledOperator<'_, A> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.inner.apply(x) * self.factor
    }

    fn apply_transpose(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.inner.apply_transpose(x) * self.factor
    }
}

pub fn frobenius_norm(x: ArrayView2<'_, f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖_F / max(‖b‖_F, tiny)`.
pub fn relative_error(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let diff = frobenius_norm((&a - &b).view());
    let scale = frobenius_norm(b);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
pub struct PowerIteration {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_iter: 20_000,
        }
    }
}

impl PowerIteration {
    /// Estimate the largest eigenvalue of a symmetric positive semidefinite
    /// operator by the Rayleigh quotient of the power sequence.
    ///
    /// The start vector is a fixed non-uniform pattern so that the estimate is
    /// deterministic. Returns 0 for the zero operator.
    pub fn largest_eigenvalue(&self, op: &dyn LinearOperator) -> f64 {
        let n = op.dim();
        if n == 0 {
            return 0.0;
        }
        let mut v = Array2::from_shape_fn((n, 1), |(i, _)| 1.0 + ((i * 7919) % 101) as f64 / 101.0);
        let norm = frobenius_norm(v.view());
        v /= norm;
        let mut estimate = 0.0;
        for _ in 0..self.max_iter {
            let w = op.apply(v.view());
            let rayleigh: f64 = v.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            let w_norm = frobenius_norm(w.view());
            if w_norm == 0.0 {
                return 0.0;
            }
            v = w / w_norm;
            if (rayleigh - estimate).abs() <= self.rel_tol * rayleigh.abs() {
                return rayleigh.max(estimate);
            }
            estimate = rayleigh;
        }
        estimate
    }
}

pub fn to_nalgebra(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Symmetric eigendecomposition, eigenvalues ascending with matching columns of `U`.
pub fn symmetric_eigen(a: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape(format!("eigendecomposition of a {}x{} matrix", n, a.ncols())));
    }
    let m = to_nalgebra(a);
    let eig = nalgebra::SymmetricEigen::try_new(m, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric QR iteration did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    Ok((values, vectors))
}

/// Solve `A X = B` by LU with partial pivoting.
pub fn dense_solve(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "solve with A {}x{} and B {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let lu = to_nalgebra(a).lu();
    let x = lu
        .solve(&to_nalgebra(b))
        .ok_or_else(|| Error::Singular("LU factor has a zero pivot".into()))?;
    let out = from_nalgebra(&x);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite solution".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csr_merges_duplicates_and_transposes() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 1, 2.0), (1, 2, 0.5)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 2), Some(1.5));
        assert_eq!(m.get(0, 0), None);
        let t = m.transpose();
        assert_eq!(t.to_dense(), m.to_dense().t().to_owned());
    }

    #[test]
    fn csr_product_matches_dense() {
        let m = CsrMatrix::from_triplets(3, 3, vec![(0, 0, 1.0), (0, 2, -1.0), (2, 1, 3.0)]);
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(m.mul_dense(x.view()), m.to_dense().dot(&x));
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let a = Array2::from_diag(&array![0.5, 1.5, 3.0, 0.0]);
        let est = PowerIteration::default().largest_eigenvalue(&a);
        assert!((est - 3.0).abs() < 1e-5, "{est}");
        assert_eq!(PowerIteration::default().largest_eigenvalue(&Array2::<f64>::zeros((3, 3))), 0.0);
    }

    #[test]
    fn eigen_sorted_ascending() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(a.view()).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
        let recon = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        assert!(max_abs_diff(recon.view(), a.view()) < 1e-12);
    }

    #[test]
    fn solve_small_system() {
        let a = array![[2.0, -1.0], [-1.0, 2.0]];
        let b = array![[1.0], [0.0]];
        let x = dense_solve(a.view(), b.view()).unwrap();
        assert!((x[[0, 0]] - 2.0 / 3.0).abs() < 1e-14);
        assert!((x[[1, 0]] - 1.0 / 3.0).abs() < 1e-14);
    }
}
