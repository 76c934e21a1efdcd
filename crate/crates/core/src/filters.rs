//! Quasi-framelet scaling-function banks and Chebyshev approximation of
//! scalar spectral functions on `[0, π]`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::LinearOperator;

/// Residual accepted for banks built in code.
pub const BUILTIN_IDENTITY_TOL: f64 = 1e-12;
/// Residual accepted for banks loaded from JSON.
pub const CUSTOM_IDENTITY_TOL: f64 = 1e-9;
/// Grid used by the construction gate.
pub const GATE_GRID: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    /// `cos(ξ/2)`
    CosHalf,
    /// `sin(ξ/2)`
    SinHalf,
    /// `cos²(ξ/2)`
    CosSqHalf,
    /// `sin²(ξ/2)`
    SinSqHalf,
    /// `sin(ξ)`
    SinScaled,
}

impl Primitive {
    pub fn eval(self, xi: f64) -> f64 {
        match self {
            Primitive::CosHalf => (xi / 2.0).cos(),
            Primitive::SinHalf => (xi / 2.0).sin(),
            Primitive::CosSqHalf => (xi / 2.0).cos().powi(2),
            Primitive::SinSqHalf => (xi / 2.0).sin().powi(2),
            Primitive::SinScaled => xi.sin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub primitive: Primitive,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

/// A scaling function written as a sum of scaled primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScalingFunction {
    pub terms: Vec<Term>,
}

impl ScalingFunction {
    pub fn primitive(p: Primitive, scale: f64) -> Self {
        Self {
            terms: vec![Term { primitive: p, scale }],
        }
    }

    pub fn eval(&self, xi: f64) -> f64 {
        self.terms.iter().map(|t| t.scale * t.primitive.eval(xi)).sum()
    }
}

/// `K + 1` scaling functions `g_0..g_K` on `[0, π]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub name: String,
    pub functions: Vec<ScalingFunction>,
}

impl FilterBank {
    /// Build a bank and reject it unless the squared functions sum to one
    /// within `tol` on a [`GATE_GRID`]-point grid.
    pub fn new(name: impl Into<String>, functions: Vec<ScalingFunction>, tol: f64) -> Result<Self> {
        let bank = Self::new_unverified(name, functions)?;
        let residual = verify_identity(&bank, GATE_GRID);
        if residual.is_nan() || residual >= tol {
            return Err(Error::Config(format!(
                "filter bank {:?} fails the identity condition: residual {residual:e} >= {tol:e}",
                bank.name
            )));
        }
        Ok(bank)
    }

    /// Build a bank without the identity gate (diagnostics and perturbation tests).
    pub fn new_unverified(name: impl Into<String>, functions: Vec<ScalingFunction>) -> Result<Self> {
        if functions.len() < 2 {
            return Err(Error::Config("a filter bank needs at least two functions".into()));
        }
        Ok(Self {
            name: name.into(),
            functions,
        })
    }

    /// Number of high-pass functions `K`.
    pub fn k(&self) -> usize {
        self.functions.len() - 1
    }

    pub fn eval(&self, k: usize, xi: f64) -> f64 {
        self.functions[k].eval(xi)
    }

    /// Copy with `g_k` multiplied by `factor`.
    pub fn perturbed(&self, k: usize, factor: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.functions[k].terms {
            t.scale *= factor;
        }
        out.name = format!("{}-perturbed", self.name);
        out
    }

    /// Whether `g_0` is non-increasing and `g_K` non-decreasing on a uniform grid.
    pub fn is_monotone(&self, grid_size: usize) -> bool {
        let grid = uniform_grid(grid_size);
        let last = self.k();
        grid.windows(2).all(|w| {
            self.eval(0, w[1]) <= self.eval(0, w[0]) + 1e-15 && self.eval(last, w[1]) + 1e-15 >= self.eval(last, w[0])
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: FilterBank = serde_json::from_str(text)?;
        Self::new(raw.name, raw.functions, CUSTOM_IDENTITY_TOL)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// `"haar"`: `(cos(ξ/2), sin(ξ/2))`; `"linear"`: `(cos²(ξ/2), sin(ξ)/√2, sin²(ξ/2))`.
pub fn builtin_bank(name: &str) -> Result<FilterBank> {
    let functions = match name {
        "haar" => vec![
            ScalingFunction::primitive(Primitive::CosHalf, 1.0),
            ScalingFunction::primitive(Primitive::SinHalf, 1.0),
        ],
        "linear" => vec![
            ScalingFunction::primitive(Primitive::CosSqHalf, 1.0),
            ScalingFunction::primitive(Primitive::SinScaled, FRAC_1_SQRT_2),
            ScalingFunction::primitive(Primitive::SinSqHalf, 1.0),
        ],
        other => return Err(Error::Config(format!("unknown filter bank {other:?} (expected haar or linear)"))),
    };
    FilterBank::new(name, functions, BUILTIN_IDENTITY_TOL)
}

fn uniform_grid(grid_size: usize) -> Vec<f64> {
    let steps = (grid_size.max(2) - 1) as f64;
    (0..grid_size.max(2)).map(|i| PI * i as f64 / steps).collect()
}

/// Max over a uniform grid on `[0, π]` of `|Σ_k g_k(ξ)² − 1|`.
pub fn verify_identity(bank: &FilterBank, grid_size: usize) -> f64 {
    uniform_grid(grid_size)
        .into_iter()
        .map(|xi| {
            let s: f64 = bank.functions.iter().map(|g| g.eval(xi).powi(2)).sum();
            (s - 1.0).abs()
        })
        .fold(0.0, |acc, r| if r.is_nan() { f64::NAN } else { acc.max(r) })
}

/// Degree-`n` Chebyshev interpolant of a function on `[0, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevApprox {
    coefficients: Vec<f64>,
    residual: f64,
}

/// Points in the residual grid recorded by [`chebyshev_fit`].
pub const FIT_GRID: usize = 1024;

/// Interpolate `f` at the `n + 1` Chebyshev points of the first kind mapped
/// to `[0, π]` through `ξ = π (x + 1) / 2`.
pub fn chebyshev_fit(f: impl Fn(f64) -> f64, n: usize) -> Result<ChebyshevApprox> {
    let m = n + 1;
    let angles: Vec<f64> = (0..m).map(|j| PI * (j as f64 + 0.5) / m as f64).collect();
    let samples: Vec<f64> = angles.iter().map(|&a| f(PI * (a.cos() + 1.0) / 2.0)).collect();
    if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::Fit(format!("target function returned {bad}")));
    }
    let coefficients: Vec<f64> = (0..m)
        .map(|k| {
            let c: f64 = angles
                .iter()
                .zip(&samples)
                .map(|(&a, &y)| y * (k as f64 * a).cos())
                .sum::<f64>()
                * 2.0
                / m as f64;
            if k == 0 {
                c / 2.0
            } else {
                c
            }
        })
        .collect();
    let mut approx = ChebyshevApprox {
        coefficients,
        residual: 0.0,
    };
    let mut residual = 0.0f64;
    for xi in uniform_grid(FIT_GRID) {
        let target = f(xi);
        if !target.is_finite() {
            return Err(Error::Fit(format!("target function returned {target} at {xi}")));
        }
        residual = residual.max((approx.eval(xi) - target).abs());
    }
    approx.residual = residual;
    Ok(approx)
}

impl ChebyshevApprox {
    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Max absolute fit error over the [`FIT_GRID`]-point grid.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Clenshaw evaluation at `ξ ∈ [0, π]`.
    pub fn eval(&self, xi: f64) -> f64 {
        let x = 2.0 * xi / PI - 1.0;
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coefficients.iter().skip(1).rev() {
            let b0 = 2.0 * x * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        x * b1 - b2 + self.coefficients[0]
    }
}

fn check_rows(op: &dyn LinearOperator, x: ArrayView2<'_, f64>) -> Result<()> {
    if x.nrows() != op.dim() {
        return Err(Error::Shape(format!(
            "operator of dimension {} applied to {} rows",
            op.dim(),
            x.nrows()
        )));
    }
    Ok(())
}

fn recurrence(
    approx: &ChebyshevApprox,
    x: ArrayView2<'_, f64>,
    apply: impl Fn(ArrayView2<'_, f64>) -> Array2<f64>,
) -> Array2<f64> {
    // Â = (2/π) A − I maps a spectrum in [0, π] onto [−1, 1]
    let mapped = |v: ArrayView2<'_, f64>| apply(v) * (2.0 / PI) - v;
    let c = &approx.coefficients;
    let mut out = x.to_owned() * c[0];
    if c.len() == 1 {
        return out;
    }
    let mut prev = x.to_owned();
    let mut cur = mapped(x);
    out.scaled_add(c[1], &cur);
    for &ck in &c[2..] {
        let next = mapped(cur.view()) * 2.0 - &prev;
        out.scaled_add(ck, &next);
        prev = cur;
        cur = next;
    }
    out
}

/// `Σ_k c_k T_k(Â) X` by the three-term recurrence; `A` must have its
/// spectrum in `[0, π]`.
pub fn chebyshev_apply(approx: &ChebyshevApprox, op: &dyn LinearOperator, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_rows(op, x)?;
    Ok(recurrence(approx, x, |v| op.apply(v)))
}

/// `(Σ_k c_k T_k(Â))ᵀ X`, identical to [`chebyshev_apply`] for symmetric `A`.
pub fn chebyshev_apply_transpose(
    approx: &ChebyshevApprox,
    op: &dyn LinearOperator,
    x: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    check_rows(op, x)?;
    Ok(recurrence(approx, x, |v| op.apply_transpose(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, symmetric_eigen};
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    #[test]
    fn builtin_values() {
        let haar = builtin_bank("haar").unwrap();
        assert_eq!(haar.k(), 1);
        let xi = PI / 2.0;
        assert!((haar.eval(0, xi).powi(2) + haar.eval(1, xi).powi(2) - 1.0).abs() < 1e-15);
        let lin = builtin_bank("linear").unwrap();
        assert_eq!(lin.k(), 2);
        assert_eq!((lin.eval(0, 0.0), lin.eval(1, 0.0), lin.eval(2, 0.0)), (1.0, 0.0, 0.0));
        assert!(lin.is_monotone(1001) && haar.is_monotone(1001));
        assert!(matches!(builtin_bank("db4"), Err(Error::Config(_))));
    }

    #[test]
    fn identity_residuals() {
        assert!(verify_identity(&builtin_bank("haar").unwrap(), 1001) < 1e-15);
        assert!(verify_identity(&builtin_bank("linear").unwrap(), 1001) < 1e-12);
        assert!(verify_identity(&builtin_bank("linear").unwrap(), 10_000) < 1e-12);
    }

    #[test]
    fn broken_bank_detected() {
        let broken = builtin_bank("linear").unwrap().perturbed(1, 1.1);
        // oracle: at ξ = π/2 the extra energy is (1.21 − 1) · ½ sin²(π/2) = 0.105
        assert!(verify_identity(&broken, 1001) > 0.1);
        let haar_broken = builtin_bank("haar").unwrap().perturbed(1, 1.1);
        assert!(verify_identity(&haar_broken, 1001) > 0.1);
        assert!(FilterBank::new("x", haar_broken.functions, CUSTOM_IDENTITY_TOL).is_err());
    }

    #[test]
    fn custom_bank_json() {
        let ok = r#"{"name":"mine","functions":[
            [{"primitive":"cos_sq_half"}],
            [{"primitive":"sin_scaled","scale":0.7071067811865476}],
            [{"primitive":"sin_sq_half","scale":1.0}]]}"#;
        let bank = FilterBank::from_json_str(ok).unwrap();
        assert_eq!(bank.k(), 2);
        let bad = r#"{"name":"bad","functions":[[{"primitive":"cos_half"}],[{"primitive":"sin_scaled"}]]}"#;
        assert!(FilterBank::from_json_str(bad).is_err());
        let unknown = r#"{"name":"bad","functions":[[{"primitive":"tanh"}],[{"primitive":"sin_half"}]]}"#;
        assert!(FilterBank::from_json_str(unknown).is_err());
    }

    #[test]
    fn constant_fit() {
        for n in [0, 1, 4, 9] {
            let a = chebyshev_fit(|_| 1.0, n).unwrap();
            assert!((a.coefficients()[0] - 1.0).abs() < 1e-14);
            assert!(a.coefficients()[1..].iter().all(|c| c.abs() < 1e-14));
            assert!(a.residual() < 1e-14);
        }
    }

    #[test]
    fn cos_half_fit_converges() {
        let f = |xi: f64| (xi / 2.0).cos();
        let r10 = chebyshev_fit(f, 10).unwrap().residual();
        assert!(r10 < 1e-8, "{r10}");
        let r8 = chebyshev_fit(f, 8).unwrap().residual();
        let r3 = chebyshev_fit(f, 3).unwrap().residual();
        assert!(r8 <= r3);
        // the recorded residual agrees with an independent dense grid
        let a = chebyshev_fit(f, 10).unwrap();
        let dense = (0..=5000).map(|i| PI * i as f64 / 5000.0).map(|x| (a.eval(x) - f(x)).abs()).fold(0.0, f64::max);
        assert!(dense < 2.0 * r10 + 1e-15);
    }

    #[test]
    fn residual_non_increasing_for_bank_functions() {
        for bank in ["haar", "linear"] {
            let b = builtin_bank(bank).unwrap();
            for k in 0..=b.k() {
                let rs: Vec<f64> = [2, 3, 7, 10]
                    .iter()
                    .map(|&n| chebyshev_fit(|x| b.eval(k, x), n).unwrap().residual())
                    .collect();
                assert!(rs.windows(2).all(|w| w[1] <= w[0]), "{bank} g_{k}: {rs:?}");
            }
        }
    }

    #[test]
    fn non_finite_target_rejected() {
        assert!(matches!(chebyshev_fit(|x| 1.0 / (x - x), 3), Err(Error::Fit(_))));
    }

    #[test]
    fn apply_constant_is_identity() {
        let a = chebyshev_fit(|_| 1.0, 5).unwrap();
        let op = Array2::from_diag(&array![0.0, 1.0, 2.0]);
        let x = array![[1.0, -2.0], [0.5, 3.0], [7.0, 0.0]];
        let y = chebyshev_apply(&a, &op, x.view()).unwrap();
        assert!(max_abs_diff(x.view(), y.view()) < 1e-13);
        let z = chebyshev_apply(&a, &op, Array2::<f64>::zeros((3, 2)).view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_on_diagonal_operator() {
        let a = chebyshev_fit(|xi: f64| (xi / 2.0).cos(), 10).unwrap();
        let op = Array2::from_diag(&array![0.0, PI / 2.0, PI]);
        let x = Array2::<f64>::ones((3, 1));
        let y = chebyshev_apply(&a, &op, x.view()).unwrap();
        let expected = [1.0, (PI / 4.0).cos(), 0.0];
        for i in 0..3 {
            assert!((y[[i, 0]] - expected[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn apply_shape_error() {
        let a = chebyshev_fit(|_| 1.0, 2).unwrap();
        let op = Array2::<f64>::eye(3);
        assert!(matches!(chebyshev_apply(&a, &op, Array2::<f64>::zeros((2, 1)).view()), Err(Error::Shape(_))));
    }

    fn sym_matrix(n: usize, seed: u64) -> Array2<f64> {
        // random symmetric matrix with spectrum shifted into [0, π]
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let b = Array2::from_shape_fn((n, n), |_| next());
        let s = &b + &b.t();
        let (vals, vecs) = symmetric_eigen(s.view()).unwrap();
        let (lo, hi) = (vals[0], vals[n - 1]);
        let mapped: Array1<f64> = vals.mapv(|v| PI * (v - lo) / (hi - lo));
        vecs.dot(&Array2::from_diag(&mapped)).dot(&vecs.t())
    }

    proptest! {
        #[test]
        fn apply_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let op = sym_matrix(8, seed);
            let approx = chebyshev_fit(|xi: f64| (xi / 2.0).sin(), 7).unwrap();
            let x = sym_matrix(8, seed + 1).slice(ndarray::s![.., 0..3]).to_owned();
            let y = sym_matrix(8, seed + 2).slice(ndarray::s![.., 0..3]).to_owned();
            let lhs = chebyshev_apply(&approx, &op, (&x * a + &y * b).view()).unwrap();
            let rhs = chebyshev_apply(&approx, &op, x.view()).unwrap() * a + chebyshev_apply(&approx, &op, y.view()).unwrap() * b;
            prop_assert!(max_abs_diff(lhs.view(), rhs.view()) < 1e-10);
        }

        #[test]
        fn apply_matches_spectral_calculus(seed in 0u64..1000, n in 3usize..30) {
            let op = sym_matrix(n, seed);
            let f = |xi: f64| (xi / 2.0).cos().powi(2);
            let approx = chebyshev_fit(f, 7).unwrap();
            let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i + 3 * j) as f64).sin());
            let (vals, vecs) = symmetric_eigen(op.view()).unwrap();
            let exact = vecs.dot(&Array2::from_diag(&vals.mapv(f))).dot(&vecs.t()).dot(&x);
            let got = chebyshev_apply(&approx, &op, x.view()).unwrap();
            let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err = (&got - &exact).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(err <= approx.residual() * x_norm + 1e-12, "err {} bound {}", err, approx.residual() * x_norm);
        }
    }
}
