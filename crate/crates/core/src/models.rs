//! pL-UFG, its per-band variant and pL-fUFG: framelet filtering combined
//! with p-Laplacian smoothing, plus a small trainer for per-block gains and
//! a linear softmax head.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framelet::{decompose, framelet_conv, read_matrix_csv, reconstruct, scale_rows, write_matrix_csv, FrameletSystem, Theta};
use crate::graph::{Dataset, Graph};
use crate::plap::{PLaplacian, PenaltySpec, SolverConfig, SolverTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Smooth the framelet-filtered reconstruction as a whole.
    PlUfg,
    /// Smooth each block's reconstruction separately and sum.
    PlUfgPerBand,
    /// Smooth each coefficient block, then reconstruct.
    PlFufg,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::PlUfg, Variant::PlUfgPerBand, Variant::PlFufg];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PlUfg => "pl_ufg",
            Variant::PlUfgPerBand => "pl_ufg_per_band",
            Variant::PlFufg => "pl_fufg",
        }
    }
}

/// Serializable part of a model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    /// Scalar gain per block; all ones when absent.
    #[serde(default)]
    pub gains: Option<Vec<f64>>,
    /// Per-block solver overrides for the per-band variants.
    #[serde(default)]
    pub band_solvers: Option<Vec<SolverConfig>>,
}

fn default_variant() -> Variant {
    Variant::PlUfg
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            variant: default_variant(),
            gains: None,
            band_solvers: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig<'a> {
    pub variant: Variant,
    pub graph: &'a Graph,
    pub system: &'a FrameletSystem,
    pub theta: Theta,
    pub penalty: PenaltySpec,
    pub solver: SolverConfig,
    pub band_solvers: Option<Vec<SolverConfig>>,
}

impl<'a> ModelConfig<'a> {
    /// Configuration with `θ = 1` and a shared solver.
    pub fn new(
        variant: Variant,
        graph: &'a Graph,
        system: &'a FrameletSystem,
        penalty: PenaltySpec,
        solver: SolverConfig,
    ) -> Result<Self> {
        let cfg = Self {
            variant,
            graph,
            system,
            theta: Theta::ones(system),
            penalty,
            solver,
            band_solvers: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_spec(
        spec: &ModelSpec,
        graph: &'a Graph,
        system: &'a FrameletSystem,
        penalty: PenaltySpec,
        solver: SolverConfig,
    ) -> Result<Self> {
        let mut cfg = Self::new(spec.variant, graph, system, penalty, solver)?;
        if let Some(gains) = &spec.gains {
            cfg = cfg.with_theta(Theta::from_gains(system, gains))?;
        }
        if let Some(solvers) = &spec.band_solvers {
            cfg = cfg.with_band_solvers(solvers.clone())?;
        }
        Ok(cfg)
    }

    pub fn with_theta(mut self, theta: Theta) -> Result<Self> {
        self.theta = theta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_band_solvers(mut self, solvers: Vec<SolverConfig>) -> Result<Self> {
        self.band_solvers = Some(solvers);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.graph.n_nodes() != self.system.n_nodes() || self.graph.is_directed() != self.system.is_directed() {
            return Err(Error::SystemMismatch);
        }
        self.theta.check(self.system)?;
        self.penalty.validate()?;
        self.solver.validate()?;
        if let Some(solvers) = &self.band_solvers {
            if solvers.len() != self.system.n_blocks() {
                return Err(Error::Config(format!(
                    "{} band solvers given, system has {} blocks",
                    solvers.len(),
                    self.system.n_blocks()
                )));
            }
            solvers.iter().try_for_each(SolverConfig::validate)?;
        }
        Ok(())
    }

    pub fn solver_for(&self, block: usize) -> &SolverConfig {
        self.band_solvers.as_ref().map_or(&self.solver, |s| &s[block])
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub f: Array2<f64>,
    /// One trace for pL-UFG, one per block for the per-band variants.
    pub traces: Vec<SolverTrace>,
}

pub fn forward(cfg: &ModelConfig<'_>, x: ArrayView2<'_, f64>) -> Result<ModelOutput> {
    match cfg.variant {
        Variant::PlUfg => forward_pl_ufg(cfg, x),
        Variant::PlUfgPerBand => forward_pl_ufg_per_band(cfg, x),
        Variant::PlFufg => forward_pl_fufg(cfg, x),
    }
}

/// `F = argmin S(F) + μ‖F − Wᵀ diag(θ) W X‖²`
pub fn forward_pl_ufg(cfg: &ModelConfig<'_>, x: ArrayView2<'_, f64>) -> Result<ModelOutput> {
    cfg.validate()?;
    let y = framelet_conv(cfg.system, &cfg.theta, x)?;
    let (f, trace) = PLaplacian::new(cfg.graph).solve(y.view(), &cfg.penalty, &cfg.solver)?;
    Ok(ModelOutput { f, traces: vec![trace] })
}

/// `F = Σ_b argmin S(F_b) + μ_b‖F_b − W_bᵀ diag(θ_b) W_b X‖²`
pub fn forward_pl_ufg_per_band(cfg: &ModelConfig<'_>, x: ArrayView2<'_, f64>) -> Result<ModelOutput> {
    cfg.validate()?;
    let coeffs = decompose(cfg.system, x)?;
    let pl = PLaplacian::new(cfg.graph);
    let solved = (0..cfg.system.n_blocks())
        .into_par_iter()
        .map(|b| {
            let filtered = scale_rows(coeffs.blocks()[b].clone(), &cfg.theta.0[b]);
            let y = cfg.system.apply_block_transpose(b, filtered.view())?;
            pl.solve(y.view(), &cfg.penalty, cfg.solver_for(b))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sum_blocks(x, solved))
}

/// `F = Σ_b W_bᵀ argmin S(F_b) + μ_b‖F_b − diag(θ_b) W_b X‖²`
pub fn forward_pl_fufg(cfg: &ModelConfig<'_>, x: ArrayView2<'_, f64>) -> Result<ModelOutput> {
    cfg.validate()?;
    let mut coeffs = decompose(cfg.system, x)?;
    let pl = PLaplacian::new(cfg.graph);
    let solved = coeffs
        .blocks()
        .par_iter()
        .enumerate()
        .map(|(b, block)| {
            let y = scale_rows(block.clone(), &cfg.theta.0[b]);
            pl.solve(y.view(), &cfg.penalty, cfg.solver_for(b))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut traces = Vec::with_capacity(solved.len());
    for (slot, (f, trace)) in coeffs.blocks_mut().iter_mut().zip(solved) {
        *slot = f;
        traces.push(trace);
    }
    Ok(ModelOutput {
        f: reconstruct(cfg.system, &coeffs)?,
        traces,
    })
}

fn sum_blocks(x: ArrayView2<'_, f64>, solved: Vec<(Array2<f64>, SolverTrace)>) -> ModelOutput {
    let mut f = Array2::zeros(x.raw_dim());
    let mut traces = Vec::with_capacity(solved.len());
    // fixed block order keeps the sum reproducible
    for (block, trace) in solved {
        f += &block;
        traces.push(trace);
    }
    ModelOutput { f, traces }
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Per-feature mean and scale used for standardization.
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeadManifest {
    n_features: usize,
    n_classes: usize,
    weights: String,
    bias: String,
    normalization: String,
}

impl LinearHead {
    /// Small Gaussian weights, zero bias, identity standardization.
    pub fn init(n_features: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).expect("finite sigma");
        Self {
            weights: Array2::from_shape_fn((n_features, n_classes), |_| normal.sample(&mut rng)),
            bias: Array1::zeros(n_classes),
            mean: Array1::zeros(n_features),
            scale: Array1::ones(n_features),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    fn standardize(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        (&z - &self.mean) / &self.scale
    }

    pub fn probabilities(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        softmax_rows(self.standardize(z).dot(&self.weights) + &self.bias)
    }

    pub fn predict(&self, z: ArrayView2<'_, f64>) -> Vec<usize> {
        self.probabilities(z).rows().into_iter().map(|r| argmax(r.iter().copied())).collect()
    }

    /// Full-batch gradient descent on the mean cross-entropy of `train` rows.
    pub fn train(&mut self, z: ArrayView2<'_, f64>, labels: &[usize], train: &[bool], epochs: usize, lr: f64) {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| train[i]).collect();
        let zt = z.select(Axis(0), &idx);
        self.mean = zt.mean_axis(Axis(0)).expect("nonempty training rows");
        self.scale = zt.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let xs = self.standardize(zt.view());
        let n = idx.len() as f64;
        for _ in 0..epochs {
            let mut grad = softmax_rows(xs.dot(&self.weights) + &self.bias);
            for (r, &i) in idx.iter().enumerate() {
                grad[[r, labels[i]]] -= 1.0;
            }
            grad /= n;
            self.weights.scaled_add(-lr, &xs.t().dot(&grad));
            self.bias.scaled_add(-lr, &grad.sum_axis(Axis(0)));
        }
    }

    /// `weights.csv`, `bias.csv`, `normalization.csv` and `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = HeadManifest {
            n_features: self.weights.nrows(),
            n_classes: self.weights.ncols(),
            weights: "weights.csv".into(),
            bias: "bias.csv".into(),
            normalization: "normalization.csv".into(),
        };
        write_matrix_csv(&dir.join(&manifest.weights), &self.weights)?;
        write_matrix_csv(&dir.join(&manifest.bias), &self.bias.clone().insert_axis(Axis(0)))?;
        let mut norm = Array2::zeros((2, self.mean.len()));
        norm.row_mut(0).assign(&self.mean);
        norm.row_mut(1).assign(&self.scale);
        write_matrix_csv(&dir.join(&manifest.normalization), &norm)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: HeadManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let weights = read_matrix_csv(&dir.join(&manifest.weights))?;
        let bias = read_matrix_csv(&dir.join(&manifest.bias))?;
        let norm = read_matrix_csv(&dir.join(&manifest.normalization))?;
        let (f, c) = (manifest.n_features, manifest.n_classes);
        if weights.dim() != (f, c) || bias.dim() != (1, c) || norm.dim() != (2, f) {
            return Err(Error::Shape("head files disagree with manifest".into()));
        }
        Ok(Self {
            weights,
            bias: bias.row(0).to_owned(),
            mean: norm.row(0).to_owned(),
            scale: norm.row(1).to_owned(),
        })
    }
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    logits
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Row-wise argmax of a score matrix.
pub fn argmax_rows(scores: ArrayView2<'_, f64>) -> Vec<usize> {
    scores.rows().into_iter().map(|r| argmax(r.iter().copied())).collect()
}

/// Fraction of `mask` nodes whose prediction matches; NaN for an empty mask.
pub fn accuracy(pred: &[usize], labels: &[usize], mask: &[bool]) -> f64 {
    let (hit, total) = pred
        .iter()
        .zip(labels)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0usize, 0usize), |(h, t), ((p, l), _)| (h + usize::from(p == l), t + 1));
    if total == 0 {
        f64::NAN
    } else {
        hit as f64 / total as f64
    }
}

/// Accuracy on `eval` of always predicting the most frequent `train` class.
pub fn majority_baseline(labels: &[usize], train: &[bool], eval: &[bool]) -> f64 {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for (&l, _) in labels.iter().zip(train).filter(|(_, &t)| t) {
        counts[l] += 1;
    }
    let majority = argmax(counts.iter().map(|&c| c as f64));
    accuracy(&vec![majority; labels.len()], labels, eval)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub majority_baseline: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub gains: Vec<f64>,
    pub head: LinearHead,
    pub metrics: Metrics,
}

/// Candidate values for each block's scalar gain.
pub const GAIN_GRID: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

/// One pass of coordinate search over per-block gains, each candidate scored
/// by the validation accuracy of a freshly trained head (training accuracy
/// when the validation mask is empty). Ties keep the earlier candidate.
pub fn fit_theta_and_head(cfg: &ModelConfig<'_>, ds: &Dataset, epochs: usize, lr: f64, seed: u64) -> Result<FitResult> {
    if epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
    }
    if ds.n_nodes() != cfg.system.n_nodes() {
        return Err(Error::SystemMismatch);
    }
    let masks = &ds.masks;
    let train_classes: std::collections::BTreeSet<usize> =
        ds.labels.iter().zip(&masks.train).filter(|(_, &t)| t).map(|(&l, _)| l).collect();
    if train_classes.len() < 2 {
        return Err(Error::Training(format!(
            "training set covers {} class(es); at least 2 needed",
            train_classes.len()
        )));
    }
    let select_mask = if masks.val.iter().any(|&v| v) { &masks.val } else { &masks.train };

    let evaluate = |gains: &[f64]| -> Result<(f64, LinearHead, Vec<usize>)> {
        let model = cfg.clone().with_theta(Theta::from_gains(cfg.system, gains))?;
        let out = forward(&model, ds.features.view())?;
        let mut head = LinearHead::init(out.f.ncols(), ds.n_classes(), seed);
        head.train(out.f.view(), &ds.labels, &masks.train, epochs, lr);
        let pred = head.predict(out.f.view());
        Ok((accuracy(&pred, &ds.labels, select_mask), head, pred))
    };

    let mut gains = vec![1.0; cfg.system.n_blocks()];
    let (mut best_score, mut best_head, mut best_pred) = evaluate(&gains)?;
    for b in 0..gains.len() {
        for &g in &GAIN_GRID {
            if g == gains[b] {
                continue;
            }
            let mut trial = gains.clone();
            trial[b] = g;
            if trial.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (score, head, pred) = evaluate(&trial)?;
            if score > best_score {
                (best_score, best_head, best_pred, gains) = (score, head, pred, trial);
            }
        }
    }
    let metrics = Metrics {
        train_accuracy: accuracy(&best_pred, &ds.labels, &masks.train),
        val_accuracy: accuracy(&best_pred, &ds.labels, &masks.val),
        test_accuracy: accuracy(&best_pred, &ds.labels, &masks.test),
        majority_baseline: majority_baseline(&ds.labels, &masks.train, &masks.test),
    };
    Ok(FitResult {
        gains,
        head: best_head,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::builtin_bank;
    use crate::framelet::{build_system, TransformMode};
    use crate::graph::synthetic::{random_connected, random_weighted, sbm_dataset};
    use crate::graph::{Edge, SplitRatios};
    use crate::linalg::relative_error;
    use ndarray::array;

    fn signal(n: usize, f: usize, seed: u64) -> Array2<f64> {
        Array2::from_shape_fn((n, f), |(i, j)| ((i * 7 + j * 3) as f64 * 0.9 + seed as f64).cos())
    }

    fn p2() -> PenaltySpec {
        PenaltySpec::power(2.0).unwrap()
    }

    fn solver(mu: f64) -> SolverConfig {
        SolverConfig {
            mu,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn large_mu_returns_input() {
        let g = random_connected(25, 0.2, 1);
        for bank in ["haar", "linear"] {
            let sys = build_system(&g, &builtin_bank(bank).unwrap(), 1, 2.0, TransformMode::Exact).unwrap();
            let x = signal(25, 3, 2);
            for v in Variant::ALL {
                let cfg = ModelConfig::new(v, &g, &sys, p2(), solver(1e6)).unwrap();
                let out = forward(&cfg, x.view()).unwrap();
                assert!(relative_error(out.f.view(), x.view()) < 1e-3, "{bank} {v:?}");
                let expected = if v == Variant::PlUfg { 1 } else { sys.n_blocks() };
                assert_eq!(out.traces.len(), expected);
            }
        }
    }

    #[test]
    fn path_matches_closed_form() {
        let g = Graph::new(2, [Edge::unit(0, 1)], false).unwrap();
        let sys = build_system(&g, &builtin_bank("haar").unwrap(), 1, 2.0, TransformMode::Exact).unwrap();
        let cfg = ModelConfig::new(
            Variant::PlUfg,
            &g,
            &sys,
            p2(),
            SolverConfig {
                iterations: 100,
                ..solver(1.0)
            },
        )
        .unwrap();
        let out = forward(&cfg, array![[1.0], [0.0]].view()).unwrap();
        assert!((out.f[[0, 0]] - 2.0 / 3.0).abs() < 1e-6);
        assert!((out.f[[1, 0]] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn zero_input_gives_zero() {
        let g = random_connected(12, 0.3, 3);
        let sys = build_system(&g, &builtin_bank("linear").unwrap(), 1, 2.0, TransformMode::Chebyshev { degree: 7 }).unwrap();
        let z = Array2::<f64>::zeros((12, 2));
        for v in Variant::ALL {
            for penalty in [p2(), PenaltySpec::power(1.5).unwrap(), PenaltySpec::reg_tv(1.0, 0.01).unwrap()] {
                let cfg = ModelConfig::new(v, &g, &sys, penalty, solver(1.0)).unwrap();
                assert!(forward(&cfg, z.view()).unwrap().f.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn per_band_single_block_matches_joint() {
        let g = random_connected(20, 0.2, 4);
        let sys = build_system(&g, &builtin_bank("haar").unwrap(), 0, 2.0, TransformMode::Exact).unwrap();
        let x = signal(20, 2, 5);
        let masked = Theta::from_gains(&sys, &[1.0, 0.0]);
        let joint = ModelConfig::new(Variant::PlUfg, &g, &sys, p2(), solver(1e6)).unwrap().with_theta(masked.clone()).unwrap();
        let band = ModelConfig::new(Variant::PlUfgPerBand, &g, &sys, p2(), solver(1e6)).unwrap().with_theta(masked).unwrap();
        let a = forward(&joint, x.view()).unwrap().f;
        let b = forward(&band, x.view()).unwrap().f;
        assert!(relative_error(b.view(), a.view()) < 1e-6);
    }

    #[test]
    fn fufg_p2_matches_bandwise_closed_form() {
        let g = random_weighted(20, 0.25, 6);
        let sys = build_system(&g, &builtin_bank("linear").unwrap(), 1, 2.0, TransformMode::Exact).unwrap();
        let x = signal(20, 2, 1);
        let gains = [1.0, 0.5, 2.0, 1.0, 0.0];
        let cfg = ModelConfig::new(
            Variant::PlFufg,
            &g,
            &sys,
            p2(),
            SolverConfig {
                iterations: 400,
                ..solver(1.0)
            },
        )
        .unwrap()
        .with_theta(Theta::from_gains(&sys, &gains))
        .unwrap();
        let out = forward(&cfg, x.view()).unwrap();
        let pl = PLaplacian::new(&g);
        let mut expected = Array2::zeros((20, 2));
        for (b, &gain) in gains.iter().enumerate() {
            let y = sys.apply_block(b, x.view()).unwrap() * gain;
            let fb = pl.closed_form_p2(y.view(), 1.0, 3000).unwrap();
            expected += &sys.apply_block_transpose(b, fb.view()).unwrap();
        }
        assert!(relative_error(out.f.view(), expected.view()) < 1e-6);
    }

    #[test]
    fn p2_forwards_are_linear() {
        let g = random_connected(18, 0.25, 7);
        let sys = build_system(&g, &builtin_bank("linear").unwrap(), 1, 2.0, TransformMode::Chebyshev { degree: 7 }).unwrap();
        let (a, b) = (signal(18, 2, 1), signal(18, 2, 9));
        for v in Variant::ALL {
            let cfg = ModelConfig::new(v, &g, &sys, p2(), solver(0.5)).unwrap();
            let combined = forward(&cfg, (&a * 2.0 - &b * 3.0).view()).unwrap().f;
            let separate = forward(&cfg, a.view()).unwrap().f * 2.0 - forward(&cfg, b.view()).unwrap().f * 3.0;
            assert!(relative_error(combined.view(), separate.view()) < 1e-8, "{v:?}");
        }
    }

    #[test]
    fn outputs_finite_for_all_penalties() {
        let g = random_weighted(20, 0.2, 8);
        let sys = build_system(&g, &builtin_bank("haar").unwrap(), 2, 1.5, TransformMode::Chebyshev { degree: 3 }).unwrap();
        let x = signal(20, 3, 2);
        for penalty in [1.1, 1.5, 2.0, 2.5].map(|p| PenaltySpec::power(p).unwrap()).into_iter().chain([PenaltySpec::reg_tv(1.0, 1e-3).unwrap()]) {
            for v in Variant::ALL {
                let cfg = ModelConfig::new(v, &g, &sys, penalty, solver(0.5)).unwrap();
                assert!(forward(&cfg, x.view()).unwrap().f.iter().all(|x| x.is_finite()));
            }
        }
    }

    #[test]
    fn band_solver_overrides() {
        let g = random_connected(10, 0.3, 1);
        let sys = build_system(&g, &builtin_bank("haar").unwrap(), 0, 2.0, TransformMode::Exact).unwrap();
        let cfg = ModelConfig::new(Variant::PlFufg, &g, &sys, p2(), solver(1.0)).unwrap();
        assert!(cfg.clone().with_band_solvers(vec![solver(1.0)]).is_err());
        let cfg = cfg.with_band_solvers(vec![solver(1e6), solver(1e6)]).unwrap();
        assert_eq!(cfg.solver_for(1).mu, 1e6);
        let x = signal(10, 1, 3);
        assert!(relative_error(forward(&cfg, x.view()).unwrap().f.view(), x.view()) < 1e-3);
        let other = random_connected(11, 0.3, 1);
        assert!(matches!(ModelConfig::new(Variant::PlUfg, &other, &sys, p2(), solver(1.0)), Err(Error::SystemMismatch)));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = ModelSpec {
            variant: Variant::PlUfgPerBand,
            gains: Some(vec![1.0, 0.5]),
            band_solvers: None,
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"pl_ufg_per_band\""));
        assert_eq!(serde_json::from_str::<ModelSpec>(&text).unwrap(), spec);
    }

    fn sbm() -> Dataset {
        sbm_dataset(120, 2, 0.2, 0.02, 4, 0.5, SplitRatios::HETEROPHILIC, 3).unwrap()
    }

    #[test]
    fn trained_head_beats_majority() {
        let ds = sbm();
        let sys = build_system(&ds.graph, &builtin_bank("haar").unwrap(), 1, 2.0, TransformMode::Chebyshev { degree: 3 }).unwrap();
        let cfg = ModelConfig::new(Variant::PlUfg, &ds.graph, &sys, p2(), solver(0.5)).unwrap();
        let fit = fit_theta_and_head(&cfg, &ds, 200, 0.05, 1).unwrap();
        let baseline = majority_baseline(&ds.labels, &ds.masks.train, &ds.masks.val);
        assert!(fit.metrics.val_accuracy >= baseline);
        let again = fit_theta_and_head(&cfg, &ds, 200, 0.05, 1).unwrap();
        assert_eq!(fit.metrics, again.metrics);
        assert_eq!(fit.gains, again.gains);
    }

    #[test]
    fn zero_learning_rate_keeps_initial_head() {
        let ds = sbm();
        let sys = build_system(&ds.graph, &builtin_bank("haar").unwrap(), 0, 2.0, TransformMode::Chebyshev { degree: 3 }).unwrap();
        let cfg = ModelConfig::new(Variant::PlUfg, &ds.graph, &sys, p2(), solver(1.0)).unwrap();
        let fit = fit_theta_and_head(&cfg, &ds, 1, 0.0, 42).unwrap();
        let init = LinearHead::init(ds.n_features(), 2, 42);
        assert_eq!(fit.head.weights, init.weights);
        assert_eq!(fit.head.bias, init.bias);
    }

    #[test]
    fn single_class_training_set_is_rejected() {
        let ds = sbm();
        let mut masks = ds.masks.clone();
        for (i, t) in masks.train.iter_mut().enumerate() {
            *t = *t && ds.labels[i] == 0;
        }
        let ds = ds.with_masks(masks).unwrap();
        let sys = build_system(&ds.graph, &builtin_bank("haar").unwrap(), 0, 2.0, TransformMode::Chebyshev { degree: 3 }).unwrap();
        let cfg = ModelConfig::new(Variant::PlUfg, &ds.graph, &sys, p2(), solver(1.0)).unwrap();
        assert!(matches!(fit_theta_and_head(&cfg, &ds, 5, 0.01, 0), Err(Error::Training(_))));
    }

    #[test]
    fn head_save_load_round_trip() {
        let mut head = LinearHead::init(3, 2, 5);
        let z = signal(10, 3, 1);
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        head.train(z.view(), &labels, &[true; 10], 20, 0.1);
        let dir = tempfile::tempdir().unwrap();
        head.save(dir.path()).unwrap();
        assert_eq!(LinearHead::load(dir.path()).unwrap(), head);
    }

    #[test]
    fn accuracy_helpers() {
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 0], &[true, true, true]), 2.0 / 3.0);
        assert!(accuracy(&[0], &[0], &[false]).is_nan());
        assert_eq!(majority_baseline(&[0, 0, 1, 1, 1], &[true, true, true, false, false], &[false, false, false, true, true]), 0.0);
        assert_eq!(argmax_rows(array![[0.1, 0.9], [0.7, 0.3]].view()), vec![1, 0]);
    }
}
