//! Experiment harness: JSON configuration, grid expansion, and the `verify`,
//! `denoise`, `classify` and `stats` commands.
//!
//! Every command returns a [`RunReport`]: a CSV table whose bytes depend only
//! on the configuration and seed, plus a JSON summary that also carries the
//! elapsed time and an environment stamp.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::filters::{
    builtin_bank, verify_identity, FilterBank, BUILTIN_IDENTITY_TOL, CUSTOM_IDENTITY_TOL, GATE_GRID,
};
use crate::framelet::{build_system_with, round_trip_error, tight_frame_residual, BuildOptions, FrameletSystem, TransformMode};
use crate::graph::synthetic::{
    class_features, gaussian_noise, low_frequency_signal, random_connected, random_directed, random_weighted,
    two_clique_dataset,
};
use crate::graph::{homophily, load_dataset, Dataset, LoadOptions, Masks, SplitRatios};
use crate::linalg::{frobenius_norm, relative_error};
use crate::models::{accuracy, argmax_rows, fit_theta_and_head, forward, majority_baseline, LinearHead, ModelConfig, ModelSpec, Variant};
use crate::plap::{PLaplacian, PenaltyKind, PenaltySpec, SolverConfig};

const UNSPLIT: SplitRatios = SplitRatios {
    train: 0.0,
    val: 0.0,
    test: 1.0,
};

/// Largest `p` accepted in a grid.
pub const MAX_P: f64 = 2.5;
/// Iterations given to the solver in the `p = 2` oracle suite.
pub const ORACLE_ITERATIONS: usize = 500;
pub const ORACLE_TOL: f64 = 1e-6;
pub const TIGHT_FRAME_TOL: f64 = 1e-8;
pub const ROUND_TRIP_TOL: f64 = 1e-3;
/// Chebyshev degree from which the round-trip bound applies.
pub const ROUND_TRIP_DEGREE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Verify,
    Denoise,
    Classify,
    Stats,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Verify => "verify",
            Task::Denoise => "denoise",
            Task::Classify => "classify",
            Task::Stats => "stats",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// p-Laplacian label spreading of one-hot training labels.
    Spreading,
    /// Model output features plus a trained linear softmax head.
    Head,
}

impl Route {
    fn name(self) -> &'static str {
        match self {
            Route::Spreading => "spreading",
            Route::Head => "head",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedSplit {
    Homophilic,
    Heterophilic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitChoice {
    Named(NamedSplit),
    Ratios(SplitRatios),
}

impl SplitChoice {
    pub fn ratios(self) -> SplitRatios {
        match self {
            SplitChoice::Named(NamedSplit::Homophilic) => SplitRatios::HOMOPHILIC,
            SplitChoice::Named(NamedSplit::Heterophilic) => SplitRatios::HETEROPHILIC,
            SplitChoice::Ratios(r) => r,
        }
    }
}

fn default_homophilic() -> SplitChoice {
    SplitChoice::Named(NamedSplit::Homophilic)
}

fn default_heterophilic() -> SplitChoice {
    SplitChoice::Named(NamedSplit::Heterophilic)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Directory with `features.csv`, `labels.csv`, `edges.csv` and an
    /// optional `splits.json`.
    Dir {
        path: PathBuf,
        #[serde(default)]
        directed: bool,
        #[serde(default)]
        symmetrize: bool,
        #[serde(default = "default_homophilic")]
        split: SplitChoice,
    },
    Sbm {
        n: usize,
        #[serde(default = "two")]
        classes: usize,
        p_in: f64,
        p_out: f64,
        #[serde(default = "eight")]
        n_features: usize,
        #[serde(default = "unit")]
        separation: f64,
        #[serde(default = "default_heterophilic")]
        split: SplitChoice,
    },
    TwoCliques {
        size: usize,
        #[serde(default = "two")]
        n_features: usize,
    },
    /// Connected random graph (a path plus `G(n, p)` edges) with Gaussian
    /// features and a single class.
    Random {
        n: usize,
        p: f64,
        #[serde(default)]
        weighted: bool,
        #[serde(default)]
        directed: bool,
        #[serde(default = "four")]
        n_features: usize,
    },
}

/// Replace the features by a combination of the `k` lowest nontrivial
/// Laplacian eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothSignal {
    pub k: usize,
    #[serde(default = "four")]
    pub n_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub source: DatasetSource,
    #[serde(default)]
    pub smooth_signal: Option<SmoothSignal>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: DatasetSource::Random {
                n: 40,
                p: 0.1,
                weighted: false,
                directed: false,
                n_features: 4,
            },
            smooth_signal: None,
        }
    }
}

/// Scale one scaling function of the bank, breaking its identity on purpose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub band: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameletSpec {
    /// `haar`, `linear`, or a path to a JSON bank.
    #[serde(default = "default_bank")]
    pub bank: String,
    #[serde(default = "one", alias = "L")]
    pub level: usize,
    #[serde(default = "two_f", alias = "s")]
    pub dilation: f64,
    #[serde(default)]
    pub mode: TransformMode,
    #[serde(default)]
    pub perturb: Option<Perturbation>,
    #[serde(default = "default_dense_cap")]
    pub dense_cap: usize,
}

impl Default for FrameletSpec {
    fn default() -> Self {
        Self {
            bank: default_bank(),
            level: 1,
            dilation: 2.0,
            mode: TransformMode::default(),
            perturb: None,
            dense_cap: default_dense_cap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySpec {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

impl Default for ClassifySpec {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            lr: default_lr(),
        }
    }
}

/// Lists to sweep; an absent list means the single base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    pub variant: Option<Vec<Variant>>,
    pub route: Option<Vec<Route>>,
    pub sigma: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
    #[serde(alias = "s")]
    pub dilation: Option<Vec<f64>>,
    #[serde(alias = "n")]
    pub degree: Option<Vec<usize>>,
    #[serde(alias = "T")]
    pub iterations: Option<Vec<usize>>,
    pub lr: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub framelet: FrameletSpec,
    #[serde(default = "default_penalty")]
    pub penalty: PenaltySpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub classify: ClassifySpec,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn four() -> usize {
    4
}
fn eight() -> usize {
    8
}
fn unit() -> f64 {
    1.0
}
fn two_f() -> f64 {
    2.0
}
fn default_bank() -> String {
    "haar".into()
}
fn default_dense_cap() -> usize {
    BuildOptions::default().dense_cap
}
fn default_epochs() -> usize {
    200
}
fn default_lr() -> f64 {
    0.01
}
fn default_penalty() -> PenaltySpec {
    PenaltySpec::power(2.0).expect("p = 2 is valid")
}

impl ExperimentConfig {
    /// Minimal configuration for `task` on the default synthetic graph.
    pub fn new(task: Task) -> Self {
        serde_json::from_value(json!({ "task": task })).expect("defaults deserialize")
    }

    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json_str(&text, &base)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.repeats == 0 {
            return cfg_err("repeats must be at least 1".into());
        }
        if self.workers == Some(0) {
            return cfg_err("workers must be at least 1".into());
        }
        if self.framelet.dilation.is_nan() || self.framelet.dilation <= 1.0 {
            return cfg_err(format!("dilation must be > 1, got {}", self.framelet.dilation));
        }
        if let TransformMode::Chebyshev { degree: 0 } = self.framelet.mode {
            return cfg_err("chebyshev degree must be positive".into());
        }
        self.penalty.validate()?;
        self.solver.validate()?;
        if self.classify.epochs == 0 {
            return cfg_err("epochs must be at least 1".into());
        }
        let g = &self.grids;
        let relevant: &[&str] = match self.task {
            Task::Verify => &["mu", "dilation", "degree"],
            Task::Denoise => &["variant", "sigma", "p", "mu", "dilation", "degree", "iterations"],
            Task::Classify => &["variant", "route", "p", "mu", "dilation", "degree", "iterations", "lr"],
            Task::Stats => &[],
        };
        let given = [
            ("variant", g.variant.as_ref().map(Vec::len)),
            ("route", g.route.as_ref().map(Vec::len)),
            ("sigma", g.sigma.as_ref().map(Vec::len)),
            ("p", g.p.as_ref().map(Vec::len)),
            ("mu", g.mu.as_ref().map(Vec::len)),
            ("dilation", g.dilation.as_ref().map(Vec::len)),
            ("degree", g.degree.as_ref().map(Vec::len)),
            ("iterations", g.iterations.as_ref().map(Vec::len)),
            ("lr", g.lr.as_ref().map(Vec::len)),
        ];
        for (name, len) in given {
            match len {
                Some(0) => return cfg_err(format!("grid '{name}' is empty")),
                Some(_) if !relevant.contains(&name) => {
                    return cfg_err(format!("grid '{name}' does not apply to task {}", self.task.name()))
                }
                _ => {}
            }
        }
        for &p in g.p.iter().flatten() {
            let lower_ok = match self.penalty.kind {
                PenaltyKind::Power => p > 1.0,
                PenaltyKind::RegTv => p >= 1.0,
            };
            if !(lower_ok && p <= MAX_P) {
                return cfg_err(format!(
                    "grid p = {p} outside the accepted range for {:?} penalties (power: (1, {MAX_P}], reg_tv: [1, {MAX_P}])",
                    self.penalty.kind
                ));
            }
        }
        if self.penalty.p.is_nan() || self.penalty.p > MAX_P {
            return cfg_err(format!("penalty p must be <= {MAX_P}"));
        }
        if g.mu.iter().flatten().any(|&m| !(m > 0.0 && m.is_finite())) {
            return cfg_err("grid mu values must be > 0".into());
        }
        if g.dilation.iter().flatten().any(|&s| !(s > 1.0 && s.is_finite())) {
            return cfg_err("grid dilation values must be > 1".into());
        }
        if g.degree.iter().flatten().any(|&n| n == 0) {
            return cfg_err("grid degree values must be positive".into());
        }
        if g.degree.is_some() && matches!(self.framelet.mode, TransformMode::Exact) && self.task != Task::Verify {
            return cfg_err("degree grid requires chebyshev mode".into());
        }
        if g.iterations.iter().flatten().any(|&t| t == 0) {
            return cfg_err("grid iteration counts must be positive".into());
        }
        if g.sigma.iter().flatten().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return cfg_err("noise level sigma must be >= 0".into());
        }
        if g.lr.iter().flatten().any(|&l| !(l >= 0.0 && l.is_finite())) || self.classify.lr.is_nan() || self.classify.lr < 0.0 {
            return cfg_err("learning rates must be >= 0".into());
        }
        if let Some(pert) = self.framelet.perturb {
            if !pert.factor.is_finite() {
                return cfg_err("perturbation factor must be finite".into());
            }
        }
        Ok(())
    }

    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        self.seed.wrapping_add(repeat as u64)
    }

    /// The configured bank, with the perturbation applied when present.
    pub fn bank(&self) -> Result<(FilterBank, bool)> {
        let spec = &self.framelet;
        let (bank, builtin) = match spec.bank.as_str() {
            "haar" | "linear" => (builtin_bank(&spec.bank)?, true),
            path => (FilterBank::from_json_file(&self.resolve(Path::new(path)))?, false),
        };
        match spec.perturb {
            Some(Perturbation { band, factor }) => {
                if band > bank.k() {
                    return Err(Error::Config(format!("perturbed band {band} exceeds K = {}", bank.k())));
                }
                Ok((bank.perturbed(band, factor), false))
            }
            None => Ok((bank, builtin)),
        }
    }

    /// Dataset for one repeat; synthetic graphs and random splits follow the
    /// repeat seed.
    pub fn dataset(&self, repeat: usize) -> Result<Dataset> {
        self.dataset_with(repeat, None)
    }

    fn dataset_with(&self, repeat: usize, split_override: Option<SplitRatios>) -> Result<Dataset> {
        let seed = self.repeat_seed(repeat);
        let mut ds = match &self.dataset.source {
            DatasetSource::Dir {
                path,
                directed,
                symmetrize,
                split,
            } => load_dataset(
                &self.resolve(path),
                &LoadOptions {
                    directed: *directed,
                    symmetrize: *symmetrize,
                    ratios: split_override.unwrap_or(split.ratios()),
                    seed,
                },
            )?,
            &DatasetSource::Sbm {
                n,
                classes,
                p_in,
                p_out,
                n_features,
                separation,
                split,
            } => {
                check_probability(p_in)?;
                check_probability(p_out)?;
                if classes == 0 || n < classes {
                    return Err(Error::Config(format!("sbm needs n >= classes >= 1 (n = {n}, classes = {classes})")));
                }
                crate::graph::synthetic::sbm_dataset(n, classes, p_in, p_out, n_features, separation, split.ratios(), seed)?
            }
            &DatasetSource::TwoCliques { size, n_features } => {
                if size < 2 {
                    return Err(Error::Config("two_cliques size must be >= 2".into()));
                }
                two_clique_dataset(size, n_features)?
            }
            &DatasetSource::Random {
                n,
                p,
                weighted,
                directed,
                n_features,
            } => {
                check_probability(p)?;
                if n < 2 {
                    return Err(Error::Config("random graph needs n >= 2".into()));
                }
                let graph = match (directed, weighted) {
                    (true, _) => random_directed(n, p, seed),
                    (false, true) => random_weighted(n, p, seed),
                    (false, false) => random_connected(n, p, seed),
                };
                let labels = vec![0; n];
                let features = class_features(&labels, n_features, 0.0, seed.wrapping_add(1));
                let masks = Masks {
                    train: vec![true; n],
                    val: vec![false; n],
                    test: vec![false; n],
                };
                Dataset::new(graph, features, labels, masks)?
            }
        };
        if let Some(sig) = self.dataset.smooth_signal {
            if ds.graph.is_directed() {
                return Err(Error::Config("smooth_signal requires an undirected graph".into()));
            }
            if ds.n_nodes() > self.framelet.dense_cap {
                return Err(Error::Config("smooth_signal needs a dense eigendecomposition; graph exceeds dense_cap".into()));
            }
            ds.features = low_frequency_signal(&ds.graph, sig.k, sig.n_features, seed.wrapping_add(7))?;
        }
        Ok(ds)
    }

    fn system(&self, ds: &Dataset, bank: &FilterBank, dilation: f64, degree: Option<usize>) -> Result<FrameletSystem> {
        let mode = match (self.framelet.mode, degree) {
            (TransformMode::Chebyshev { .. }, Some(d)) => TransformMode::Chebyshev { degree: d },
            (mode, _) => mode,
        };
        build_system_with(
            &ds.graph,
            bank,
            self.framelet.level,
            dilation,
            mode,
            BuildOptions {
                dense_cap: self.framelet.dense_cap,
            },
        )
    }

    fn penalty_with(&self, p: f64) -> PenaltySpec {
        PenaltySpec { p, ..self.penalty }
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("edge probability {p} outside [0, 1]")))
    }
}

/// One point of the Cartesian product of the configured grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub variant: Variant,
    pub route: Route,
    pub sigma: f64,
    pub p: f64,
    pub mu: f64,
    pub dilation: f64,
    pub degree: Option<usize>,
    pub iterations: usize,
    pub lr: f64,
}

impl GridPoint {
    pub fn solver(&self, base: &SolverConfig) -> SolverConfig {
        SolverConfig {
            mu: self.mu,
            iterations: self.iterations,
            ..*base
        }
    }

    fn system_key(&self) -> (u64, Option<usize>) {
        (self.dilation.to_bits(), self.degree)
    }
}

/// Full Cartesian product, outermost axis first:
/// variant, route, sigma, p, mu, dilation, degree, iterations, lr.
pub fn expand_grid(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let g = &cfg.grids;
    let or = |v: &Option<Vec<f64>>, base: f64| v.clone().unwrap_or_else(|| vec![base]);
    let variants = g.variant.clone().unwrap_or_else(|| vec![cfg.model.variant]);
    let routes = g.route.clone().unwrap_or_else(|| vec![Route::Spreading]);
    let sigmas = or(&g.sigma, 0.5);
    let ps = or(&g.p, cfg.penalty.p);
    let mus = or(&g.mu, cfg.solver.mu);
    let dilations = or(&g.dilation, cfg.framelet.dilation);
    let degrees: Vec<Option<usize>> = match (cfg.framelet.mode, &g.degree) {
        (TransformMode::Chebyshev { .. }, Some(list)) => list.iter().map(|&d| Some(d)).collect(),
        (TransformMode::Chebyshev { degree }, None) => vec![Some(degree)],
        (TransformMode::Exact, _) => vec![None],
    };
    let iterations = g.iterations.clone().unwrap_or_else(|| vec![cfg.solver.iterations]);
    let lrs = or(&g.lr, cfg.classify.lr);
    let mut points = Vec::new();
    for &variant in &variants {
        for &route in &routes {
            for &sigma in &sigmas {
                for &p in &ps {
                    for &mu in &mus {
                        for &dilation in &dilations {
                            for &degree in &degrees {
                                for &iters in &iterations {
                                    for &lr in &lrs {
                                        points.push(GridPoint {
                                            variant,
                                            route,
                                            sigma,
                                            p,
                                            mu,
                                            dilation,
                                            degree,
                                            iterations: iters,
                                            lr,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// At least one verified invariant failed.
    InvariantFailure,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub task: Task,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: Value,
    pub status: RunStatus,
    /// Trained heads keyed by a directory name.
    pub heads: Vec<(String, LinearHead)>,
}

impl RunReport {
    pub fn csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Write `report.csv`, `summary.json` and any trained heads under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.csv())?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)? + "\n")?;
        for (name, head) in &self.heads {
            head.save(&dir.join("heads").join(name))?;
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx].as_str()).collect())
    }
}

/// Process exit status for an error: 2 for configuration and input
/// problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Load { .. } | Error::Json(_) | Error::Io(_) | Error::Split(_) | Error::InvalidGraph(_) => 2,
        _ => 1,
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    match cfg.task {
        Task::Verify => cmd_verify(cfg),
        Task::Denoise => cmd_denoise(cfg),
        Task::Classify => cmd_classify(cfg),
        Task::Stats => cmd_stats(cfg),
    }
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cfg.workers {
        builder = builder.num_threads(k);
    }
    builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Shortest round-trip text; scientific notation outside `[1e-4, 1e15)`.
fn fmt_f(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or(String::new(), |d| d.to_string())
}

fn environment(cfg: &ExperimentConfig) -> Value {
    json!({
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "os": std::env::consts::OS,
        "arch": std::env::consts::ARCH,
        "workers": cfg.workers.unwrap_or_else(rayon::current_num_threads),
    })
}

struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// Mean and sample standard deviation (null for a single value) of each
/// metric column, grouped by the `point` column.
fn aggregate(table: &Table, params: &[GridPoint], metrics: &[&str], repeats: usize) -> Value {
    let point_col = table.columns.iter().position(|c| c == "point").expect("point column");
    let metric_cols: Vec<(usize, &str)> = metrics
        .iter()
        .map(|m| (table.columns.iter().position(|c| c == m).expect("metric column"), *m))
        .collect();
    let mut groups: BTreeMap<usize, Vec<&Vec<String>>> = BTreeMap::new();
    for row in &table.rows {
        groups.entry(row[point_col].parse().expect("point index")).or_default().push(row);
    }
    let points: Vec<Value> = groups
        .iter()
        .map(|(&idx, rows)| {
            let mut m = serde_json::Map::new();
            for &(col, name) in &metric_cols {
                let vals: Vec<f64> = rows.iter().map(|r| r[col].parse::<f64>().unwrap_or(f64::NAN)).collect();
                let (mean, std) = mean_std(&vals);
                m.insert(name.into(), json!({ "mean": finite_or_null(mean), "std": std.and_then(finite_or_null) }));
            }
            json!({ "point": idx, "params": params[idx], "repeats": repeats, "metrics": m })
        })
        .collect();
    Value::Array(points)
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Mean and sample standard deviation; the deviation is `None` below two values.
pub fn mean_std(vals: &[f64]) -> (f64, Option<f64>) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, None);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

fn summary(cfg: &ExperimentConfig, table: &Table, extra: Value, started: Instant) -> Value {
    json!({
        "task": cfg.task.name(),
        "seed": cfg.seed,
        "repeats": cfg.repeats,
        "rows": table.rows.len(),
        "columns": table.columns,
        "config": cfg,
        "results": extra,
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "environment": environment(cfg),
    })
}

/// Run `jobs` on the configured pool; results come back in job order.
fn run_jobs<J: Sync, T: Send>(cfg: &ExperimentConfig, jobs: &[J], f: impl Fn(&J) -> Result<T> + Sync) -> Result<Vec<T>> {
    pool(cfg)?.install(|| jobs.par_iter().map(&f).collect::<Vec<Result<T>>>().into_iter().collect())
}

/// Build every framelet system the grid needs for one dataset.
fn systems_for(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    bank: &FilterBank,
    points: &[GridPoint],
) -> Result<BTreeMap<(u64, Option<usize>), FrameletSystem>> {
    let mut keys: Vec<(u64, Option<usize>)> = points.iter().map(GridPoint::system_key).collect();
    keys.sort_unstable();
    keys.dedup();
    let built = run_jobs(cfg, &keys, |&(bits, degree)| cfg.system(ds, bank, f64::from_bits(bits), degree))?;
    Ok(keys.into_iter().zip(built).collect())
}

/// Filter identity, tight frame, Chebyshev round trip and the `p = 2`
/// solver oracle on the configured graph.
pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let ds = cfg.dataset(0)?;
    let (bank, builtin) = cfg.bank()?;
    let g = &ds.graph;
    let n = g.n_nodes();
    let mut table = Table::new(&["suite", "case", "residual", "threshold", "status"]);
    let mut push = |suite: &str, case: String, residual: f64, threshold: f64, status: &str| {
        table.rows.push(vec![suite.into(), case, fmt_f(residual), fmt_f(threshold), status.into()]);
    };
    let verdict = |ok: bool| if ok { "pass" } else { "fail" };

    let tol = if builtin { BUILTIN_IDENTITY_TOL } else { CUSTOM_IDENTITY_TOL };
    let residual = verify_identity(&bank, GATE_GRID);
    push("filter_identity", bank.name.clone(), residual, tol, verdict(residual < tol));

    let dilations = cfg.grids.dilation.clone().unwrap_or_else(|| vec![cfg.framelet.dilation]);
    let too_big = n > cfg.framelet.dense_cap;
    let skip_reason = if g.is_directed() {
        Some("skipped (directed)")
    } else if too_big {
        Some("skipped (dense cap)")
    } else {
        None
    };
    let verify_opts = BuildOptions {
        dense_cap: cfg.framelet.dense_cap,
    };
    for &s in &dilations {
        let case = format!("{} L={} s={s}", bank.name, cfg.framelet.level);
        match skip_reason {
            Some(reason) => push("tight_frame", case, f64::NAN, TIGHT_FRAME_TOL, reason),
            None => {
                let sys = build_system_with(g, &bank, cfg.framelet.level, s, TransformMode::Exact, verify_opts)?;
                let r = tight_frame_residual(&sys);
                push("tight_frame", case, r, TIGHT_FRAME_TOL, verdict(r < TIGHT_FRAME_TOL));
            }
        }
    }

    let mut degrees = cfg.grids.degree.clone().unwrap_or_else(|| vec![3, 7, 10]);
    degrees.sort_unstable();
    degrees.dedup();
    let probe = gaussian_noise(n, 4, 1.0, cfg.seed.wrapping_add(0x5eed));
    for &s in &dilations {
        let mut previous = f64::INFINITY;
        for &d in &degrees {
            let case = format!("{} L={} s={s} n={d}", bank.name, cfg.framelet.level);
            if g.is_directed() {
                push("chebyshev_round_trip", case, f64::NAN, f64::NAN, "skipped (directed)");
                continue;
            }
            let sys = build_system_with(g, &bank, cfg.framelet.level, s, TransformMode::Chebyshev { degree: d }, verify_opts)?;
            let r = round_trip_error(&sys, probe.view())?;
            let bound = if d >= ROUND_TRIP_DEGREE { previous.min(ROUND_TRIP_TOL) } else { previous };
            push("chebyshev_round_trip", case, r, bound, verdict(r <= bound));
            previous = r;
        }
    }

    let mus = cfg.grids.mu.clone().unwrap_or_else(|| vec![0.1, 1.0, 10.0]);
    let pl = PLaplacian::new(g);
    let p2 = PenaltySpec::power(2.0)?;
    for &mu in &mus {
        let case = format!("mu={mu}");
        if let Some(reason) = skip_reason {
            push("solver_oracle", case, f64::NAN, ORACLE_TOL, reason);
            continue;
        }
        let solver = SolverConfig {
            mu,
            iterations: ORACLE_ITERATIONS,
            warmup: 0,
            ..cfg.solver
        };
        let (f, _) = pl.solve(ds.features.view(), &p2, &solver)?;
        let closed = pl.closed_form_p2(ds.features.view(), mu, cfg.framelet.dense_cap)?;
        let r = relative_error(f.view(), closed.view());
        push("solver_oracle", case, r, ORACLE_TOL, verdict(r < ORACLE_TOL));
    }

    let status_col = table.columns.iter().position(|c| c == "status").expect("status column");
    let count = |pred: &dyn Fn(&str) -> bool| table.rows.iter().filter(|r| pred(&r[status_col])).count();
    let failed = count(&|s| s == "fail");
    let passed = count(&|s| s == "pass");
    let skipped = count(&|s| s.starts_with("skipped"));
    let summary = summary(cfg, &table, json!({ "passed": passed, "failed": failed, "skipped": skipped }), started);
    Ok(RunReport {
        task: Task::Verify,
        columns: table.columns,
        rows: table.rows,
        summary,
        status: if failed == 0 { RunStatus::Ok } else { RunStatus::InvariantFailure },
        heads: Vec::new(),
    })
}

fn mse(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    frobenius_norm((&a - &b).view()).powi(2) / a.len() as f64
}

fn snr_db(clean: ArrayView2<'_, f64>, estimate: ArrayView2<'_, f64>) -> f64 {
    let err = frobenius_norm((&clean - &estimate).view()).powi(2);
    10.0 * (frobenius_norm(clean).powi(2) / err).log10()
}

/// Add seeded Gaussian noise to the features, smooth with each model
/// configuration, and compare against the clean features.
pub fn cmd_denoise(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let (bank, _) = cfg.bank()?;
    let points = expand_grid(cfg);
    let mut table = Table::new(&[
        "point", "repeat", "seed", "variant", "sigma", "p", "mu", "s", "n", "T", "mse_noisy", "mse_model", "improvement",
        "snr_noisy_db", "snr_model_db", "converged",
    ]);
    for repeat in 0..cfg.repeats {
        let seed = cfg.repeat_seed(repeat);
        let ds = cfg.dataset(repeat)?;
        let systems = systems_for(cfg, &ds, &bank, &points)?;
        let clean = &ds.features;
        // one unit-variance draw per repeat, shared by every grid point
        let unit_noise = gaussian_noise(clean.nrows(), clean.ncols(), 1.0, seed.wrapping_mul(0x9e37_79b9).wrapping_add(11));
        let jobs: Vec<usize> = (0..points.len()).collect();
        let rows = run_jobs(cfg, &jobs, |&i| {
            let pt = &points[i];
            let noisy: Array2<f64> = clean + &(&unit_noise * pt.sigma);
            let sys = &systems[&pt.system_key()];
            let model = ModelConfig::new(pt.variant, &ds.graph, sys, cfg.penalty_with(pt.p), pt.solver(&cfg.solver))?;
            let model = match &cfg.model.band_solvers {
                Some(b) => model.with_band_solvers(b.clone())?,
                None => model,
            };
            let out = forward(&model, noisy.view())?;
            let (mn, mm) = (mse(noisy.view(), clean.view()), mse(out.f.view(), clean.view()));
            Ok(vec![
                i.to_string(),
                repeat.to_string(),
                seed.to_string(),
                pt.variant.name().into(),
                fmt_f(pt.sigma),
                fmt_f(pt.p),
                fmt_f(pt.mu),
                fmt_f(pt.dilation),
                fmt_opt(pt.degree),
                pt.iterations.to_string(),
                fmt_f(mn),
                fmt_f(mm),
                fmt_f(1.0 - mm / mn),
                fmt_f(snr_db(clean.view(), noisy.view())),
                fmt_f(snr_db(clean.view(), out.f.view())),
                out.traces.iter().all(|t| t.converged).to_string(),
            ])
        })?;
        table.rows.extend(rows);
    }
    sort_rows(&mut table);
    let metrics = ["mse_noisy", "mse_model", "improvement", "snr_noisy_db", "snr_model_db"];
    let results = aggregate(&table, &points, &metrics, cfg.repeats);
    let summary = summary(cfg, &table, results, started);
    Ok(RunReport {
        task: Task::Denoise,
        columns: table.columns,
        rows: table.rows,
        summary,
        status: RunStatus::Ok,
        heads: Vec::new(),
    })
}

/// Order rows by grid point, then repeat.
fn sort_rows(table: &mut Table) {
    let key = |r: &Vec<String>| (r[0].parse::<usize>().unwrap_or(0), r[1].parse::<usize>().unwrap_or(0));
    table.rows.sort_by_key(key);
}

/// One-hot training labels; all other rows zero.
pub fn one_hot_train(ds: &Dataset) -> Array2<f64> {
    let mut y = Array2::zeros((ds.n_nodes(), ds.n_classes()));
    for (i, (&l, &t)) in ds.labels.iter().zip(&ds.masks.train).enumerate() {
        if t {
            y[[i, l]] = 1.0;
        }
    }
    y
}

/// Label spreading: smooth one-hot training labels and take the argmax.
pub fn label_spreading(ds: &Dataset, penalty: &PenaltySpec, solver: &SolverConfig) -> Result<Vec<usize>> {
    let (f, _) = PLaplacian::new(&ds.graph).solve(one_hot_train(ds).view(), penalty, solver)?;
    Ok(argmax_rows(f.view()))
}

/// Node classification by label spreading or a trained head, over the grids.
pub fn cmd_classify(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let points = expand_grid(cfg);
    let needs_systems = points.iter().any(|p| p.route == Route::Head);
    let bank = if needs_systems { Some(cfg.bank()?.0) } else { None };
    let mut table = Table::new(&[
        "point", "repeat", "seed", "route", "variant", "p", "mu", "s", "n", "T", "lr", "train_acc", "val_acc", "test_acc",
        "majority", "gains",
    ]);
    let mut heads = Vec::new();
    for repeat in 0..cfg.repeats {
        let seed = cfg.repeat_seed(repeat);
        let ds = cfg.dataset(repeat)?;
        if !ds.masks.train.iter().any(|&t| t) {
            return Err(Error::Config("training mask is empty".into()));
        }
        let head_points: Vec<GridPoint> = points.iter().copied().filter(|p| p.route == Route::Head).collect();
        let systems = match &bank {
            Some(b) => systems_for(cfg, &ds, b, &head_points)?,
            None => BTreeMap::new(),
        };
        let majority = majority_baseline(&ds.labels, &ds.masks.train, &ds.masks.test);
        let jobs: Vec<usize> = (0..points.len()).collect();
        let results = run_jobs(cfg, &jobs, |&i| {
            let pt = &points[i];
            let penalty = cfg.penalty_with(pt.p);
            let solver = pt.solver(&cfg.solver);
            let (train, val, test, gains, head) = match pt.route {
                Route::Spreading => {
                    let pred = label_spreading(&ds, &penalty, &solver)?;
                    let acc = |m: &[bool]| accuracy(&pred, &ds.labels, m);
                    (acc(&ds.masks.train), acc(&ds.masks.val), acc(&ds.masks.test), String::new(), None)
                }
                Route::Head => {
                    let sys = &systems[&pt.system_key()];
                    let model = ModelConfig::new(pt.variant, &ds.graph, sys, penalty, solver)?;
                    let fit = fit_theta_and_head(&model, &ds, cfg.classify.epochs, pt.lr, seed)?;
                    let gains = fit.gains.iter().map(|g| fmt_f(*g)).collect::<Vec<_>>().join(";");
                    let m = fit.metrics;
                    (m.train_accuracy, m.val_accuracy, m.test_accuracy, gains, Some(fit.head))
                }
            };
            let row = vec![
                i.to_string(),
                repeat.to_string(),
                seed.to_string(),
                pt.route.name().into(),
                pt.variant.name().into(),
                fmt_f(pt.p),
                fmt_f(pt.mu),
                fmt_f(pt.dilation),
                fmt_opt(pt.degree),
                pt.iterations.to_string(),
                fmt_f(pt.lr),
                fmt_f(train),
                fmt_f(val),
                fmt_f(test),
                fmt_f(majority),
                gains,
            ];
            Ok((row, head))
        })?;
        for (i, (row, head)) in results.into_iter().enumerate() {
            table.rows.push(row);
            if let Some(h) = head {
                heads.push((format!("point{i:04}_repeat{repeat:03}"), h));
            }
        }
    }
    sort_rows(&mut table);
    let results = aggregate(&table, &points, &["train_acc", "val_acc", "test_acc", "majority"], cfg.repeats);
    let summary = summary(cfg, &table, results, started);
    Ok(RunReport {
        task: Task::Classify,
        columns: table.columns,
        rows: table.rows,
        summary,
        status: RunStatus::Ok,
        heads,
    })
}

/// Node, edge, class and feature counts with the homophily `H(G)`.
///
/// Directory datasets without `splits.json` are not split here, so classes
/// too small for a stratified split do not prevent the statistics.
pub fn cmd_stats(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let ds = cfg.dataset_with(0, Some(UNSPLIT))?;
    let (train, val, test) = ds.masks.counts();
    let h = homophily(&ds.graph, &ds.labels)?;
    let name = match &cfg.dataset.source {
        DatasetSource::Dir { path, .. } => path
            .file_name()
            .map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned()),
        DatasetSource::Sbm { .. } => "sbm".into(),
        DatasetSource::TwoCliques { .. } => "two_cliques".into(),
        DatasetSource::Random { .. } => "random".into(),
    };
    let mut table = Table::new(&[
        "dataset", "n_nodes", "n_edges", "directed", "n_classes", "n_features", "train", "val", "test", "homophily",
    ]);
    let mut row = vec![name];
    row.extend(
        [ds.n_nodes(), ds.graph.n_edges()]
            .iter()
            .map(ToString::to_string)
            .chain([ds.graph.is_directed().to_string()])
            .chain([ds.n_classes(), ds.n_features(), train, val, test].iter().map(ToString::to_string)),
    );
    row.push(fmt_f(h));
    table.rows.push(row);
    let summary = summary(cfg, &table, json!({ "homophily": finite_or_null(h), "homophily_3dp": format!("{h:.3}") }), started);
    Ok(RunReport {
        task: Task::Stats,
        columns: table.columns,
        rows: table.rows,
        summary,
        status: RunStatus::Ok,
        heads: Vec::new(),
    })
}
