//! Dataset directories: `edges.csv`, `features.csv`, `labels.csv` and an
//! optional `splits.json`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Edge, Graph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |m: &[bool]| m.iter().filter(|&&b| b).count();
        (c(&self.train), c(&self.val), c(&self.test))
    }

    fn from_ids(n: usize, ids: &SplitIds) -> std::result::Result<Self, String> {
        let mut masks = Masks {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        };
        let mut seen = vec![false; n];
        for (list, mask) in [
            (&ids.train, &mut masks.train),
            (&ids.val, &mut masks.val),
            (&ids.test, &mut masks.test),
        ] {
            for &i in list {
                if i >= n {
                    return Err(format!("node id {i} out of range for {n} nodes"));
                }
                if seen[i] {
                    return Err(format!("node {i} appears in more than one split"));
                }
                seen[i] = true;
                mask[i] = true;
            }
        }
        Ok(masks)
    }

    fn to_ids(&self) -> SplitIds {
        let ids = |m: &[bool]| m.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        SplitIds {
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitIds {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub masks: Masks,
}

impl Dataset {
    /// Validates the shape and label invariants.
    pub fn new(graph: Graph, features: Array2<f64>, labels: Vec<usize>, masks: Masks) -> Result<Self> {
        let n = graph.n_nodes();
        if features.nrows() != n {
            return Err(Error::Shape(format!("{} feature rows for {} nodes", features.nrows(), n)));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {} nodes", labels.len(), n)));
        }
        if masks.train.len() != n || masks.val.len() != n || masks.test.len() != n {
            return Err(Error::Shape("mask length differs from node count".into()));
        }
        for i in 0..n {
            let hits = masks.train[i] as u8 + masks.val[i] as u8 + masks.test[i] as u8;
            if hits > 1 {
                return Err(Error::Split(format!("node {i} is in more than one mask")));
            }
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut present = vec![false; n_classes];
        for &l in &labels {
            present[l] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::Config(format!("class {missing} has no nodes; labels must cover 0..C-1")));
        }
        Ok(Self {
            graph,
            features,
            labels,
            masks,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn with_masks(mut self, masks: Masks) -> Result<Self> {
        self.masks = masks;
        Self::new(self.graph, self.features, self.labels, self.masks)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const HOMOPHILIC: Self = Self {
        train: 0.2,
        val: 0.1,
        test: 0.7,
    };
    pub const HETEROPHILIC: Self = Self {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    };

    fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!("split ratios must be nonnegative: {self:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub directed: bool,
    pub symmetrize: bool,
    /// Used when the directory has no `splits.json`.
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            directed: false,
            symmetrize: false,
            ratios: SplitRatios::HOMOPHILIC,
            seed: 0,
        }
    }
}

/// Allocate `total` items across groups proportionally to `exact` shares:
/// floor each share, then hand out the remainder by largest fractional part
/// (ties to the lower group index), never exceeding `caps`.
fn apportion(exact: &[f64], caps: &[usize], total: usize) -> Vec<usize> {
    let mut quota: Vec<usize> = exact
        .iter()
        .zip(caps)
        .map(|(&e, &cap)| ((e + 1e-9).floor() as usize).min(cap))
        .collect();
    let mut assigned: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    while assigned < total {
        let mut progressed = false;
        for &c in &order {
            if assigned == total {
                break;
            }
            if quota[c] < caps[c] {
                quota[c] += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    quota
}

/// Stratified random split.
///
/// Train and validation sizes are `floor(ratio · n)`; the rest goes to test.
/// Each class receives its proportional share of both, so a class that ends
/// up with no training node while `train > 0` is an error.
pub fn random_split(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Dataset> {
    let masks = stratified_masks(&ds.labels, ratios, seed)?;
    ds.clone().with_masks(masks)
}

pub(crate) fn stratified_masks(labels: &[usize], ratios: SplitRatios, seed: u64) -> Result<Masks> {
    ratios.validate()?;
    let n = labels.len();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();

    let n_train = ((ratios.train * n as f64) + 1e-9).floor() as usize;
    let n_val = ((ratios.val * n as f64) + 1e-9).floor() as usize;
    let train_q = apportion(
        &sizes.iter().map(|&s| ratios.train * s as f64).collect::<Vec<_>>(),
        &sizes,
        n_train,
    );
    if ratios.train > 0.0 {
        if let Some(c) = (0..n_classes).find(|&c| sizes[c] > 0 && train_q[c] == 0) {
            return Err(Error::Split(format!(
                "class {c} has {} nodes, too few to place one in the training split at ratio {}",
                sizes[c], ratios.train
            )));
        }
    }
    let remaining: Vec<usize> = sizes.iter().zip(&train_q).map(|(s, t)| s - t).collect();
    let val_q = apportion(
        &sizes.iter().map(|&s| ratios.val * s as f64).collect::<Vec<_>>(),
        &remaining,
        n_val,
    );

    let mut masks = Masks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for (c, members) in by_class.iter().enumerate() {
        for (k, &i) in members.iter().enumerate() {
            if k < train_q[c] {
                masks.train[i] = true;
            } else if k < train_q[c] + val_q[c] {
                masks.val[i] = true;
            } else {
                masks.test[i] = true;
            }
        }
    }
    Ok(masks)
}

fn csv_reader(path: &Path, has_headers: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::load(path, 0, format!("cannot open: {e}")))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, field: Option<&str>, what: &str) -> Result<T> {
    let raw = field.ok_or_else(|| Error::load(path, line, format!("missing {what}")))?;
    raw.parse()
        .map_err(|_| Error::load(path, line, format!("cannot parse {what} from {raw:?}")))
}

fn read_features(path: &Path) -> Result<Array2<f64>> {
    let file = File::open(path).map_err(|e| Error::load(path, 0, format!("cannot open: {e}")))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| parse_field::<f64>(path, line_no, Some(f.trim()), "feature value"))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::load(
                    path,
                    line_no,
                    format!("ragged row: {} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::load(path, 0, "no feature rows"));
    }
    let n_feat = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), n_feat), flat).expect("rectangular rows"))
}

fn read_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    let mut reader = csv_reader(path, true)?;
    let mut labels: Vec<Option<usize>> = vec![None; n];
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::load(path, line, e.to_string()))?;
        let node: usize = parse_field(path, line, rec.get(0), "node id")?;
        let label: usize = parse_field(path, line, rec.get(1), "label")?;
        if node >= n {
            return Err(Error::load(path, line, format!("node id {node} out of range for {n} nodes")));
        }
        if labels[node].replace(label).is_some() {
            return Err(Error::load(path, line, format!("node {node} labeled twice")));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::load(path, 0, format!("node {i} has no label"))))
        .collect()
}

fn read_edges(path: &Path, n: usize, directed: bool) -> Result<Graph> {
    let mut reader = csv_reader(path, true)?;
    let mut edges = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::load(path, line, e.to_string()))?;
        let src: usize = parse_field(path, line, rec.get(0), "src")?;
        let dst: usize = parse_field(path, line, rec.get(1), "dst")?;
        let weight: f64 = match rec.get(2) {
            Some(w) if !w.is_empty() => parse_field(path, line, Some(w), "weight")?,
            _ => 1.0,
        };
        if src >= n || dst >= n {
            return Err(Error::load(
                path,
                line,
                format!("edge ({src}, {dst}) out of range for {n} nodes"),
            ));
        }
        if weight < 0.0 || !weight.is_finite() {
            return Err(Error::load(path, line, format!("invalid weight {weight}")));
        }
        edges.push(Edge::new(src, dst, weight));
    }
    Graph::new(n, edges, directed).map_err(|e| Error::load(path, 0, e.to_string()))
}

/// Load and validate a dataset directory.
pub fn load_dataset(dir: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let features = read_features(&dir.join("features.csv"))?;
    let n = features.nrows();
    let labels = read_labels(&dir.join("labels.csv"), n)?;
    let mut graph = read_edges(&dir.join("edges.csv"), n, opts.directed)?;
    if opts.symmetrize {
        graph = graph.symmetrized();
    }
    let splits_path = dir.join("splits.json");
    let masks = if splits_path.exists() {
        let text = fs::read_to_string(&splits_path)?;
        let ids: SplitIds = serde_json::from_str(&text).map_err(|e| Error::load(&splits_path, e.line(), e.to_string()))?;
        Masks::from_ids(n, &ids).map_err(|msg| Error::load(&splits_path, 0, msg))?
    } else {
        stratified_masks(&labels, opts.ratios, opts.seed)?
    };
    Dataset::new(graph, features, labels, masks)
}

/// Write a dataset directory readable by [`load_dataset`].
///
/// Reals are written in shortest round-trip form, so loading restores them
/// bit for bit.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut edges = BufWriter::new(File::create(dir.join("edges.csv"))?);
    writeln!(edges, "src,dst,weight")?;
    for e in ds.graph.edges() {
        writeln!(edges, "{},{},{}", e.src, e.dst, e.weight)?;
    }
    edges.flush()?;

    let mut features = BufWriter::new(File::create(dir.join("features.csv"))?);
    for row in ds.features.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(features, "{}", line.join(","))?;
    }
    features.flush()?;

    let mut labels = BufWriter::new(File::create(dir.join("labels.csv"))?);
    writeln!(labels, "node,label")?;
    for (i, l) in ds.labels.iter().enumerate() {
        writeln!(labels, "{i},{l}")?;
    }
    labels.flush()?;

    fs::write(dir.join("splits.json"), serde_json::to_string(&ds.masks.to_ids())?)?;
    Ok(())
}
