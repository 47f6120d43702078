//! Dataset documents, preprocessing, splits and result files.
//!
//! A dataset is one JSON document:
//!
//! ```json
//! {
//!   "name": "tiny",
//!   "num_nodes": 2,
//!   "directed": false,
//!   "num_classes": 2,
//!   "normalize_features": false,
//!   "edges": [[0, 1]],
//!   "features": [[1.0], [0.5]],
//!   "labels": [0, 1],
//!   "splits": [{ "train": [0], "val": [1], "test": [] }]
//! }
//! ```
//!
//! `num_classes` defaults to `max(label) + 1` and `normalize_features`
//! (row-wise L1 scaling, for bag-of-words inputs) defaults to `false`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::trainer::EpochMetrics;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: Vec<Split>,
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    name: String,
    num_nodes: usize,
    #[serde(default)]
    directed: bool,
    #[serde(default)]
    num_classes: Option<usize>,
    #[serde(default)]
    normalize_features: bool,
    edges: Vec<(usize, usize)>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    splits: Vec<Split>,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn split(&self, index: usize) -> Result<&Split> {
        self.splits.get(index).ok_or_else(|| {
            Error::invalid(format!(
                "split {index} requested but `{}` has {} splits",
                self.name,
                self.splits.len()
            ))
        })
    }

    /// Checks every structural invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.features.rows() != n {
            return Err(Error::validation(
                "features",
                format!("{} rows for {n} nodes", self.features.rows()),
            ));
        }
        if self.labels.len() != n {
            return Err(Error::validation(
                "labels",
                format!("{} labels for {n} nodes", self.labels.len()),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::validation(
                "labels",
                format!("label {bad} outside [0, {})", self.num_classes),
            ));
        }
        if !self.features.is_finite() {
            return Err(Error::validation("features", "non-finite value"));
        }
        for (s, split) in self.splits.iter().enumerate() {
            let mut owner = vec![None::<&str>; n];
            for (part, ids) in [
                ("train", &split.train),
                ("val", &split.val),
                ("test", &split.test),
            ] {
                for &v in ids {
                    if v >= n {
                        return Err(Error::validation(
                            format!("splits[{s}].{part}"),
                            format!("node {v} out of range"),
                        ));
                    }
                    if let Some(prev) = owner[v].replace(part) {
                        return Err(Error::validation(
                            format!("splits[{s}].{part}"),
                            format!("node {v} already listed in {prev}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn from_doc(doc: DatasetDoc) -> Result<Dataset> {
        let width = doc.features.first().map_or(0, Vec::len);
        if let Some((r, row)) = doc
            .features
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != width)
        {
            return Err(Error::validation(
                format!("features[{r}]"),
                format!("{} columns, expected {width}", row.len()),
            ));
        }
        if doc.features.len() != doc.num_nodes {
            return Err(Error::validation(
                "features",
                format!("{} rows for {} nodes", doc.features.len(), doc.num_nodes),
            ));
        }
        let graph = build_graph(doc.num_nodes, &doc.edges, doc.directed)
            .map_err(|e| Error::validation("edges", e.to_string()))?;
        let mut features = Tensor::from_rows(&doc.features)?;
        if doc.normalize_features {
            features = row_normalize(&features);
        }
        let num_classes = doc
            .num_classes
            .unwrap_or_else(|| doc.labels.iter().max().map_or(0, |m| m + 1));
        let ds = Dataset {
            name: doc.name,
            graph,
            features,
            labels: doc.labels,
            num_classes,
            splits: doc.splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn to_doc(&self) -> DatasetDoc {
        let edges = self
            .graph
            .arcs()
            .filter(|&(u, v)| self.graph.is_directed() || u < v)
            .collect();
        DatasetDoc {
            name: self.name.clone(),
            num_nodes: self.num_nodes(),
            directed: self.graph.is_directed(),
            num_classes: Some(self.num_classes),
            normalize_features: false,
            edges,
            features: (0..self.features.rows())
                .map(|r| self.features.row(r).to_vec())
                .collect(),
            labels: self.labels.clone(),
            splits: self.splits.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Dataset> {
        let doc: DatasetDoc = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        Dataset::from_doc(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("dataset serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_json(&text).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Divides each row by its L1 norm; all-zero rows stay zero.
pub fn row_normalize(features: &Tensor) -> Tensor {
    let mut out = features.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let l1: f64 = row.iter().map(|x| x.abs()).sum();
        if l1 > 0.0 {
            row.iter_mut().for_each(|x| *x /= l1);
        }
    }
    out
}

/// Train/val/test fractions of the heterophily benchmarks.
pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.48, 0.32, 0.20);

/// `count` independent random splits; part sizes are `round(n · fraction)`.
pub fn random_splits(
    n: usize,
    fractions: (f64, f64, f64),
    count: usize,
    seed: u64,
) -> Result<Vec<Split>> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || ft + fv + fs > 1.0 + 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to at most 1"
        )));
    }
    let sizes = [ft, fv, fs].map(|f| (n as f64 * f).round() as usize);
    for (size, f) in sizes.iter().zip([ft, fv, fs]) {
        if f > 0.0 && *size == 0 {
            return Err(Error::invalid(format!(
                "{n} nodes are too few for fractions {fractions:?}"
            )));
        }
    }
    let (nt, nv) = (sizes[0], sizes[1]);
    let ns = sizes[2].min(n.saturating_sub(nt + nv));
    let mut rng = Rng::new(seed);
    Ok((0..count)
        .map(|_| {
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            Split {
                train: perm[..nt].to_vec(),
                val: perm[nt..nt + nv].to_vec(),
                test: perm[nt + nv..nt + nv + ns].to_vec(),
            }
        })
        .collect())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `"85.0 ± 7.1"` for fractions `[0.8, 0.9]`.
pub fn format_mean_std(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{:.1} ± {:.1}", 100.0 * m, 100.0 * s)
}

/// Per-epoch history as CSV. `comments` become leading `# ` lines.
pub fn write_metrics_csv(
    history: &[EpochMetrics],
    comments: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    if history.is_empty() {
        return Err(Error::invalid("empty metrics history"));
    }
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("epoch,train_loss,val_acc,test_metric\n");
    for m in history {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            m.epoch, m.train_loss, m.val_accuracy, m.test_metric
        );
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-split test results plus a `mean ± std` line (percent, one decimal).
pub fn write_summary(
    results: &[(usize, f64)],
    metric: &str,
    comments: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    if results.is_empty() {
        return Err(Error::invalid("no split results to summarize"));
    }
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("split,test_metric\n");
    for (split, v) in results {
        let _ = writeln!(out, "{split},{v}");
    }
    let values: Vec<f64> = results.iter().map(|r| r.1).collect();
    let _ = writeln!(out, "# {metric}: {}", format_mean_std(&values));
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub mod synthetic {
    //! Generated datasets for tests, sanity checks and the depth sweep.

    use super::*;

    /// Knobs for [`heterophilous`].
    #[derive(Debug, Clone)]
    pub struct HeteroSpec {
        pub nodes: usize,
        pub classes: usize,
        /// Vocabulary size of the binary bag-of-words features.
        pub features: usize,
        /// Active words per node.
        pub words_per_node: usize,
        /// Probability that an active word comes from the node's class vocabulary.
        pub signal: f64,
        /// Probability that an edge joins two nodes of the same class.
        pub homophily: f64,
        pub avg_degree: f64,
    }

    impl HeteroSpec {
        /// WebKB-sized: 183 nodes, 5 classes, sparse bag-of-words features.
        pub fn texas_like() -> Self {
            HeteroSpec {
                nodes: 183,
                classes: 5,
                features: 300,
                words_per_node: 16,
                signal: 0.6,
                homophily: 0.1,
                avg_degree: 3.4,
            }
        }
    }

    /// Graph whose edges mostly join different classes, with class
    /// information carried by the node features.
    pub fn heterophilous(spec: &HeteroSpec, splits: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let n = spec.nodes;
        let k = spec.classes.max(2);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (v, &c) in labels.iter().enumerate() {
            by_class[c].push(v);
        }

        let vocab_per_class = (spec.features / k).max(1);
        let mut features = Tensor::zeros(n, spec.features);
        for v in 0..n {
            for _ in 0..spec.words_per_node {
                let word = if rng.bernoulli(spec.signal) {
                    (labels[v] * vocab_per_class + rng.below(vocab_per_class)) % spec.features
                } else {
                    rng.below(spec.features)
                };
                features.set(v, word, 1.0);
            }
        }

        let target_edges = (spec.avg_degree * n as f64 / 2.0).round() as usize;
        let mut edges = Vec::with_capacity(target_edges);
        while edges.len() < target_edges {
            let u = rng.below(n);
            let same = rng.bernoulli(spec.homophily);
            let pool: Vec<usize> = if same {
                vec![labels[u]]
            } else {
                (0..k).filter(|&c| c != labels[u]).collect()
            };
            let c = pool[rng.below(pool.len())];
            if by_class[c].is_empty() {
                continue;
            }
            let w = by_class[c][rng.below(by_class[c].len())];
            if w != u {
                edges.push((u, w));
            }
        }
        let graph = build_graph(n, &edges, false).expect("endpoints in range");
        let split_seed = rng.next_u64();
        Dataset {
            name: "synthetic-heterophilous".into(),
            graph,
            features: row_normalize(&features),
            labels,
            num_classes: k,
            splits: random_splits(n, DEFAULT_FRACTIONS, splits, split_seed)
                .expect("fractions are valid"),
        }
    }

    /// Small two-class graph with noisy, weakly separable features and one
    /// 60/20/20 split. Needs `n >= 3`.
    pub fn two_class(n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let labels: Vec<usize> = (0..n).map(|v| v % 2).collect();
        let mut features = Tensor::zeros(n, 4);
        for v in 0..n {
            let sign = if labels[v] == 1 { 1.0 } else { -1.0 };
            features.set(v, 0, sign * 0.5 + rng.normal());
            for c in 1..4 {
                features.set(v, c, rng.normal());
            }
        }
        let mut edges = Vec::new();
        for v in 0..n {
            edges.push((v, (v + 1) % n));
            edges.push((v, (v + 3) % n));
        }
        let graph = build_graph(n, &edges, false).expect("endpoints in range");
        let split_seed = rng.next_u64();
        Dataset {
            name: format!("two-class-{n}"),
            graph,
            features,
            labels,
            num_classes: 2,
            splits: random_splits(n, (0.6, 0.2, 0.2), 1, split_seed).expect("at least 3 nodes"),
        }
    }
}
