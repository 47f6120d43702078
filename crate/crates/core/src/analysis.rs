//! Over-smoothing diagnostics.
//!
//! Smoothness is measured with the local variation
//! `E_v(X) = sum_{w in N(v)} |x_v - x_w|^2` and its node average, the
//! Dirichlet energy. The rest of the module probes how message passing moves
//! that quantity: a random-weight depth experiment on a lattice, a numeric
//! check of the local-variation bound for one additive update, a Monte-Carlo
//! comparison of scalar versus channel-wise attention collapse, and cosine
//! similarities between the learned channel weights of a trained model.

use std::fmt::Write as _;
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::Tape;
use crate::data::{mean_std, Dataset};
use crate::error::{Error, Result};
use crate::graph::{edge_arrays, grid_graph, Graph};
use crate::layers::{
    baseline_forward, chat_layer_forward, BaselineKind, BaselineLayerParams, BaselineTag,
    ChatLayerParams,
};
use crate::model::{ChatGnnModel, LayerKind, ModelConfig, Propagation};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::trainer::{train_splits, TrainConfig};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn local_variation(x: &Tensor, g: &Graph, v: usize) -> f64 {
    g.neighbors(v)
        .iter()
        .map(|&w| sq_dist(x.row(v), x.row(w)))
        .sum()
}

/// Mean local variation over all nodes; 0 for an empty graph.
pub fn dirichlet_energy(x: &Tensor, g: &Graph) -> f64 {
    let n = g.num_nodes();
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|v| local_variation(x, g, v)).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyTrace {
    pub model_kind: LayerKind,
    /// Entry 0 is the input energy, entry `l` the energy after layer `l`.
    pub per_layer_energy: Vec<f64>,
}

impl EnergyTrace {
    /// `layer,energy` CSV preceded by `# ` comment lines.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("layer,energy\n");
        for (l, e) in self.per_layer_energy.iter().enumerate() {
            let _ = writeln!(out, "{l},{e}");
        }
        out
    }
}

pub const MAX_DECAY_LAYERS: usize = 10_000;

/// Width of the hidden signal in [`energy_decay_experiment`].
pub const DECAY_WIDTH: usize = 2;

/// Stacks `layers` untrained layers of `model_kind` on a `rows × cols`
/// lattice with two uniform input features per node and records the
/// Dirichlet energy after each one.
///
/// Every layer draws fresh Glorot weights. There is no input projection,
/// residual or layer norm, and the channel layer combines with identity
/// maps, so the trace shows what message passing alone does to the signal.
pub fn energy_decay_experiment(
    model_kind: &str,
    layers: usize,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<EnergyTrace> {
    let kind = LayerKind::from_str(model_kind)?;
    if layers > MAX_DECAY_LAYERS {
        return Err(Error::invalid(format!(
            "at most {MAX_DECAY_LAYERS} layers, got {layers}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid needs at least one row and column"));
    }
    let g = grid_graph(rows, cols);
    let e = edge_arrays(&g);
    let mut rng = Rng::new(seed);
    let mut h = Tensor::uniform(g.num_nodes(), DECAY_WIDTH, 0.0, 1.0, &mut rng);
    let mut energy = Vec::with_capacity(layers + 1);
    energy.push(dirichlet_energy(&h, &g));
    for _ in 0..layers {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let out = match kind {
            LayerKind::Chat => {
                let p = ChatLayerParams::init(&mut store, "l", DECAY_WIDTH, false, false, &mut rng);
                let vars = store.register(&mut tape);
                let hv = tape.constant(&h);
                chat_layer_forward(&mut tape, &vars, hv, None, &e, &p)?
            }
            other => {
                let tag = match other {
                    LayerKind::Gcn => BaselineTag::Gcn,
                    LayerKind::ScalarAttention => BaselineTag::ScalarAttention,
                    _ => BaselineTag::FreqGate,
                };
                let p = BaselineLayerParams {
                    kind: BaselineKind::init(&mut store, "l", tag, DECAY_WIDTH, &mut rng),
                    layer_norm: None,
                };
                let vars = store.register(&mut tape);
                let hv = tape.constant(&h);
                baseline_forward(&mut tape, &vars, &p, hv, None, &e)?
            }
        };
        h = tape.value(out).clone();
        energy.push(dirichlet_energy(&h, &g));
    }
    Ok(EnergyTrace {
        model_kind: kind,
        per_layer_energy: energy,
    })
}

/// Per-node comparison for the update `h → h + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Report {
    /// `E_v(h + m) - E_v(h)` for each node.
    pub delta: Vec<f64>,
    /// `sum_w (δ_wv^2 + 2 c δ_wv)` for each node.
    pub bound: Vec<f64>,
    /// `max |h_w - h_v|` over all arcs.
    pub c: f64,
    /// Nodes where `delta > bound + slack`.
    pub violations: Vec<usize>,
}

pub const PROP1_SLACK: f64 = 1e-9;

/// Checks `E_v(h + m) - E_v(h) <= sum_w (δ_wv^2 + 2 c δ_wv)` at every node,
/// with `δ_wv = |m_w - m_v|` and `c` the largest neighbour distance in `h`.
pub fn prop1_check(h: &Tensor, m: &Tensor, g: &Graph) -> Result<Prop1Report> {
    if h.shape() != m.shape() || h.rows() != g.num_nodes() {
        return Err(Error::Dimension {
            op: "prop1_check",
            lhs: h.shape(),
            rhs: m.shape(),
        });
    }
    let c = g
        .arcs()
        .map(|(u, v)| sq_dist(h.row(u), h.row(v)).sqrt())
        .fold(0.0, f64::max);
    let mut hm = h.clone();
    for (a, b) in hm.data_mut().iter_mut().zip(m.data()) {
        *a += b;
    }
    let n = g.num_nodes();
    let mut delta = Vec::with_capacity(n);
    let mut bound = Vec::with_capacity(n);
    let mut violations = Vec::new();
    for v in 0..n {
        let d = local_variation(&hm, g, v) - local_variation(h, g, v);
        let b: f64 = g
            .neighbors(v)
            .iter()
            .map(|&w| {
                let dm = sq_dist(m.row(w), m.row(v)).sqrt();
                dm * dm + 2.0 * c * dm
            })
            .sum();
        if d > b + PROP1_SLACK {
            violations.push(v);
        }
        delta.push(d);
        bound.push(b);
    }
    Ok(Prop1Report {
        delta,
        bound,
        c,
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollapseFrequencies {
    /// Fraction of trials with a nonzero scalar-attention message gap.
    pub freq_scalar: f64,
    /// Same for channel-wise attention.
    pub freq_channel: f64,
    pub trials: usize,
}

impl CollapseFrequencies {
    pub fn collapse_scalar(&self) -> f64 {
        1.0 - self.freq_scalar
    }

    pub fn collapse_channel(&self) -> f64 {
        1.0 - self.freq_channel
    }
}

const MC_CHUNKS: usize = 64;

/// Two nodes `v`, `w` share `neighborhood_size` neighbours whose features
/// are all ones. Attention scores toward each neighbour are drawn uniformly
/// from `score_support`, one value per channel. The scalar variant uses
/// channel 0 only, so with `channels = 1` both variants see identical draws.
///
/// A trial counts as separated when the message gap
/// `sum_k |a_vk - a_wk|` (summed over channels as well for the channel-wise
/// variant) is positive.
pub fn collapse_monte_carlo(
    neighborhood_size: usize,
    channels: usize,
    trials: usize,
    score_support: &[f64],
    seed: u64,
) -> Result<CollapseFrequencies> {
    if score_support.is_empty() {
        return Err(Error::invalid("score support is empty"));
    }
    if channels == 0 || neighborhood_size == 0 {
        return Err(Error::invalid(
            "need at least one channel and one neighbour",
        ));
    }
    let mut master = Rng::new(seed);
    let streams: Vec<Rng> = (0..MC_CHUNKS as u64).map(|s| master.fork(s)).collect();
    let per_chunk = trials.div_ceil(MC_CHUNKS);
    let (scalar, channel) = streams
        .into_par_iter()
        .enumerate()
        .map(|(c, mut rng)| {
            let start = c * per_chunk;
            let count = per_chunk.min(trials.saturating_sub(start));
            let (mut s_hits, mut c_hits) = (0usize, 0usize);
            let s = score_support.len();
            for _ in 0..count {
                let mut gap_scalar = 0.0;
                let mut gap_channel = 0.0;
                for _ in 0..neighborhood_size {
                    for d in 0..channels {
                        let a = score_support[rng.below(s)];
                        let b = score_support[rng.below(s)];
                        let diff = (a - b).abs();
                        gap_channel += diff;
                        if d == 0 {
                            gap_scalar += diff;
                        }
                    }
                }
                s_hits += usize::from(gap_scalar > 0.0);
                c_hits += usize::from(gap_channel > 0.0);
            }
            (s_hits, c_hits)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let t = trials.max(1) as f64;
    Ok(CollapseFrequencies {
        freq_scalar: scalar as f64 / t,
        freq_channel: channel as f64 / t,
        trials,
    })
}

/// Cosine similarities among the channel weights `beta_ji` of one node's
/// incoming arcs, per layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CosineDump {
    pub node: usize,
    pub neighbors: Vec<usize>,
    pub layers: Vec<LayerCosine>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCosine {
    pub layer: usize,
    pub matrix: Vec<Vec<f64>>,
    /// Set when some neighbour's weight vector was exactly zero; its row and
    /// column are then 0.
    pub has_zero_vector: bool,
}

/// Pairwise cosine matrix of `vectors`; a zero vector has cosine 0 with
/// everything, itself included.
pub fn cosine_matrix(vectors: &[&[f64]]) -> (Vec<Vec<f64>>, bool) {
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let zero = norms.contains(&0.0);
    let k = vectors.len();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let c = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else if i == j {
                1.0
            } else {
                let dot: f64 = vectors[i].iter().zip(vectors[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    (m, zero)
}

/// Runs `model` on `dataset` and collects cosine matrices for each node in
/// `node_ids` over the layers in `layer_range` (clipped to the model depth).
/// Nodes with fewer than two neighbours are skipped and reported in the
/// returned notices.
pub fn attention_cosine(
    model: &ChatGnnModel,
    dataset: &Dataset,
    node_ids: &[usize],
    layer_range: Range<usize>,
) -> Result<(Vec<CosineDump>, Vec<String>)> {
    let prop = Propagation::new(&dataset.graph, model.config().directed_mode)?;
    let Propagation::Undirected(e) = &prop else {
        return Err(Error::invalid("attention dumps need an undirected model"));
    };
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &dataset.features, &prop)?;
    if fwd.betas.is_empty() {
        return Err(Error::invalid(
            "model has no channel-attentive layers to inspect",
        ));
    }
    let layers = layer_range.start.min(fwd.betas.len())..layer_range.end.min(fwd.betas.len());
    let mut dumps = Vec::new();
    let mut notices = Vec::new();
    for &node in node_ids {
        if node >= dataset.num_nodes() {
            return Err(Error::Index {
                op: "attention_cosine",
                index: node,
                bound: dataset.num_nodes(),
            });
        }
        let arcs: Vec<usize> = (0..e.len()).filter(|&k| e.dst[k] == node).collect();
        if arcs.len() < 2 {
            notices.push(format!(
                "node {node} skipped: {} neighbour(s), need at least 2",
                arcs.len()
            ));
            continue;
        }
        let neighbors = arcs.iter().map(|&k| e.src[k]).collect();
        let per_layer = layers
            .clone()
            .map(|l| {
                let beta = tape.value(fwd.betas[l]);
                let rows: Vec<&[f64]> = arcs.iter().map(|&k| beta.row(k)).collect();
                let (matrix, has_zero_vector) = cosine_matrix(&rows);
                LayerCosine {
                    layer: l,
                    matrix,
                    has_zero_vector,
                }
            })
            .collect();
        dumps.push(CosineDump {
            node,
            neighbors,
            layers: per_layer,
        });
    }
    Ok((dumps, notices))
}

/// Plain-text rendering: one block per node and layer, one matrix row per line.
pub fn format_cosine_dumps(dumps: &[CosineDump], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for d in dumps {
        let nbrs: Vec<String> = d.neighbors.iter().map(usize::to_string).collect();
        for lc in &d.layers {
            let _ = writeln!(
                out,
                "node {} layer {} neighbors {}{}",
                d.node,
                lc.layer,
                nbrs.join(","),
                if lc.has_zero_vector {
                    " zero_vector"
                } else {
                    ""
                }
            );
            for row in &lc.matrix {
                let cells: Vec<String> = row.iter().map(|x| format!("{x:.6}")).collect();
                let _ = writeln!(out, "{}", cells.join(" "));
            }
        }
    }
    out
}

/// One point of a depth sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub kind: LayerKind,
    pub layers: usize,
    pub mean: f64,
    pub std: f64,
    pub per_split: Vec<f64>,
}

/// Model used for `kind` at a given depth. The channel-attentive model keeps
/// its initial residual and layer norm; baselines are the plain stacked
/// layers they are named after.
pub fn sweep_config(
    kind: LayerKind,
    in_features: usize,
    hidden: usize,
    classes: usize,
    layers: usize,
) -> ModelConfig {
    let mut cfg = ModelConfig::new(in_features, hidden, classes, layers);
    cfg.layer_kind = kind;
    if kind != LayerKind::Chat {
        cfg.residual = false;
        cfg.use_layer_norm = false;
    }
    cfg
}

/// Mean test score over `splits` for each `(kind, depth)` pair, without
/// retuning between depths.
pub fn depth_sweep(
    dataset: &Dataset,
    kinds: &[LayerKind],
    depths: &[usize],
    hidden: usize,
    splits: &[usize],
    tcfg: &TrainConfig,
) -> Result<Vec<SweepPoint>> {
    if splits.is_empty() {
        return Err(Error::invalid("depth sweep needs at least one split"));
    }
    let mut points = Vec::new();
    for &kind in kinds {
        for &layers in depths {
            let cfg = sweep_config(
                kind,
                dataset.num_features(),
                hidden,
                dataset.num_classes,
                layers,
            );
            let runs = train_splits(&cfg, dataset, splits, tcfg)?;
            let per_split = runs
                .iter()
                .map(|r| {
                    r.test.ok_or_else(|| {
                        Error::invalid(format!("split {} has no test nodes", r.split))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, std) = mean_std(&per_split);
            points.push(SweepPoint {
                kind,
                layers,
                mean,
                std,
                per_split,
            });
        }
    }
    Ok(points)
}
