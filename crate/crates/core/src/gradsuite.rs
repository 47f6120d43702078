//! Finite-difference suite covering every differentiable tape operation,
//! every layer type and the assembled model.
//!
//! Each case draws a fresh random instance per repetition. Outputs are
//! contracted with a fixed random weight tensor before summation so that
//! operations whose plain sum is constant (layer norm, softmax) still get a
//! meaningful check.

use std::sync::Arc;

use crate::autodiff::{grad_check_many, Activation, GradCheckReport, Tape, Var};
use crate::error::Result;
use crate::graph::{build_graph, edge_arrays, random_graph, EdgeArrays, Graph};
use crate::layers::{
    baseline_forward, channel_beta, chat_aggregate, chat_layer_forward, dir_chat_forward,
    BaselineKind, BaselineLayerParams, BaselineTag, ChannelAttention, ChatLayerParams,
    DirChatLayerParams, DirectedEdges, LayerNormParams,
};
use crate::model::{init_model, LayerKind, ModelConfig, Propagation};
use crate::params::{ParamStore, ParamVars};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Tolerance for operations acting entry by entry.
pub const ELEMENTWISE_TOL: f64 = 1e-5;
/// Tolerance for everything else.
pub const GENERAL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: &'static str,
    pub tol: f64,
    pub instances: usize,
    pub max_rel_err: f64,
    pub failures: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

type CaseFn = fn(&mut Rng, f64) -> Result<GradCheckReport>;

const CASES: &[(&str, bool, CaseFn)] = &[
    ("add", true, case_add),
    ("add_row", true, case_add_row),
    ("hadamard", true, case_hadamard),
    ("scale", true, case_scale),
    ("tanh", true, case_tanh),
    ("relu", true, case_relu),
    ("leaky_relu", true, case_leaky_relu),
    ("gather_rows", true, case_gather),
    ("scatter_add_rows", true, case_scatter),
    ("scale_rows_const", true, case_scale_rows_const),
    ("sum", true, case_sum),
    ("matmul", false, case_matmul),
    ("linear", false, case_linear),
    ("scale_rows", false, case_scale_rows),
    ("layer_norm", false, case_layer_norm),
    ("segment_softmax", false, case_segment_softmax),
    ("softmax_cross_entropy", false, case_cross_entropy),
    ("channel_beta", false, case_channel_beta),
    ("chat_aggregate", false, case_chat_aggregate),
    ("chat_layer", false, case_chat_layer),
    ("gcn_layer", false, case_gcn_layer),
    ("scalar_attention_layer", false, case_scalar_attention_layer),
    ("freq_gate_layer", false, case_freq_gate_layer),
    ("directed_chat_layer", false, case_dir_chat_layer),
    ("model", false, case_model),
    ("model_directed", false, case_model_directed),
];

pub fn case_names() -> impl Iterator<Item = &'static str> {
    CASES.iter().map(|c| c.0)
}

/// Runs every case on `instances` random instances. Case `c`, instance `i`
/// draws from `Rng::new(seed).fork(c).fork(i)`, so results do not depend on
/// which cases run.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<CaseResult>> {
    let mut results = Vec::with_capacity(CASES.len());
    for (c, &(name, elementwise, case)) in CASES.iter().enumerate() {
        let tol = if elementwise {
            ELEMENTWISE_TOL
        } else {
            GENERAL_TOL
        };
        let mut case_rng = Rng::new(seed).fork(c as u64);
        let mut res = CaseResult {
            name,
            tol,
            instances,
            max_rel_err: 0.0,
            failures: 0,
        };
        for i in 0..instances {
            let mut rng = case_rng.fork(i as u64);
            let rep = case(&mut rng, tol)?;
            res.max_rel_err = res.max_rel_err.max(rep.max_rel_err);
            res.failures += usize::from(!rep.passed);
        }
        results.push(res);
    }
    Ok(results)
}

fn dim(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn rand(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::uniform(rows, cols, -1.0, 1.0, rng)
}

/// Moves entries out of `(-0.05, 0.05)` so finite differences never straddle
/// a kink at zero.
fn away_from_zero(mut t: Tensor) -> Tensor {
    for x in t.data_mut() {
        if x.abs() < 0.05 {
            *x += 0.1f64.copysign(*x);
        }
    }
    t
}

/// `sum(out ⊙ R)` with `R` fixed by `wseed`.
fn contract(tape: &mut Tape, out: Var, wseed: u64) -> Result<Var> {
    let (r, c) = tape.shape(out);
    let w = Tensor::uniform(r, c, -1.0, 1.0, &mut Rng::new(wseed));
    let wv = tape.constant(&w);
    tape.hadamard(out, wv)
}

fn check<F>(f: F, inputs: &[Tensor], tol: f64, rng: &mut Rng) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let wseed = rng.next_u64();
    grad_check_many(
        |tape, v| {
            let out = f(tape, v)?;
            contract(tape, out, wseed)
        },
        inputs,
        tol,
    )
}

fn case_add(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (r, c) = (dim(rng, 1, 5), dim(rng, 1, 5));
    let ins = [rand(r, c, rng), rand(r, c, rng)];
    check(|t, v| t.add(v[0], v[1]), &ins, tol, rng)
}

fn case_add_row(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (r, c) = (dim(rng, 1, 5), dim(rng, 1, 5));
    let ins = [rand(r, c, rng), rand(1, c, rng)];
    check(|t, v| t.add_row(v[0], v[1]), &ins, tol, rng)
}

fn case_hadamard(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (r, c) = (dim(rng, 1, 5), dim(rng, 1, 5));
    let ins = [rand(r, c, rng), rand(r, c, rng)];
    check(|t, v| t.hadamard(v[0], v[1]), &ins, tol, rng)
}

fn case_scale(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (r, c) = (dim(rng, 1, 5), dim(rng, 1, 5));
    let k = rng.uniform_range(-3.0, 3.0);
    let ins = [rand(r, c, rng)];
    check(|t, v| Ok(t.scale(v[0], k)), &ins, tol, rng)
}

fn case_tanh(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (r, c) = (dim(rng, 1, 5), dim(rng, 1, 5));
    let ins = [Tensor::uniform(r, c, -3.0, 3.0, rng)];
    check(|t, v| Ok(t.tanh(v[0])), &ins, tol, rng)
}

fn case_relu(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (r, c) = (dim(rng, 1, 5), dim(rng, 1, 5));
    let ins = [away_from_zero(rand(r, c, rng))];
    check(|t, v| Ok(t.relu(v[0])), &ins, tol, rng)
}

fn case_leaky_relu(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (r, c) = (dim(rng, 1, 5), dim(rng, 1, 5));
    let ins = [away_from_zero(rand(r, c, rng))];
    check(
        |t, v| Ok(t.activation(v[0], Activation::LeakyRelu(0.2))),
        &ins,
        tol,
        rng,
    )
}

fn indices(len: usize, bound: usize, rng: &mut Rng) -> Arc<[usize]> {
    (0..len).map(|_| rng.below(bound)).collect()
}

fn case_gather(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (r, c, m) = (dim(rng, 1, 5), dim(rng, 1, 4), dim(rng, 1, 8));
    let idx = indices(m, r, rng);
    let ins = [rand(r, c, rng)];
    check(|t, v| t.gather_rows(v[0], idx.clone()), &ins, tol, rng)
}

fn case_scatter(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (n, c, m) = (dim(rng, 1, 5), dim(rng, 1, 4), dim(rng, 1, 8));
    let idx = indices(m, n, rng);
    let ins = [rand(m, c, rng)];
    check(
        |t, v| t.scatter_add_rows(v[0], idx.clone(), n),
        &ins,
        tol,
        rng,
    )
}

fn case_scale_rows_const(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (r, c) = (dim(rng, 1, 5), dim(rng, 1, 4));
    let s: Arc<[f64]> = (0..r).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    let ins = [rand(r, c, rng)];
    check(|t, v| t.scale_rows_const(v[0], s.clone()), &ins, tol, rng)
}

fn case_sum(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (r, c) = (dim(rng, 1, 5), dim(rng, 1, 5));
    let ins = [rand(r, c, rng)];
    check(|t, v| Ok(t.sum(v[0])), &ins, tol, rng)
}

fn case_matmul(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (m, k, n) = (dim(rng, 1, 5), dim(rng, 1, 5), dim(rng, 1, 5));
    let ins = [rand(m, k, rng), rand(k, n, rng)];
    check(|t, v| t.matmul(v[0], v[1]), &ins, tol, rng)
}

fn case_linear(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (m, k, n) = (dim(rng, 1, 5), dim(rng, 1, 5), dim(rng, 1, 5));
    let ins = [rand(m, k, rng), rand(n, k, rng)];
    check(|t, v| t.linear(v[0], v[1]), &ins, tol, rng)
}

fn case_scale_rows(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (r, c) = (dim(rng, 1, 6), dim(rng, 1, 4));
    let ins = [rand(r, c, rng), rand(r, 1, rng)];
    check(|t, v| t.scale_rows(v[0], v[1]), &ins, tol, rng)
}

fn case_layer_norm(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (r, c) = (dim(rng, 1, 5), dim(rng, 2, 6));
    let ins = [
        Tensor::uniform(r, c, -2.0, 2.0, rng),
        Tensor::uniform(1, c, 0.5, 1.5, rng),
        rand(1, c, rng),
    ];
    check(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5), &ins, tol, rng)
}

fn case_segment_softmax(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (e, groups) = (dim(rng, 1, 10), dim(rng, 1, 4));
    let seg = indices(e, groups, rng);
    let ins = [Tensor::uniform(e, 1, -3.0, 3.0, rng)];
    check(
        |t, v| t.segment_softmax(v[0], seg.clone(), groups),
        &ins,
        tol,
        rng,
    )
}

fn case_cross_entropy(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let (n, k) = (dim(rng, 1, 6), dim(rng, 2, 5));
    let labels = indices(n, k, rng);
    let mut mask: Vec<usize> = (0..n).filter(|_| rng.bernoulli(0.6)).collect();
    if mask.is_empty() {
        mask.push(rng.below(n));
    }
    let mask: Arc<[usize]> = mask.into();
    let ins = [Tensor::uniform(n, k, -3.0, 3.0, rng)];
    check(
        |t, v| t.softmax_cross_entropy(v[0], labels.clone(), mask.clone()),
        &ins,
        tol,
        rng,
    )
}

/// Random undirected graph with at least one edge.
fn small_graph(rng: &mut Rng, directed: bool) -> Graph {
    let n = dim(rng, 2, 7);
    let g = random_graph(n, 0.4, directed, rng);
    let mut arcs: Vec<(usize, usize)> = g.arcs().collect();
    arcs.push((0, 1));
    build_graph(n, &arcs, directed).expect("endpoints in range")
}

/// Inputs `[extra..., params...]` for a layer whose parameters live in `store`.
fn with_params(extra: Vec<Tensor>, store: &ParamStore) -> Vec<Tensor> {
    extra
        .into_iter()
        .chain(store.iter().map(|(_, t)| t.clone()))
        .collect()
}

fn split_vars(v: &[Var], extra: usize) -> ParamVars {
    ParamVars::from_vars(v[extra..].to_vec())
}

fn case_channel_beta(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let g = small_graph(rng, false);
    let e = edge_arrays(&g);
    let d = dim(rng, 1, 4);
    let mut store = ParamStore::new();
    let att = ChannelAttention::init(&mut store, "a", d, rng);
    let ins = with_params(vec![rand(g.num_nodes(), d, rng)], &store);
    check(
        |t, v| channel_beta(t, &split_vars(v, 1), v[0], &e, &att),
        &ins,
        tol,
        rng,
    )
}

fn case_chat_aggregate(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let g = small_graph(rng, false);
    let e = edge_arrays(&g);
    let d = dim(rng, 1, 4);
    let ins = [rand(g.num_nodes(), d, rng), rand(e.len(), d, rng)];
    check(|t, v| chat_aggregate(t, v[0], &e, v[1]), &ins, tol, rng)
}

fn layer_inputs(rng: &mut Rng, n: usize, d: usize, store: &ParamStore) -> Vec<Tensor> {
    with_params(vec![rand(n, d, rng), rand(n, d, rng)], store)
}

fn case_chat_layer(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let g = small_graph(rng, false);
    let e = edge_arrays(&g);
    let d = dim(rng, 2, 4);
    let mut store = ParamStore::new();
    let p = ChatLayerParams::init(&mut store, "l", d, rng.bernoulli(0.5), true, rng);
    let ins = layer_inputs(rng, g.num_nodes(), d, &store);
    check(
        |t, v| chat_layer_forward(t, &split_vars(v, 2), v[0], Some(v[1]), &e, &p),
        &ins,
        tol,
        rng,
    )
}

fn baseline_case(rng: &mut Rng, tol: f64, tag: BaselineTag) -> Result<GradCheckReport> {
    let g = small_graph(rng, false);
    let e: EdgeArrays = edge_arrays(&g);
    let d = dim(rng, 2, 4);
    let mut store = ParamStore::new();
    let kind = BaselineKind::init(&mut store, "l", tag, d, rng);
    let layer_norm = Some(LayerNormParams::init(&mut store, "l", d));
    let p = BaselineLayerParams { kind, layer_norm };
    let ins = layer_inputs(rng, g.num_nodes(), d, &store);
    check(
        |t, v| baseline_forward(t, &split_vars(v, 2), &p, v[0], Some(v[1]), &e),
        &ins,
        tol,
        rng,
    )
}

fn case_gcn_layer(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    baseline_case(rng, tol, BaselineTag::Gcn)
}

fn case_scalar_attention_layer(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    baseline_case(rng, tol, BaselineTag::ScalarAttention)
}

fn case_freq_gate_layer(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    baseline_case(rng, tol, BaselineTag::FreqGate)
}

fn case_dir_chat_layer(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    let g = small_graph(rng, true);
    let edges = DirectedEdges::new(&g)?;
    let d = dim(rng, 2, 4);
    let mut store = ParamStore::new();
    let p = DirChatLayerParams::init(&mut store, "l", d, rng.bernoulli(0.5), true, rng);
    let ins = layer_inputs(rng, g.num_nodes(), d, &store);
    check(
        |t, v| dir_chat_forward(t, &split_vars(v, 2), v[0], Some(v[1]), &edges, &p),
        &ins,
        tol,
        rng,
    )
}

fn model_case(rng: &mut Rng, tol: f64, directed: bool) -> Result<GradCheckReport> {
    const N: usize = 6;
    let mut cfg = ModelConfig::new(3, 4, 3, 2);
    cfg.directed_mode = directed;
    cfg.use_projection = rng.bernoulli(0.5);
    if !directed {
        cfg.layer_kind = [
            LayerKind::Chat,
            LayerKind::Gcn,
            LayerKind::ScalarAttention,
            LayerKind::FreqGate,
        ][rng.below(4)];
    }
    let model = init_model(&cfg, rng)?;
    let mut arcs: Vec<(usize, usize)> = random_graph(N, 0.4, directed, rng).arcs().collect();
    arcs.push((0, 1));
    let g = build_graph(N, &arcs, directed)?;
    let prop = Propagation::new(&g, directed)?;
    let x = rand(N, 3, rng);
    let labels = indices(N, 3, rng);
    let mask: Arc<[usize]> = (0..N).collect();
    let ins: Vec<Tensor> = model.params().iter().map(|(_, t)| t.clone()).collect();
    grad_check_many(
        |t, v| {
            let fwd = model.forward_with(t, ParamVars::from_vars(v.to_vec()), &x, &prop)?;
            t.softmax_cross_entropy(fwd.logits, labels.clone(), mask.clone())
        },
        &ins,
        tol,
    )
}

fn case_model(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    model_case(rng, tol, false)
}

fn case_model_directed(rng: &mut Rng, tol: f64) -> Result<GradCheckReport> {
    model_case(rng, tol, true)
}
