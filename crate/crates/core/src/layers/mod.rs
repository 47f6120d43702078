//! Message-passing layers.
//!
//! The channel-attentive layer weights every feature channel of every
//! incoming message separately:
//!
//! ```text
//! beta_vw = tanh(W1 h_v + W2 h_w)                       (receiver v, sender w)
//! m_v     = sum_w  beta_vw ⊙ h_w / sqrt(d_v d_w)
//! h~_v    = phi1(h_v) + phi2(m_v)
//! out_v   = LayerNorm(h~_v + h0_v)                      (initial residual)
//! ```
//!
//! The baselines (GCN, single-head scalar attention, tanh frequency gate)
//! share the residual and layer-norm wrapping so that swapping the message
//! function is the only difference.

use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{edge_arrays, EdgeArrays, Graph};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Negative slope of the pre-softmax score in the scalar-attention baseline.
pub const ATTENTION_LEAKY_SLOPE: f64 = 0.2;

/// `W1` acts on the receiving node, `W2` on the sending neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttention {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl ChannelAttention {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut Rng) -> Self {
        ChannelAttention {
            w1: store.add(format!("{prefix}.w1"), Tensor::glorot(d, d, rng)),
            w2: store.add(format!("{prefix}.w2"), Tensor::glorot(d, d, rng)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        LayerNormParams {
            gamma: store.add(format!("{prefix}.ln_gamma"), Tensor::ones(1, d)),
            beta: store.add(format!("{prefix}.ln_beta"), Tensor::zeros(1, d)),
        }
    }
}

/// Bias-free linear maps for the combine step. `None` anywhere a
/// projection is optional means the identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub self_map: ParamId,
    pub neigh_map: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatLayerParams {
    pub attention: ChannelAttention,
    pub projection: Option<Projection>,
    pub layer_norm: Option<LayerNormParams>,
}

impl ChatLayerParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        projection: bool,
        layer_norm: bool,
        rng: &mut Rng,
    ) -> Self {
        let attention = ChannelAttention::init(store, prefix, d, rng);
        let projection = projection.then(|| Projection {
            self_map: store.add(format!("{prefix}.phi_self"), Tensor::glorot(d, d, rng)),
            neigh_map: store.add(format!("{prefix}.phi_neigh"), Tensor::glorot(d, d, rng)),
        });
        let layer_norm = layer_norm.then(|| LayerNormParams::init(store, prefix, d));
        ChatLayerParams {
            attention,
            projection,
            layer_norm,
        }
    }
}

/// Directed variant: separate attention weights for messages that follow
/// arcs and for messages that travel against them. The combine step gets a
/// third map for the reverse-direction message.
#[derive(Debug, Clone, PartialEq)]
pub struct DirChatLayerParams {
    pub forward: ChannelAttention,
    pub reverse: ChannelAttention,
    pub projection: Option<DirProjection>,
    pub layer_norm: Option<LayerNormParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirProjection {
    pub self_map: ParamId,
    pub fwd_map: ParamId,
    pub rev_map: ParamId,
}

impl DirChatLayerParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        projection: bool,
        layer_norm: bool,
        rng: &mut Rng,
    ) -> Self {
        let forward = ChannelAttention::init(store, &format!("{prefix}.fwd"), d, rng);
        let reverse = ChannelAttention::init(store, &format!("{prefix}.rev"), d, rng);
        let projection = projection.then(|| DirProjection {
            self_map: store.add(format!("{prefix}.phi_self"), Tensor::glorot(d, d, rng)),
            fwd_map: store.add(format!("{prefix}.phi_fwd"), Tensor::glorot(d, d, rng)),
            rev_map: store.add(format!("{prefix}.phi_rev"), Tensor::glorot(d, d, rng)),
        });
        let layer_norm = layer_norm.then(|| LayerNormParams::init(store, prefix, d));
        DirChatLayerParams {
            forward,
            reverse,
            projection,
            layer_norm,
        }
    }
}

/// Comparison layers.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineKind {
    /// `m_v = W · sum_w h_w / sqrt(d_v d_w)`
    Gcn { w: ParamId },
    /// Single-head scalar attention: `alpha_vw = softmax_w(LeakyReLU(a_self·z_v + a_neigh·z_w))`
    /// with `z = W h`, and `m_v = sum_w alpha_vw z_w`.
    ScalarAttention {
        w: ParamId,
        a_self: ParamId,
        a_neigh: ParamId,
    },
    /// Signed scalar gate: `m_v = sum_w tanh(g_self·h_v + g_neigh·h_w) h_w / sqrt(d_v d_w)`.
    FreqGate { g_self: ParamId, g_neigh: ParamId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineTag {
    Gcn,
    ScalarAttention,
    FreqGate,
}

impl BaselineKind {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        tag: BaselineTag,
        d: usize,
        rng: &mut Rng,
    ) -> Self {
        match tag {
            BaselineTag::Gcn => BaselineKind::Gcn {
                w: store.add(format!("{prefix}.w"), Tensor::glorot(d, d, rng)),
            },
            BaselineTag::ScalarAttention => BaselineKind::ScalarAttention {
                w: store.add(format!("{prefix}.w"), Tensor::glorot(d, d, rng)),
                a_self: store.add(format!("{prefix}.a_self"), Tensor::glorot(d, 1, rng)),
                a_neigh: store.add(format!("{prefix}.a_neigh"), Tensor::glorot(d, 1, rng)),
            },
            BaselineTag::FreqGate => BaselineKind::FreqGate {
                g_self: store.add(format!("{prefix}.g_self"), Tensor::glorot(d, 1, rng)),
                g_neigh: store.add(format!("{prefix}.g_neigh"), Tensor::glorot(d, 1, rng)),
            },
        }
    }

    pub fn tag(&self) -> BaselineTag {
        match self {
            BaselineKind::Gcn { .. } => BaselineTag::Gcn,
            BaselineKind::ScalarAttention { .. } => BaselineTag::ScalarAttention,
            BaselineKind::FreqGate { .. } => BaselineTag::FreqGate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineLayerParams {
    pub kind: BaselineKind,
    pub layer_norm: Option<LayerNormParams>,
}

/// Forward and reverse arc arrays of a directed graph, each normalized by
/// its own out/in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedEdges {
    pub forward: EdgeArrays,
    pub reverse: EdgeArrays,
}

impl DirectedEdges {
    pub fn new(g: &Graph) -> Result<Self> {
        if !g.is_directed() {
            return Err(Error::invalid(
                "directed message passing needs a directed graph",
            ));
        }
        Ok(DirectedEdges {
            forward: edge_arrays(g),
            reverse: edge_arrays(&g.reverse()?),
        })
    }
}

fn check_width(tape: &Tape, h: Var, e: &EdgeArrays, d: usize, op: &'static str) -> Result<()> {
    let shape = tape.shape(h);
    if shape != (e.num_nodes, d) {
        return Err(Error::Dimension {
            op,
            lhs: shape,
            rhs: (e.num_nodes, d),
        });
    }
    Ok(())
}

/// Per-arc channel weights `tanh(W1 h_dst + W2 h_src)`, one row per arc.
pub fn channel_beta(
    tape: &mut Tape,
    vars: &ParamVars,
    h: Var,
    e: &EdgeArrays,
    p: &ChannelAttention,
) -> Result<Var> {
    let d = tape.shape(vars.get(p.w1)).0;
    check_width(tape, h, e, d, "channel_beta")?;
    // project once per node, then look the rows up per arc
    let recv = tape.linear(h, vars.get(p.w1))?;
    let send = tape.linear(h, vars.get(p.w2))?;
    let recv = tape.gather_rows(recv, e.dst.clone())?;
    let send = tape.gather_rows(send, e.src.clone())?;
    let pre = tape.add(recv, send)?;
    Ok(tape.tanh(pre))
}

/// `m_v = sum over arcs w→v of norm · beta ⊙ h_w`.
pub fn chat_aggregate(tape: &mut Tape, h: Var, e: &EdgeArrays, beta: Var) -> Result<Var> {
    let d = tape.shape(h).1;
    check_width(tape, h, e, d, "chat_aggregate")?;
    if tape.shape(beta) != (e.len(), d) {
        return Err(Error::Dimension {
            op: "chat_aggregate.beta",
            lhs: tape.shape(beta),
            rhs: (e.len(), d),
        });
    }
    let hw = tape.gather_rows(h, e.src.clone())?;
    let msg = tape.hadamard(beta, hw)?;
    let msg = tape.scale_rows_const(msg, e.norm.clone())?;
    tape.scatter_add_rows(msg, e.dst.clone(), e.num_nodes)
}

/// `phi1(h) + phi2(m)`; identity maps when `proj` is `None`.
pub fn chat_combine(
    tape: &mut Tape,
    vars: &ParamVars,
    h: Var,
    m: Var,
    proj: Option<&Projection>,
) -> Result<Var> {
    match proj {
        None => tape.add(h, m),
        Some(p) => {
            let a = tape.linear(h, vars.get(p.self_map))?;
            let b = tape.linear(m, vars.get(p.neigh_map))?;
            tape.add(a, b)
        }
    }
}

/// Adds the initial residual `h0` (when given) and applies layer norm
/// (when configured).
pub fn residual_norm(
    tape: &mut Tape,
    vars: &ParamVars,
    h_tilde: Var,
    h0: Option<Var>,
    ln: Option<&LayerNormParams>,
) -> Result<Var> {
    let x = match h0 {
        Some(h0) => tape.add(h_tilde, h0)?,
        None => h_tilde,
    };
    match ln {
        Some(ln) => tape.layer_norm(x, vars.get(ln.gamma), vars.get(ln.beta), LAYER_NORM_EPS),
        None => Ok(x),
    }
}

/// One channel-attentive layer. Also returns the per-arc channel weights.
pub fn chat_layer_forward_traced(
    tape: &mut Tape,
    vars: &ParamVars,
    h: Var,
    h0: Option<Var>,
    e: &EdgeArrays,
    p: &ChatLayerParams,
) -> Result<(Var, Var)> {
    let beta = channel_beta(tape, vars, h, e, &p.attention)?;
    let m = chat_aggregate(tape, h, e, beta)?;
    let h_tilde = chat_combine(tape, vars, h, m, p.projection.as_ref())?;
    let out = residual_norm(tape, vars, h_tilde, h0, p.layer_norm.as_ref())?;
    Ok((out, beta))
}

pub fn chat_layer_forward(
    tape: &mut Tape,
    vars: &ParamVars,
    h: Var,
    h0: Option<Var>,
    e: &EdgeArrays,
    p: &ChatLayerParams,
) -> Result<Var> {
    chat_layer_forward_traced(tape, vars, h, h0, e, p).map(|(out, _)| out)
}

/// Plain `norm · h_w` aggregation, i.e. the channel layer with `beta ≡ 1`.
pub fn gcn_aggregate(tape: &mut Tape, h: Var, e: &EdgeArrays) -> Result<Var> {
    let hw = tape.gather_rows(h, e.src.clone())?;
    let msg = tape.scale_rows_const(hw, e.norm.clone())?;
    tape.scatter_add_rows(msg, e.dst.clone(), e.num_nodes)
}

/// Per-arc scalar score `u_self·x_dst + u_neigh·x_src` as an `E×1` column.
fn pair_score(tape: &mut Tape, x: Var, e: &EdgeArrays, u_self: Var, u_neigh: Var) -> Result<Var> {
    let s_recv = tape.matmul(x, u_self)?;
    let s_send = tape.matmul(x, u_neigh)?;
    let s_recv = tape.gather_rows(s_recv, e.dst.clone())?;
    let s_send = tape.gather_rows(s_send, e.src.clone())?;
    tape.add(s_recv, s_send)
}

/// Per-arc scalar weights of a baseline (`None` for GCN, whose weights are
/// the constant normalization).
pub fn baseline_scores(
    tape: &mut Tape,
    vars: &ParamVars,
    kind: &BaselineKind,
    h: Var,
    e: &EdgeArrays,
) -> Result<Option<Var>> {
    match kind {
        BaselineKind::Gcn { .. } => Ok(None),
        BaselineKind::ScalarAttention { w, a_self, a_neigh } => {
            let z = tape.linear(h, vars.get(*w))?;
            let s = pair_score(tape, z, e, vars.get(*a_self), vars.get(*a_neigh))?;
            let s = tape.activation(s, Activation::LeakyRelu(ATTENTION_LEAKY_SLOPE));
            tape.segment_softmax(s, e.dst.clone(), e.num_nodes)
                .map(Some)
        }
        BaselineKind::FreqGate { g_self, g_neigh } => {
            let s = pair_score(tape, h, e, vars.get(*g_self), vars.get(*g_neigh))?;
            Ok(Some(tape.tanh(s)))
        }
    }
}

/// Baseline layer: the message alone, wrapped like the channel layer.
pub fn baseline_forward(
    tape: &mut Tape,
    vars: &ParamVars,
    p: &BaselineLayerParams,
    h: Var,
    h0: Option<Var>,
    e: &EdgeArrays,
) -> Result<Var> {
    let d = tape.shape(h).1;
    check_width(tape, h, e, d, "baseline_forward")?;
    let scores = baseline_scores(tape, vars, &p.kind, h, e)?;
    let m = match (&p.kind, scores) {
        (BaselineKind::Gcn { w }, _) => {
            let agg = gcn_aggregate(tape, h, e)?;
            tape.linear(agg, vars.get(*w))?
        }
        (BaselineKind::ScalarAttention { w, .. }, Some(alpha)) => {
            let z = tape.linear(h, vars.get(*w))?;
            let zw = tape.gather_rows(z, e.src.clone())?;
            let msg = tape.scale_rows(zw, alpha)?;
            tape.scatter_add_rows(msg, e.dst.clone(), e.num_nodes)?
        }
        (BaselineKind::FreqGate { .. }, Some(gate)) => {
            let hw = tape.gather_rows(h, e.src.clone())?;
            let msg = tape.scale_rows(hw, gate)?;
            let msg = tape.scale_rows_const(msg, e.norm.clone())?;
            tape.scatter_add_rows(msg, e.dst.clone(), e.num_nodes)?
        }
        _ => unreachable!("attention baselines always produce scores"),
    };
    residual_norm(tape, vars, m, h0, p.layer_norm.as_ref())
}

/// Directed channel-attentive layer:
/// `h~ = phi1(h) + phi2(m_fwd) + phi3(m_rev)`.
pub fn dir_chat_forward(
    tape: &mut Tape,
    vars: &ParamVars,
    h: Var,
    h0: Option<Var>,
    edges: &DirectedEdges,
    p: &DirChatLayerParams,
) -> Result<Var> {
    let beta_f = channel_beta(tape, vars, h, &edges.forward, &p.forward)?;
    let m_f = chat_aggregate(tape, h, &edges.forward, beta_f)?;
    let beta_r = channel_beta(tape, vars, h, &edges.reverse, &p.reverse)?;
    let m_r = chat_aggregate(tape, h, &edges.reverse, beta_r)?;
    let h_tilde = match &p.projection {
        None => {
            let s = tape.add(h, m_f)?;
            tape.add(s, m_r)?
        }
        Some(pr) => {
            let a = tape.linear(h, vars.get(pr.self_map))?;
            let b = tape.linear(m_f, vars.get(pr.fwd_map))?;
            let c = tape.linear(m_r, vars.get(pr.rev_map))?;
            let s = tape.add(a, b)?;
            tape.add(s, c)?
        }
    };
    residual_norm(tape, vars, h_tilde, h0, p.layer_norm.as_ref())
}
