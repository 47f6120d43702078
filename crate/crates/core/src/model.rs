//! Full network: input projection, a stack of message-passing layers with
//! initial residual and layer norm, and a linear output layer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{edge_arrays, EdgeArrays, Graph};
use crate::layers::{
    baseline_forward, chat_layer_forward_traced, dir_chat_forward, BaselineKind,
    BaselineLayerParams, BaselineTag, ChatLayerParams, DirChatLayerParams, DirectedEdges,
    LayerNormParams,
};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Message function used by every hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    #[default]
    Chat,
    Gcn,
    ScalarAttention,
    FreqGate,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Chat => "chat",
            LayerKind::Gcn => "gcn",
            LayerKind::ScalarAttention => "scalar_attention",
            LayerKind::FreqGate => "freq_gate",
        }
    }
}

impl std::str::FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chat" => Ok(LayerKind::Chat),
            "gcn" => Ok(LayerKind::Gcn),
            "scalar_attention" | "gat" => Ok(LayerKind::ScalarAttention),
            "freq_gate" | "fagcn" => Ok(LayerKind::FreqGate),
            other => Err(Error::invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_features: usize,
    pub hidden: usize,
    pub classes: usize,
    pub layers: usize,
    pub use_layer_norm: bool,
    pub use_projection: bool,
    pub directed_mode: bool,
    /// Add the layer-0 representation to every layer output.
    #[serde(default = "default_true")]
    pub residual: bool,
    #[serde(default)]
    pub layer_kind: LayerKind,
    pub seed: u64,
}

impl ModelConfig {
    /// Channel-attentive model with residual and layer norm on.
    pub fn new(in_features: usize, hidden: usize, classes: usize, layers: usize) -> Self {
        ModelConfig {
            in_features,
            hidden,
            classes,
            layers,
            use_layer_norm: true,
            use_projection: false,
            directed_mode: false,
            residual: true,
            layer_kind: LayerKind::Chat,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("in_features", self.in_features),
            ("hidden", self.hidden),
            ("classes", self.classes),
            ("layers", self.layers),
        ] {
            if v == 0 {
                return Err(Error::validation(name, "must be at least 1"));
            }
        }
        if self.directed_mode && self.layer_kind != LayerKind::Chat {
            return Err(Error::validation(
                "directed_mode",
                "only the channel-attentive layer has a directed variant",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Chat(ChatLayerParams),
    DirChat(DirChatLayerParams),
    Baseline(BaselineLayerParams),
}

/// Arc arrays prepared for the model's propagation mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Propagation {
    Undirected(EdgeArrays),
    Directed(DirectedEdges),
}

impl Propagation {
    pub fn new(g: &Graph, directed_mode: bool) -> Result<Self> {
        if directed_mode {
            Ok(Propagation::Directed(DirectedEdges::new(g)?))
        } else {
            Ok(Propagation::Undirected(edge_arrays(g)))
        }
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            Propagation::Undirected(e) => e.num_nodes,
            Propagation::Directed(d) => d.forward.num_nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatGnnModel {
    config: ModelConfig,
    store: ParamStore,
    w_in: ParamId,
    b_in: ParamId,
    layers: Vec<Layer>,
    w_out: ParamId,
    b_out: ParamId,
}

/// Result of one recorded forward pass.
#[derive(Debug)]
pub struct Forward {
    pub logits: Var,
    pub vars: ParamVars,
    /// Per-layer `E×D` channel weights (channel-attentive undirected layers only).
    pub betas: Vec<Var>,
}

pub fn init_model(cfg: &ModelConfig, rng: &mut Rng) -> Result<ChatGnnModel> {
    cfg.validate()?;
    let (f, d, k) = (cfg.in_features, cfg.hidden, cfg.classes);
    let mut store = ParamStore::new();
    let w_in = store.add("input.w", Tensor::glorot(d, f, rng));
    let b_in = store.add("input.b", Tensor::zeros(1, d));
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let prefix = format!("layer{l}");
        let layer = match (cfg.layer_kind, cfg.directed_mode) {
            (LayerKind::Chat, false) => Layer::Chat(ChatLayerParams::init(
                &mut store,
                &prefix,
                d,
                cfg.use_projection,
                cfg.use_layer_norm,
                rng,
            )),
            (LayerKind::Chat, true) => Layer::DirChat(DirChatLayerParams::init(
                &mut store,
                &prefix,
                d,
                cfg.use_projection,
                cfg.use_layer_norm,
                rng,
            )),
            (kind, _) => {
                let tag = match kind {
                    LayerKind::Gcn => BaselineTag::Gcn,
                    LayerKind::ScalarAttention => BaselineTag::ScalarAttention,
                    LayerKind::FreqGate => BaselineTag::FreqGate,
                    LayerKind::Chat => unreachable!(),
                };
                let kind = BaselineKind::init(&mut store, &prefix, tag, d, rng);
                let layer_norm = cfg
                    .use_layer_norm
                    .then(|| LayerNormParams::init(&mut store, &prefix, d));
                Layer::Baseline(BaselineLayerParams { kind, layer_norm })
            }
        };
        layers.push(layer);
    }
    let w_out = store.add("output.w", Tensor::glorot(k, d, rng));
    let b_out = store.add("output.b", Tensor::zeros(1, k));
    Ok(ChatGnnModel {
        config: cfg.clone(),
        store,
        w_in,
        b_in,
        layers,
        w_out,
        b_out,
    })
}

impl ChatGnnModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_weight(&self) -> ParamId {
        self.w_in
    }

    /// Records the forward pass `x → logits` on `tape`.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor, prop: &Propagation) -> Result<Forward> {
        let vars = self.store.register(tape);
        self.forward_with(tape, vars, x, prop)
    }

    /// Forward pass with parameter handles supplied by the caller, in
    /// [`ParamStore`] order.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        vars: ParamVars,
        x: &Tensor,
        prop: &Propagation,
    ) -> Result<Forward> {
        if vars.as_slice().len() != self.store.len() {
            return Err(Error::invalid(format!(
                "{} parameter handles for {} tensors",
                vars.as_slice().len(),
                self.store.len()
            )));
        }
        if x.rows() != prop.num_nodes() {
            return Err(Error::Dimension {
                op: "model_forward.features",
                lhs: x.shape(),
                rhs: (prop.num_nodes(), self.config.in_features),
            });
        }
        let xv = tape.constant(x);
        let h0 = tape.linear(xv, vars.get(self.w_in))?;
        let h0 = tape.add_row(h0, vars.get(self.b_in))?;
        let h0 = tape.relu(h0);
        let residual = self.config.residual.then_some(h0);

        let mut h = h0;
        let mut betas = Vec::new();
        for layer in &self.layers {
            h = match (layer, prop) {
                (Layer::Chat(p), Propagation::Undirected(e)) => {
                    let (out, beta) = chat_layer_forward_traced(tape, &vars, h, residual, e, p)?;
                    betas.push(beta);
                    out
                }
                (Layer::DirChat(p), Propagation::Directed(d)) => {
                    dir_chat_forward(tape, &vars, h, residual, d, p)?
                }
                (Layer::Baseline(p), Propagation::Undirected(e)) => {
                    baseline_forward(tape, &vars, p, h, residual, e)?
                }
                _ => {
                    return Err(Error::invalid(
                        "propagation mode does not match the model's directed_mode",
                    ))
                }
            };
        }
        let z = tape.linear(h, vars.get(self.w_out))?;
        let logits = tape.add_row(z, vars.get(self.b_out))?;
        Ok(Forward {
            logits,
            vars,
            betas,
        })
    }

    /// Inference-only convenience: logits as a plain tensor.
    pub fn predict_logits(&self, x: &Tensor, prop: &Propagation) -> Result<Tensor> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, x, prop)?;
        Ok(tape.value(fwd.logits).clone())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self
                .store
                .iter()
                .map(|(name, t)| StoredParam {
                    name: name.to_string(),
                    rows: t.rows(),
                    cols: t.cols(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::Format(format!("serializing checkpoint: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ChatGnnModel, ModelConfig)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Checkpoint = serde_json::from_str(&text).map_err(|e| {
            Error::Format(format!(
                "{}: line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        if doc.format != CHECKPOINT_FORMAT || doc.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint `{}` version {}",
                doc.format, doc.version
            )));
        }
        let mut model = init_model(&doc.config, &mut Rng::new(doc.config.seed))?;
        if doc.params.len() != model.store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, config implies {}",
                doc.params.len(),
                model.store.len()
            )));
        }
        let ids: Vec<ParamId> = model.store.ids().collect();
        for (id, p) in ids.into_iter().zip(doc.params) {
            let expect = model.store.get(id);
            let name = model.store.name(id);
            if p.name != name || (p.rows, p.cols) != expect.shape() {
                return Err(Error::Format(format!(
                    "tensor `{}` {}x{} does not match expected `{name}` {:?}",
                    p.name,
                    p.rows,
                    p.cols,
                    expect.shape()
                )));
            }
            let t = Tensor::from_vec(p.rows, p.cols, p.data)
                .map_err(|_| Error::Format(format!("tensor `{}` has wrong data length", p.name)))?;
            *model.store.get_mut(id) = t.with_grad();
        }
        let cfg = model.config.clone();
        Ok((model, cfg))
    }
}

pub const CHECKPOINT_FORMAT: &str = "chatgnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<StoredParam>,
}

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}
