//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use chatgnn::data::synthetic::{heterophilous, HeteroSpec};
use chatgnn::data::Dataset;
use chatgnn::model::{init_model, ChatGnnModel, LayerKind, ModelConfig, Propagation};
use chatgnn::Rng;

pub struct Fixture {
    pub dataset: Dataset,
    pub model: ChatGnnModel,
    pub prop: Propagation,
    pub labels: Arc<[usize]>,
    pub train: Arc<[usize]>,
}

/// Texas-sized synthetic graph with a `layers`-deep model of `kind`.
pub fn fixture(kind: LayerKind, hidden: usize, layers: usize) -> Fixture {
    let dataset = heterophilous(&HeteroSpec::texas_like(), 1, 7);
    let mut cfg = ModelConfig::new(dataset.num_features(), hidden, dataset.num_classes, layers);
    cfg.layer_kind = kind;
    let model = init_model(&cfg, &mut Rng::new(7)).expect("valid config");
    let prop = Propagation::new(&dataset.graph, false).expect("undirected");
    let labels = dataset.labels.clone().into();
    let train = dataset.splits[0].train.clone().into();
    Fixture {
        dataset,
        model,
        prop,
        labels,
        train,
    }
}
