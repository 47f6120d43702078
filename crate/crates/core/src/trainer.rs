//! Full-batch training with Adam, warm-up plus patience early stopping, and
//! evaluation metrics.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{init_model, ChatGnnModel, ModelConfig, Propagation};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Score reported on the test mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
    RocAuc,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            "roc_auc" | "auc" => Ok(Metric::RocAuc),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub warmup: usize,
    /// Seeds model initialisation in [`train_splits`].
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub test_metric: Metric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-3,
            weight_decay: 1e-4,
            max_epochs: 5000,
            patience: 500,
            warmup: 200,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            test_metric: Metric::Accuracy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::validation("weight_decay", "must be non-negative"));
        }
        if self.max_epochs == 0 {
            return Err(Error::validation("max_epochs", "must be at least 1"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::validation("patience", "exceeds max_epochs"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::validation("betas", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update using the gradients stored on `params`.
///
/// Weight decay is the classic coupled form: `wd · θ` is added to the
/// gradient before the moments are updated. Missing gradients count as zero.
pub fn adam_step(params: &mut [Tensor], state: &mut AdamState, cfg: &TrainConfig) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.grad().map(<[f64]>::to_vec);
        let data = p.data_mut();
        for i in 0..data.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[i]) + cfg.weight_decay * data[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    /// Test accuracy or ROC-AUC per [`TrainConfig::test_metric`]; 0 when the
    /// split has no test nodes.
    pub test_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: ChatGnnModel,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochMetrics {
        &self.history[self.best_epoch]
    }
}

/// Fraction of rows in `mask` whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::invalid("accuracy over an empty mask"));
    }
    let hits = mask
        .iter()
        .filter(|&&r| argmax(logits.row(r)) == labels[r])
        .count();
    Ok(hits as f64 / mask.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Mann-Whitney estimate of ROC-AUC with average ranks for ties.
/// `positive[i]` says whether `scores[i]` belongs to the positive class.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("roc_auc needs both classes in the mask"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

fn score(logits: &Tensor, labels: &[usize], mask: &[usize], metric: Metric) -> Result<f64> {
    match metric {
        Metric::Accuracy => accuracy(logits, labels, mask),
        Metric::RocAuc => {
            if logits.cols() != 2 {
                return Err(Error::invalid(format!(
                    "roc_auc needs 2 classes, model has {}",
                    logits.cols()
                )));
            }
            let scores: Vec<f64> = mask.iter().map(|&r| logits.get(r, 1)).collect();
            let pos: Vec<bool> = mask.iter().map(|&r| labels[r] == 1).collect();
            roc_auc(&scores, &pos)
        }
    }
}

pub fn evaluate(
    model: &ChatGnnModel,
    dataset: &Dataset,
    mask: &[usize],
    metric: Metric,
) -> Result<f64> {
    let prop = Propagation::new(&dataset.graph, model.config().directed_mode)?;
    let logits = model.predict_logits(&dataset.features, &prop)?;
    score(&logits, &dataset.labels, mask, metric)
}

/// Trains `model` on split `split_index` and returns the best-validation copy.
pub fn train(
    model: &ChatGnnModel,
    dataset: &Dataset,
    split_index: usize,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    let split = dataset.split(split_index)?;
    train_on(model, dataset, split, tcfg)
}

fn train_on(
    model: &ChatGnnModel,
    dataset: &Dataset,
    split: &Split,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if split.train.is_empty() {
        return Err(Error::invalid("split has an empty train mask"));
    }
    if split.val.is_empty() {
        return Err(Error::invalid("split has an empty validation mask"));
    }
    if model.config().in_features != dataset.num_features() {
        return Err(Error::validation(
            "in_features",
            format!(
                "model expects {} features, dataset has {}",
                model.config().in_features,
                dataset.num_features()
            ),
        ));
    }
    if model.config().classes < dataset.num_classes {
        return Err(Error::validation(
            "classes",
            format!(
                "model has {} outputs, dataset has {} classes",
                model.config().classes,
                dataset.num_classes
            ),
        ));
    }
    let prop = Propagation::new(&dataset.graph, model.config().directed_mode)?;
    let labels: Arc<[usize]> = dataset.labels.clone().into();
    let train_mask: Arc<[usize]> = split.train.clone().into();

    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut adam = AdamState::new(current.params_mut().tensors_mut());
    let mut history = Vec::new();

    for epoch in 0..tcfg.max_epochs {
        let mut tape = Tape::new();
        let fwd = current.forward(&mut tape, &dataset.features, &prop)?;
        let loss = tape.softmax_cross_entropy(fwd.logits, labels.clone(), train_mask.clone())?;
        let train_loss = tape.value(loss).get(0, 0);
        if !train_loss.is_finite() {
            return Err(Error::invalid(format!(
                "training diverged at epoch {epoch} (loss {train_loss})"
            )));
        }
        let logits = tape.value(fwd.logits);
        let train_accuracy = accuracy(logits, &dataset.labels, &split.train)?;
        let val_accuracy = accuracy(logits, &dataset.labels, &split.val)?;
        let test_metric = if split.test.is_empty() {
            0.0
        } else {
            score(logits, &dataset.labels, &split.test, tcfg.test_metric)?
        };
        history.push(EpochMetrics {
            epoch,
            train_loss,
            train_accuracy,
            val_accuracy,
            test_metric,
        });

        // `history[epoch]` describes the parameters before this epoch's update.
        let improved = val_accuracy > best_val;
        if improved {
            best_val = val_accuracy;
            best_epoch = epoch;
            best = current.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if epoch >= tcfg.warmup && since_best >= tcfg.patience {
                break;
            }
        }

        tape.backward(loss)?;
        let store = current.params_mut();
        store.zero_grad();
        store.pull_grads(&tape, &fwd.vars);
        adam_step(store.tensors_mut(), &mut adam, tcfg);
    }

    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
    })
}

/// Result of training a freshly initialised model on one split.
#[derive(Debug, Clone)]
pub struct SplitRun {
    pub split: usize,
    pub outcome: TrainOutcome,
    /// Test score of the returned model, or `None` for an empty test mask.
    pub test: Option<f64>,
}

/// Independent runs over several splits, in parallel. Run `s` initialises its
/// model from `Rng::new(tcfg.seed).fork(s)`, so results do not depend on
/// scheduling.
pub fn train_splits(
    model_cfg: &ModelConfig,
    dataset: &Dataset,
    splits: &[usize],
    tcfg: &TrainConfig,
) -> Result<Vec<SplitRun>> {
    tcfg.validate()?;
    model_cfg.validate()?;
    for &s in splits {
        dataset.split(s)?;
    }
    splits
        .par_iter()
        .map(|&s| {
            let mut rng = Rng::new(tcfg.seed).fork(s as u64);
            let model = init_model(model_cfg, &mut rng)?;
            let outcome = train(&model, dataset, s, tcfg)?;
            let split = dataset.split(s)?;
            let test = if split.test.is_empty() {
                None
            } else {
                Some(evaluate(
                    &outcome.model,
                    dataset,
                    &split.test,
                    tcfg.test_metric,
                )?)
            };
            Ok(SplitRun {
                split: s,
                outcome,
                test,
            })
        })
        .collect()
}
