use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layers::{cross_entropy_loss, softmax_ce_grad};
use super::optim::{Adam, AdamConfig, StepLr};
use super::{Model, ModelConfig};
use crate::dataset::{Dataset, Split, TrainingSample};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub gamma: f64,
    pub step_size: usize,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr0: 0.01, gamma: 0.5, step_size: 20, epochs: 100, batch: 64, seed: 0, adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> StepLr {
        StepLr { lr0: self.lr0, gamma: self.gamma, step_size: self.step_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_top1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EpochStats>,
    /// Epoch whose weights were kept (lowest validation loss, else the last).
    pub best_epoch: usize,
}

fn batch_matrix(samples: &[&TrainingSample], dim: usize) -> Array2<f64> {
    let mut x = Array2::zeros((samples.len(), dim));
    for (mut row, s) in x.rows_mut().into_iter().zip(samples) {
        row.assign(&ndarray::ArrayView1::from(&s.input[..]));
    }
    x
}

/// Mean loss and Top-1 accuracy of `model` on `samples`.
pub fn evaluate(model: &Model, samples: &[&TrainingSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let dim = model.config.input_dim();
    let (mut loss, mut hits) = (0.0, 0usize);
    for chunk in samples.chunks(512) {
        let p = model.predict_proba(&batch_matrix(chunk, dim))?;
        let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        loss += cross_entropy_loss(&p, &labels) * chunk.len() as f64;
        for (row, &y) in p.rows().into_iter().zip(&labels) {
            hits += usize::from(crate::measurement::argmax(row.as_slice().expect("contiguous")) == y);
        }
    }
    Ok((loss / samples.len() as f64, hits as f64 / samples.len() as f64))
}

/// Mini-batch Adam with a step schedule.
///
/// Keeps the weights of the epoch with the lowest validation loss and rounds
/// them to storage precision, so saved and in-memory models agree exactly.
pub fn train(model: &mut Model, train: &[&TrainingSample], val: &[&TrainingSample], cfg: &TrainConfig) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and batch must be positive".into()));
    }
    let dim = model.config.input_dim();
    let n_a = model.config.n_a;
    if let Some(bad) = train.iter().chain(val).find(|s| s.input.len() != dim || s.label >= n_a) {
        return Err(Error::Schema(format!(
            "sample with {} inputs and label {} does not fit a {dim}-input, {n_a}-class model",
            bad.input.len(),
            bad.label
        )));
    }
    let mut rng = stream_rng(cfg.seed, &[0x7a11]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut adam = Adam::new(cfg.adam);
    let schedule = cfg.schedule();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch) {
            let batch: Vec<&TrainingSample> = idx.iter().map(|&i| train[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            model.zero_grad();
            let probs = model.forward_train(&batch_matrix(&batch, dim))?;
            let loss = cross_entropy_loss(&probs, &labels);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            total += loss * batch.len() as f64;
            model.backward(softmax_ce_grad(&probs, &labels));
            adam.step(&mut model.params_mut(), lr);
        }
        if !model.is_finite() {
            return Err(Error::Numeric(format!("non-finite weights after epoch {epoch}")));
        }
        let (val_loss, val_top1) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(model, val)?;
            (Some(l), Some(a))
        };
        curve.push(EpochStats { epoch, lr, train_loss: total / train.len() as f64, val_loss, val_top1 });
        if let Some(vl) = val_loss {
            if best.as_ref().is_none_or(|b| vl < b.0) {
                best = Some((vl, epoch, model.clone()));
            }
        }
        log::debug!("epoch {epoch}: lr {lr:.2e} train {:.4} val {val_loss:?}", curve[epoch].train_loss);
    }
    let best_epoch = match best {
        Some((_, epoch, m)) => {
            *model = m;
            epoch
        }
        None => cfg.epochs - 1,
    };
    model.round_to_f32();
    Ok(TrainReport { curve, best_epoch })
}

/// Builds a fresh model for `config` and trains it on the dataset's train and
/// validation splits.
pub fn train_model(config: &ModelConfig, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    if !config.accepts(&dataset.schema) {
        return Err(Error::Schema(format!("dataset schema {:?} does not match model {:?}", dataset.schema, config)));
    }
    let mut model = Model::new(config.clone(), cfg.seed)?;
    let report = train(&mut model, &dataset.split(Split::Train), &dataset.split(Split::Val), cfg)?;
    Ok((model, report))
}
