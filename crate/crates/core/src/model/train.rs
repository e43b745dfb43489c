use serde::{Deserialize, Serialize};

use super::{Model, ModelError};
use crate::dataset::Dataset;
use crate::encoder::FEATURE_LEN;
use crate::numerics::{adam_step, AdamConfig, Prng, Tensor};

/// Optimizer and schedule. Defaults: Adam at lr 1e-5 with decoupled weight
/// decay 1e-4, batches of 16, 250 epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 16,
            epochs: 250,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be positive".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(ModelError::Config("lr must be positive and betas in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One epoch of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    /// Accuracy of the training-mode (dropout on) predictions made while fitting.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

/// Parameter values at the epoch with the highest validation accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub val_accuracy: f64,
    pub values: Vec<Tensor>,
}

/// Everything besides the model needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Adam steps taken so far.
    pub step: u64,
    pub history: Vec<EpochStats>,
    pub best: Option<BestSnapshot>,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            config,
            step: 0,
            history: Vec::new(),
            best: None,
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }
}

/// Mini-batch Adam on mean cross-entropy.
///
/// Epoch `e` draws its shuffle and dropout masks from `Prng::stream(seed, e)`,
/// so a run restored from a checkpoint continues exactly as an uninterrupted
/// one would.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub state: TrainState,
}

fn gather(ds: &Dataset, idx: &[usize]) -> (Tensor, Vec<usize>) {
    let mut data = Vec::with_capacity(idx.len() * FEATURE_LEN);
    let mut targets = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &ds.samples()[i];
        data.extend(s.features.to_f64());
        targets.push(s.label.index());
    }
    (Tensor::from_raw(vec![idx.len(), FEATURE_LEN], data), targets)
}

/// Fraction of `ds` the model labels correctly in inference mode.
pub(crate) fn accuracy(model: &Model, ds: &Dataset) -> Result<f64, ModelError> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let fvs: Vec<_> = ds.samples().iter().map(|s| s.features).collect();
    let preds = model.predict_many(&fvs)?;
    let hits = preds
        .iter()
        .zip(ds.samples())
        .filter(|((l, _), s)| *l == s.label)
        .count();
    Ok(hits as f64 / ds.len() as f64)
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Self {
        Self {
            model,
            state: TrainState::new(config),
        }
    }

    pub fn resume(model: Model, state: TrainState) -> Self {
        Self { model, state }
    }

    /// Runs one epoch and appends its statistics.
    pub fn epoch(&mut self, train: &Dataset, val: Option<&Dataset>) -> Result<&EpochStats, ModelError> {
        if train.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        let cfg = self.state.config.clone();
        cfg.validate()?;
        let adam = cfg.adam();
        let epoch = self.state.history.len();
        let mut rng = Prng::stream(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let (x, targets) = gather(train, batch);
            let logits = {
                let (loss, grads, logits) = self.step_batch(&x, &targets, &mut rng)?;
                loss_sum += loss * batch.len() as f64;
                self.model.params.zero_grads();
                self.model.params.accumulate(&grads);
                logits
            };
            hits += logits
                .chunks(self.model.classes())
                .zip(&targets)
                .filter(|(row, &t)| argmax(row) == t)
                .count();
            self.state.step += 1;
            adam_step(self.model.params.as_mut_slice(), self.state.step, &adam);
        }
        let val_accuracy = match val {
            Some(v) if !v.is_empty() => Some(accuracy(&self.model, v)?),
            _ => None,
        };
        if let Some(acc) = val_accuracy {
            if self.state.best.as_ref().is_none_or(|b| acc > b.val_accuracy) {
                self.state.best = Some(BestSnapshot {
                    epoch,
                    val_accuracy: acc,
                    values: self.model.params.values(),
                });
            }
        }
        self.state.history.push(EpochStats {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            val_accuracy,
        });
        Ok(self.state.history.last().expect("just pushed"))
    }

    fn step_batch(
        &self,
        x: &Tensor,
        targets: &[usize],
        rng: &mut Prng,
    ) -> Result<(f64, crate::numerics::GradBuffer, Vec<f64>), ModelError> {
        let model = &self.model;
        let batch = targets.len();
        let p = model.params.as_slice();
        let (logits, tape) = model.arch.forward(p, x.data(), batch, Some(rng));
        let (loss, mut dlogits) = crate::numerics::cross_entropy_indices(&logits, model.classes(), targets);
        let inv = 1.0 / batch as f64;
        dlogits.iter_mut().for_each(|d| *d *= inv);
        let mut grads = model.params.grad_buffer();
        model.arch.backward(p, &mut grads, &tape, &dlogits, batch);
        Ok((loss * inv, grads, logits))
    }

    /// Trains until `config.epochs` epochs are recorded, calling `on_epoch`
    /// after each.
    pub fn fit(
        &mut self,
        train: &Dataset,
        val: Option<&Dataset>,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<(), ModelError> {
        if train.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        while self.state.history.len() < self.state.config.epochs {
            let stats = self.epoch(train, val)?;
            on_epoch(stats);
        }
        Ok(())
    }

    /// The model with its best-validation parameters, or the final ones when
    /// no validation set was used.
    pub fn best_model(&self) -> Model {
        let mut m = self.model.clone();
        if let Some(best) = &self.state.best {
            m.params
                .set_values(&best.values)
                .expect("snapshot taken from this model");
        }
        m
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// Trains a fresh copy of `model` for `config.epochs` epochs.
pub fn train(model: Model, train: &Dataset, val: Option<&Dataset>, config: TrainConfig) -> Result<Trainer, ModelError> {
    let mut t = Trainer::new(model, config);
    t.fit(train, val, |_| {})?;
    Ok(t)
}
