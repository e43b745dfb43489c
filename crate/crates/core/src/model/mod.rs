//! Behavioural classifiers: the densely connected LSTM and its baselines,
//! with training and a binary checkpoint format.

mod baselines;
mod checkpoint;
mod dense;
mod layers;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baselines::{BaselineConfig, BaselineKind};
pub use checkpoint::{
    from_bytes as checkpoint_from_bytes, load_checkpoint, save_checkpoint, to_bytes as checkpoint_to_bytes, Checkpoint,
    CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use dense::DenseLstmConfig;
pub use train::{train, BestSnapshot, EpochStats, TrainConfig, TrainState, Trainer};

use crate::encoder::{FeatureVector, Label};
use crate::numerics::{
    cross_entropy_indices, grad_check, softmax_rows, Coords, GradBuffer, GradCheckReport, NumericsError, ParamSet,
    Parameter, Prng, Tensor,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("labels need a 2-class model, this one has {0} classes")]
    Classes(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Architecture and initialization seed of a classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelConfig {
    DenseLstm(DenseLstmConfig),
    Baseline(BaselineConfig),
}

impl ModelConfig {
    /// Short name used in reports: `denselstm`, `dnn`, `rnn` or `lstm`.
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::DenseLstm(_) => "denselstm",
            ModelConfig::Baseline(b) => b.kind.as_str(),
        }
    }

    /// Default configuration for a report name.
    pub fn from_name(name: &str, seed: u64) -> Option<Self> {
        let baseline = |kind| Some(ModelConfig::Baseline(BaselineConfig::new(kind, 2, seed)));
        match name {
            "denselstm" => Some(ModelConfig::DenseLstm(DenseLstmConfig {
                seed,
                ..DenseLstmConfig::default()
            })),
            "dnn" => baseline(BaselineKind::Dnn),
            "rnn" => baseline(BaselineKind::Rnn),
            "lstm" => baseline(BaselineKind::Lstm),
            _ => None,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelConfig::DenseLstm(c) => c.classes,
            ModelConfig::Baseline(c) => c.classes,
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            ModelConfig::DenseLstm(c) => c.input_len,
            ModelConfig::Baseline(c) => c.input_len,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelConfig::DenseLstm(c) => c.seed,
            ModelConfig::Baseline(c) => c.seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            ModelConfig::DenseLstm(c) => c.seed = seed,
            ModelConfig::Baseline(c) => c.seed = seed,
        }
        self
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
enum Arch {
    Dense(dense::DenseNet),
    Dnn(baselines::Dnn),
    Rnn(baselines::Rnn),
    Lstm(baselines::LstmBaseline),
}

enum Tape {
    Dense(dense::DenseTape),
    Dnn(baselines::DnnTape),
    Rnn(baselines::RnnTape),
    Lstm(baselines::LstmBaselineTape),
}

impl Arch {
    fn forward(&self, p: &[Parameter], x: &[f64], batch: usize, rng: Option<&mut Prng>) -> (Vec<f64>, Tape) {
        match self {
            Arch::Dense(a) => {
                let (y, t) = a.forward(p, x, batch, rng);
                (y, Tape::Dense(t))
            }
            Arch::Dnn(a) => {
                let (y, t) = a.forward(p, x, batch);
                (y, Tape::Dnn(t))
            }
            Arch::Rnn(a) => {
                let (y, t) = a.forward(p, x, batch);
                (y, Tape::Rnn(t))
            }
            Arch::Lstm(a) => {
                let (y, t) = a.forward(p, x, batch);
                (y, Tape::Lstm(t))
            }
        }
    }

    fn backward(&self, p: &[Parameter], g: &mut GradBuffer, tape: &Tape, dlogits: &[f64], batch: usize) {
        match (self, tape) {
            (Arch::Dense(a), Tape::Dense(t)) => a.backward(p, g, t, dlogits, batch),
            (Arch::Dnn(a), Tape::Dnn(t)) => a.backward(p, g, t, dlogits, batch),
            (Arch::Rnn(a), Tape::Rnn(t)) => a.backward(p, g, t, dlogits, batch),
            (Arch::Lstm(a), Tape::Lstm(t)) => a.backward(p, g, t, dlogits, batch),
            _ => unreachable!("tape from a different architecture"),
        }
    }

    /// Mean cross-entropy with dropout off.
    fn loss(&self, p: &[Parameter], x: &[f64], targets: &[usize], classes: usize) -> f64 {
        let (logits, _) = self.forward(p, x, targets.len(), None);
        cross_entropy_indices(&logits, classes, targets).0 / targets.len() as f64
    }
}

/// Rows processed per inference call.
const INFERENCE_CHUNK: usize = 64;

/// A classifier mapping `batch × input_len` features to class logits.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    arch: Arch,
    params: ParamSet,
}

impl Model {
    /// Builds and initializes from `config.seed`: Xavier-uniform weights, zero
    /// biases, forget-gate biases at +1.
    pub fn build(config: ModelConfig) -> Result<Self, ModelError> {
        let mut params = ParamSet::new();
        let mut rng = Prng::new(config.seed());
        let arch = match &config {
            ModelConfig::DenseLstm(c) => Arch::Dense(dense::DenseNet::build(&mut params, c, &mut rng)?),
            ModelConfig::Baseline(c) => {
                c.validate()?;
                match c.kind {
                    BaselineKind::Dnn => Arch::Dnn(baselines::Dnn::build(&mut params, c, &mut rng)?),
                    BaselineKind::Rnn => Arch::Rnn(baselines::Rnn::build(&mut params, c, &mut rng)?),
                    BaselineKind::Lstm => Arch::Lstm(baselines::LstmBaseline::build(&mut params, c, &mut rng)?),
                }
            }
        };
        Ok(Self { config, arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn name(&self) -> &'static str {
        self.config.name()
    }

    pub fn classes(&self) -> usize {
        self.config.classes()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn check_input(&self, x: &Tensor) -> Result<usize, ModelError> {
        let (rows, cols) = x.dims2("model input")?;
        if cols != self.config.input_len() || rows == 0 {
            return Err(ModelError::Input(format!(
                "expected a non-empty batch × {} matrix, got {:?}",
                self.config.input_len(),
                x.shape()
            )));
        }
        Ok(rows)
    }

    /// Class logits for `x: [batch × input_len]`. Dropout is active only when
    /// an `rng` is supplied.
    pub fn forward(&self, x: &Tensor, rng: Option<&mut Prng>) -> Result<Tensor, ModelError> {
        let batch = self.check_input(x)?;
        let (logits, _) = self.arch.forward(self.params.as_slice(), x.data(), batch, rng);
        Ok(Tensor::from_raw(vec![batch, self.classes()], logits))
    }

    /// Inference-mode class probabilities, evaluated in fixed-size chunks.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let batch = self.check_input(x)?;
        let n = self.config.input_len();
        let mut out = Vec::with_capacity(batch * self.classes());
        for chunk in x.data().chunks(INFERENCE_CHUNK * n) {
            let (mut logits, _) = self.arch.forward(self.params.as_slice(), chunk, chunk.len() / n, None);
            softmax_rows(&mut logits, self.classes());
            out.extend(logits);
        }
        Ok(Tensor::from_raw(vec![batch, self.classes()], out))
    }

    /// Label and class probabilities; an exact tie resolves to `normal`.
    pub fn predict(&self, fv: &FeatureVector) -> Result<(Label, Vec<f64>), ModelError> {
        let x = Tensor::from_raw(vec![1, fv.bits().len()], fv.to_f64().to_vec());
        let probs = self.predict_proba(&x)?.into_data();
        Ok((decide(&probs)?, probs))
    }

    /// Labels and probabilities for many vectors at once.
    pub fn predict_many(&self, fvs: &[FeatureVector]) -> Result<Vec<(Label, Vec<f64>)>, ModelError> {
        if fvs.is_empty() {
            return Ok(Vec::new());
        }
        let data = fvs.iter().flat_map(|f| f.to_f64()).collect();
        let x = Tensor::from_raw(vec![fvs.len(), self.config.input_len()], data);
        let probs = self.predict_proba(&x)?;
        (0..fvs.len())
            .map(|i| {
                let p = probs.row(i).to_vec();
                Ok((decide(&p)?, p))
            })
            .collect()
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(
        &self,
        x: &Tensor,
        targets: &[usize],
        rng: Option<&mut Prng>,
    ) -> Result<(f64, GradBuffer), ModelError> {
        let batch = self.check_input(x)?;
        if targets.len() != batch || targets.iter().any(|&t| t >= self.classes()) {
            return Err(ModelError::Input(format!("{} targets for {batch} rows", targets.len())));
        }
        let p = self.params.as_slice();
        let (logits, tape) = self.arch.forward(p, x.data(), batch, rng);
        let (loss, mut dlogits) = cross_entropy_indices(&logits, self.classes(), targets);
        let inv = 1.0 / batch as f64;
        dlogits.iter_mut().for_each(|d| *d *= inv);
        let mut grads = self.params.grad_buffer();
        self.arch.backward(p, &mut grads, &tape, &dlogits, batch);
        Ok((loss * inv, grads))
    }

    /// Compares backpropagated gradients of the dropout-free mean loss with
    /// central differences. Stored gradients are overwritten.
    pub fn gradient_check(
        &mut self,
        x: &Tensor,
        targets: &[usize],
        coords: Coords,
        tolerance: f64,
    ) -> Result<GradCheckReport, ModelError> {
        let (_, grads) = self.loss_and_grad(x, targets, None)?;
        self.params.zero_grads();
        self.params.accumulate(&grads);
        let classes = self.classes();
        let Model { arch, params, .. } = self;
        Ok(grad_check(params.as_mut_slice(), coords, tolerance, |p| {
            arch.loss(p, x.data(), targets, classes)
        }))
    }
}

/// Argmax with ties going to the lower class index.
fn decide(probs: &[f64]) -> Result<Label, ModelError> {
    if probs.len() != 2 {
        return Err(ModelError::Classes(probs.len()));
    }
    Ok(if probs[1] > probs[0] {
        Label::Suspected
    } else {
        Label::Normal
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_resolve_to_normal() {
        assert_eq!(decide(&[0.5, 0.5]).unwrap(), Label::Normal);
        assert_eq!(decide(&[0.9, 0.1]).unwrap(), Label::Normal);
        assert_eq!(decide(&[0.4, 0.6]).unwrap(), Label::Suspected);
        assert!(decide(&[0.2, 0.3, 0.5]).is_err());
    }
}
