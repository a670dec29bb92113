//! End-to-end supervised baseline: encoder + sigmoid head trained with
//! binary cross-entropy, Adam, cosine annealing and early stopping on a
//! validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_tensor, Encoder, EncoderConfig, Module, SupervisedHead};
use crate::error::{Error, Result};
use crate::numcore::{clip_grad_norm, Adam, CosineSchedule, EarlyStopper, StopDecision, Tape, Tensor, Var};

const BCE_CLAMP: f64 = 1e-12;

/// Mean binary cross-entropy of probabilities `p` (any shape) against
/// labels `y` (same number of elements).
pub fn bce_loss(tape: &mut Tape, p: Var, y: Var) -> Result<Var> {
    let n = tape.value(p).numel();
    let y = tape.reshape(y, tape.shape(p).to_vec().as_slice())?;
    let p_c = tape.clamp(p, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let log_p = tape.log(p_c);
    let q = tape.affine(p, -1.0, 1.0);
    let q_c = tape.clamp(q, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let log_q = tape.log(q_c);
    let one_minus_y = tape.affine(y, -1.0, 1.0);
    let a = tape.mul(y, log_p)?;
    let b = tape.mul(one_minus_y, log_q)?;
    let s = tape.add(a, b)?;
    let total = tape.sum(s);
    Ok(tape.scale(total, -1.0 / n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRecipe {
    pub lr: f64,
    pub eta_min: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Global-norm gradient clipping; disabled when `None`.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            eta_min: 0.0,
            max_epochs: 30,
            batch_size: 32,
            patience: 5,
            clip_norm: None,
            seed: 0,
        }
    }
}

/// Segments with binary labels, borrowed from a corpus.
#[derive(Debug, Clone, Default)]
pub struct LabeledSegments<'a> {
    pub signals: Vec<&'a [f64]>,
    pub labels: Vec<u8>,
}

impl LabeledSegments<'_> {
    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct SupervisedModel {
    pub encoder: Encoder,
    pub head: SupervisedHead,
}

impl SupervisedModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        let encoder = Encoder::new(config, seed)?;
        let head = SupervisedHead::new(encoder.embedding_dim(), seed.wrapping_add(1));
        Ok(Self { encoder, head })
    }

    fn forward(&self, tape: &mut Tape, enc_vars: &[Var], head_vars: &[Var], x: Var) -> Result<Var> {
        let out = self.encoder.forward(tape, enc_vars, x)?;
        self.head.forward(tape, head_vars, out.embedding)
    }

    pub fn predict_proba(&self, signals: &[&[f64]]) -> Result<Vec<f64>> {
        let mut probs = Vec::with_capacity(signals.len());
        for chunk in signals.chunks(64) {
            let mut tape = Tape::new();
            let ev = self.encoder.bind_frozen(&mut tape);
            let hv = self.head.bind_frozen(&mut tape);
            let x = tape.constant(batch_tensor(chunk)?);
            let p = self.forward(&mut tape, &ev, &hv, x)?;
            probs.extend_from_slice(tape.value(p).data());
        }
        Ok(probs)
    }

    fn mean_loss(&self, data: &LabeledSegments<'_>) -> Result<f64> {
        let mut total = 0.0;
        for (sig, lab) in data.signals.chunks(64).zip(data.labels.chunks(64)) {
            let mut tape = Tape::new();
            let ev = self.encoder.bind_frozen(&mut tape);
            let hv = self.head.bind_frozen(&mut tape);
            let x = tape.constant(batch_tensor(sig)?);
            let p = self.forward(&mut tape, &ev, &hv, x)?;
            let y = tape.constant(labels_tensor(lab));
            let l = bce_loss(&mut tape, p, y)?;
            total += tape.value(l).item() * sig.len() as f64;
        }
        Ok(total / data.len().max(1) as f64)
    }
}

fn labels_tensor(labels: &[u8]) -> Tensor {
    Tensor::vector(labels.iter().map(|&l| f64::from(l)).collect())
}

fn check_two_classes(data: &LabeledSegments<'_>, what: &str) -> Result<()> {
    let pos = data.labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == data.len() {
        return Err(Error::config(format!(
            "{what} set must contain both classes ({pos} positive of {})",
            data.len()
        )));
    }
    Ok(())
}

/// Train encoder and head end to end; returns the parameters from the epoch
/// with the lowest validation loss.
pub fn train_supervised(
    train: &LabeledSegments<'_>,
    val: &LabeledSegments<'_>,
    config: &EncoderConfig,
    recipe: &TrainRecipe,
) -> Result<(SupervisedModel, TrainHistory)> {
    check_two_classes(train, "training")?;
    if val.is_empty() {
        return Err(Error::config("validation set is empty"));
    }
    if recipe.batch_size == 0 || recipe.max_epochs == 0 {
        return Err(Error::config("batch size and epoch count must be positive"));
    }
    let mut model = SupervisedModel::new(config.clone(), recipe.seed)?;
    let batches_per_epoch = train.len().div_ceil(recipe.batch_size);
    let schedule = CosineSchedule::new(
        recipe.lr,
        recipe.eta_min,
        (batches_per_epoch * recipe.max_epochs) as u64,
    )?;
    let mut adam = {
        let all: Vec<&Tensor> = model.encoder.params().iter().chain(model.head.params()).collect();
        Adam::new(&all)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed ^ 0x5eed_0001);
    let mut stopper = EarlyStopper::new(recipe.patience);
    let mut best = model.clone();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;

    for _epoch in 0..recipe.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(recipe.batch_size) {
            let signals: Vec<&[f64]> = idx.iter().map(|&i| train.signals[i]).collect();
            let labels: Vec<u8> = idx.iter().map(|&i| train.labels[i]).collect();
            let mut tape = Tape::new();
            let ev = model.encoder.bind(&mut tape);
            let hv = model.head.bind(&mut tape);
            let x = tape.constant(batch_tensor(&signals)?);
            let p = model.forward(&mut tape, &ev, &hv, x)?;
            let y = tape.constant(labels_tensor(&labels));
            let loss = bce_loss(&mut tape, p, y)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Training {
                    step,
                    message: "non-finite supervised loss".into(),
                });
            }
            epoch_loss += lv * idx.len() as f64;
            let mut grads = tape.backward(loss)?;
            let mut gs: Vec<Tensor> = ev
                .iter()
                .chain(&hv)
                .map(|v| grads.take_or_zeros(*v, tape.shape(*v)))
                .collect();
            if let Some(max) = recipe.clip_norm {
                clip_grad_norm(&mut gs, max);
            }
            let mut params: Vec<&mut Tensor> = model
                .encoder
                .params_mut()
                .iter_mut()
                .chain(model.head.params_mut().iter_mut())
                .collect();
            adam.step(&mut params, &gs, schedule.lr(step))?;
            step += 1;
        }
        history.train_losses.push(epoch_loss / train.len() as f64);
        let val_loss = model.mean_loss(val)?;
        history.val_losses.push(val_loss);
        let decision = stopper.update(val_loss);
        if stopper.improved() {
            best = model.clone();
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    Ok((best, history))
}
