//! SGD with momentum, the step learning-rate schedule, early stopping on
//! validation error and the metrics CSV.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::data::{make_batches, PairedDataset, Sample, Split};
use crate::error::{Error, Result};
use crate::nnops::{softmax_xent, Mode};
use crate::tensor::{Scalar, Tensor};
use crate::zhunet::{ActivationMode, Gradients, ModelConfig, ParamKind, ZhuNet};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a new best validation error.
    pub patience: usize,
    pub seed: u64,
    pub freeze_srm: bool,
    pub activation_mode: ActivationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.005,
            lr_decay_epochs: vec![50, 150, 250],
            lr_decay_factor: 5.0,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 16,
            max_epochs: 400,
            patience: 40,
            seed: 0,
            freeze_srm: false,
            activation_mode: ActivationMode::Relu,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad(format!("lr_decay_factor must be positive, got {}", self.lr_decay_factor));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return bad(format!("batch_size must be a positive even number, got {}", self.batch_size));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return bad("max_epochs and patience must be positive".into());
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("lr_decay_epochs must be strictly increasing, got {:?}", self.lr_decay_epochs));
        }
        if self.lr_decay_epochs.last().is_some_and(|&e| e >= self.max_epochs) {
            return bad(format!(
                "lr_decay_epochs {:?} must all be below max_epochs {}",
                self.lr_decay_epochs, self.max_epochs
            ));
        }
        Ok(())
    }

    /// Architecture for a fresh model trained under this config.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            activation: self.activation_mode,
            trainable_srm: !self.freeze_srm,
            seed: self.seed,
            ..ModelConfig::default()
        }
    }
}

/// `lr0 / factor^k` where `k` counts decay epochs at or before `epoch`
/// (epochs are 0-based).
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = cfg.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.lr0 / cfg.lr_decay_factor.powi(k as i32)
}

/// Momentum buffers keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SgdState<T: Scalar> {
    pub velocity: Gradients<T>,
}

/// `v <- momentum * v + (g + weight_decay * p); p <- p - lr * v`.
pub fn momentum_update<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grad.shape() != param.shape() || velocity.shape() != param.shape() {
        return Err(Error::ContractViolation(format!(
            "sgd shapes disagree: param {:?}, grad {:?}, velocity {:?}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    let (lr, m, wd) = (T::from_f64_lossy(lr), T::from_f64_lossy(momentum), T::from_f64_lossy(weight_decay));
    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = m * *v + (g + wd * *p);
        *p -= lr * *v;
    }
    Ok(())
}

/// One optimizer step over every trainable tensor of `model`. Preprocessing
/// kernels take a plain gradient step (no momentum, no weight decay) and are
/// left alone when frozen.
pub fn sgd_step<T: Scalar>(
    model: &mut ZhuNet<T>,
    grads: &Gradients<T>,
    state: &mut SgdState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let trainable_srm = model.preprocessing.trainable;
    let mut used = 0;
    for (name, kind, param) in model.named_tensors_mut() {
        if !kind.is_trained() || (kind == ParamKind::Preprocessing && !trainable_srm) {
            continue;
        }
        let grad = grads
            .get(&name)
            .ok_or_else(|| Error::ContractViolation(format!("no gradient for parameter `{name}`")))?;
        used += 1;
        if kind == ParamKind::Preprocessing {
            if grad.shape() != param.shape() {
                return Err(Error::ContractViolation(format!("gradient shape mismatch for `{name}`")));
            }
            crate::srm::descend(param, grad, lr);
            continue;
        }
        let v = match state.velocity.get_mut(&name) {
            Some(v) => v,
            None => state.velocity.entry(name.clone()).or_insert(Tensor::zeros(param.shape())?),
        };
        momentum_update(param, grad, v, lr, cfg.momentum, cfg.weight_decay)?;
    }
    if used != grads.len() {
        return Err(Error::ContractViolation(format!(
            "{} gradients supplied for {used} trainable parameters",
            grads.len()
        )));
    }
    Ok(())
}

/// Fraction of misclassified images given `[N,2]` logits. Ties go to cover.
pub fn error_rate_from_logits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    Ok(count_errors(logits, labels)? as f64 / labels.len().max(1) as f64)
}

fn count_errors<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    if logits.shape() != [labels.len(), 2] {
        return Err(Error::InvalidShape(format!(
            "expected logits [{}, 2], got {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    Ok(logits
        .data()
        .chunks_exact(2)
        .zip(labels)
        .filter(|(l, &y)| usize::from(l[1] > l[0]) != y)
        .count())
}

/// Pairs per evaluation forward pass.
const EVAL_PAIRS: usize = 16;

/// Eval-mode error rate over the cover and stego images of `split`.
pub fn evaluate<T: Scalar>(model: &ZhuNet<T>, dataset: &PairedDataset, split: Split) -> Result<f64> {
    let samples = dataset.samples(split);
    if samples.is_empty() {
        return Err(Error::input("evaluate", format!("{split} split is empty")));
    }
    let chunk_errors = |chunk: &[Sample]| -> Result<usize> {
        let batch = dataset.assemble::<T>(chunk)?;
        count_errors(&model.predict(&batch.images)?, &batch.labels)
    };
    #[cfg(feature = "parallel")]
    let errors: usize = {
        use rayon::prelude::*;
        samples.par_chunks(EVAL_PAIRS).map(chunk_errors).collect::<Result<Vec<_>>>()?.into_iter().sum()
    };
    #[cfg(not(feature = "parallel"))]
    let errors: usize = samples.chunks(EVAL_PAIRS).map(chunk_errors).sum::<Result<usize>>()?;
    Ok(errors as f64 / (2 * samples.len()) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_error: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState<T: Scalar> {
    /// Number of completed epochs.
    pub epoch: usize,
    pub sgd: SgdState<T>,
    pub best_val_error: f64,
    pub best_epoch: usize,
    /// `ZNET` bytes of the model at its best validation error.
    pub best_checkpoint: Vec<u8>,
    pub history: Vec<EpochRecord>,
}

/// Trains `model` in place and finally restores its best-validation weights.
/// `on_epoch` sees every record as soon as the epoch finishes; returning an
/// error aborts the run.
pub fn train_loop<T: Scalar>(
    model: &mut ZhuNet<T>,
    dataset: &PairedDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainState<T>> {
    cfg.validate()?;
    let train = dataset.samples(Split::Train);
    if train.len() < cfg.batch_size / 2 {
        return Err(Error::input(
            "train",
            format!("training split has {} pairs, fewer than one batch of {}", train.len(), cfg.batch_size / 2),
        ));
    }
    if dataset.split_len(Split::Validation) == 0 {
        return Err(Error::input("train", "validation split is empty"));
    }
    model.set_srm_trainable(!cfg.freeze_srm);
    let mut shuffle_seeds = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546_464c_4521);
    let mut state = TrainState {
        epoch: 0,
        sgd: SgdState::default(),
        best_val_error: f64::INFINITY,
        best_epoch: 0,
        best_checkpoint: Vec::new(),
        history: Vec::new(),
    };
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, cfg);
        let batches = make_batches(&train, cfg.batch_size, shuffle_seeds.random())?;
        let mut loss_sum = 0.0;
        for (b, samples) in batches.iter().enumerate() {
            let batch = dataset.assemble::<T>(samples)?;
            let logits = model.forward(&batch.images, Mode::Train)?;
            let (loss, grad) = softmax_xent(&logits, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            let grads = model.backward(&grad)?;
            sgd_step(model, &grads, &mut state.sgd, lr, cfg)?;
            loss_sum += loss;
        }
        let val_error = evaluate(model, dataset, Split::Validation)?;
        let record = EpochRecord { epoch, lr, train_loss: loss_sum / batches.len() as f64, val_error };
        state.history.push(record);
        state.epoch = epoch + 1;
        on_epoch(&record)?;
        if val_error < state.best_val_error {
            state.best_val_error = val_error;
            state.best_epoch = epoch;
            state.best_checkpoint = checkpoint::to_bytes(model)?;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    *model = checkpoint::from_bytes(&state.best_checkpoint)?;
    Ok(state)
}

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,val_error";

/// Per-epoch metrics CSV; each row is written with a single `write_all`.
pub struct MetricsCsv {
    file: File,
}

impl MetricsCsv {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = File::create(&path)?;
        writeln!(file, "{METRICS_HEADER}")?;
        file.sync_data()?;
        Ok(Self { file: OpenOptions::new().append(true).open(path)? })
    }

    pub fn append(&mut self, r: &EpochRecord) -> Result<()> {
        self.file.write_all(format_metrics_row(r).as_bytes())?;
        Ok(self.file.flush()?)
    }
}

pub fn format_metrics_row(r: &EpochRecord) -> String {
    format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, r.val_error)
}
