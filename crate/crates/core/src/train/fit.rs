use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::argmax;
use super::split::split_dataset;
use super::{TrainConfig, TrainError};
use crate::engine::{adam_step, AdamState, EngineError, Tape, Tensor};
use crate::nn::{frames_to_batch, record_forward, Mode, ModelError, ModelSpec, ModelState};
use crate::rng;
use crate::synth::{DatasetBundle, IQFrame};

/// Per-epoch learning curves.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    /// Zero-based epoch whose state was returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    /// Equality ignoring wall-clock timings.
    pub fn same_curves(&self, other: &TrainHistory) -> bool {
        self.train_loss == other.train_loss
            && self.val_loss == other.val_loss
            && self.val_acc == other.val_acc
            && self.best_epoch == other.best_epoch
    }
}

fn layer_of_param(spec: &ModelSpec, param: usize) -> String {
    let offsets = ModelState::<f32>::layer_offsets(spec).unwrap_or_default();
    let idx = offsets
        .iter()
        .rposition(|&o| o <= param)
        .filter(|&i| i < spec.layers.len());
    match idx {
        Some(i) => format!("{} (#{i})", spec.layers[i].name),
        None => format!("parameter {param}"),
    }
}

fn locate(err: ModelError) -> String {
    match err {
        ModelError::Layer { index, name, .. } => format!("{name} (#{index})"),
        ModelError::Input(_) => "input".into(),
        other => other.to_string(),
    }
}

fn diverged(epoch: usize, batch: usize, layer: String) -> TrainError {
    TrainError::NonFinite { epoch, batch, layer }
}

/// One Adam update on a batch; returns the batch loss before the update.
///
/// `epoch` and `batch` only label diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    spec: &ModelSpec,
    state: &mut ModelState<f32>,
    adam: &mut AdamState<f32>,
    frames: &[&IQFrame],
    labels: &[usize],
    dropout_rng: &mut R,
    epoch: usize,
    batch: usize,
) -> Result<f64, TrainError> {
    let mut tape = Tape::<f32>::new();
    let pass = record_forward(&mut tape, spec, &state.params, frames_to_batch(frames), Mode::Train, dropout_rng)
        .map_err(|e| match e {
            e @ ModelError::Layer {
                source: EngineError::NonFinite { .. },
                ..
            } => diverged(epoch, batch, locate(e)),
            other => TrainError::Model(other),
        })?;
    let loss = tape
        .softmax_cross_entropy(pass.logits(), labels)
        .map_err(|e| match e {
            EngineError::NonFinite { .. } => diverged(epoch, batch, "loss".into()),
            other => TrainError::Engine(other),
        })?;
    let loss_value = tape.value(loss).item() as f64;
    tape.backward(loss).map_err(|e| match e {
        EngineError::NonFinite { .. } => diverged(epoch, batch, "backward pass".into()),
        other => TrainError::Engine(other),
    })?;
    let mut grads = Vec::with_capacity(pass.params.len());
    for (k, (&v, p)) in pass.params.iter().zip(&state.params).enumerate() {
        let g = tape
            .take_grad(v)
            .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()));
        if !g.is_finite() {
            return Err(diverged(epoch, batch, layer_of_param(spec, k)));
        }
        grads.push(g);
    }
    adam_step(&mut state.params, &grads, adam)?;
    if let Some(k) = state.params.iter().position(|p| !p.is_finite()) {
        return Err(diverged(epoch, batch, layer_of_param(spec, k)));
    }
    Ok(loss_value)
}

/// Mean cross-entropy and top-1 accuracy in inference mode.
pub fn evaluate_loss(
    spec: &ModelSpec,
    state: &ModelState<f32>,
    bundle: &DatasetBundle,
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    if bundle.is_empty() {
        return Err(TrainError::Config("cannot evaluate on an empty set".into()));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut unused = rng::stream(state.seed, "dropout", &[u64::MAX]);
    let idx: Vec<usize> = (0..bundle.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let frames: Vec<&IQFrame> = chunk.iter().map(|&i| &bundle.frames[i]).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| bundle.mod_labels[i]).collect();
        let mut tape = Tape::<f32>::new();
        let pass = record_forward(&mut tape, spec, &state.params, frames_to_batch(&frames), Mode::Infer, &mut unused)?;
        let logits = tape.value(pass.logits());
        let k = logits.shape()[1];
        for (row, &y) in logits.data().chunks_exact(k).zip(&labels) {
            if argmax(row) == y {
                correct += 1;
            }
        }
        let loss = tape.softmax_cross_entropy(pass.logits(), &labels)?;
        loss_sum += tape.value(loss).item() as f64 * chunk.len() as f64;
    }
    Ok((loss_sum / bundle.len() as f64, correct as f64 / bundle.len() as f64))
}

/// Trains on `train` and early-stops on `val`; returns the state with the
/// lowest validation loss.
pub fn train_on(
    spec: &ModelSpec,
    train: &DatasetBundle,
    val: &DatasetBundle,
    config: &TrainConfig,
) -> Result<(ModelState<f32>, TrainHistory), TrainError> {
    config.validate()?;
    spec.check().map_err(ModelError::from)?;
    if train.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(TrainError::Config("validation set is empty".into()));
    }
    if config.batch_size > train.len() {
        return Err(TrainError::Config(format!(
            "batch size {} exceeds training set size {}",
            config.batch_size,
            train.len()
        )));
    }
    let classes = spec.classes();
    if train.n_classes() > classes {
        return Err(TrainError::Config(format!(
            "dataset has {} classes but the model head has {classes}",
            train.n_classes()
        )));
    }

    let mut state = ModelState::<f32>::init(spec, config.seed).map_err(ModelError::from)?;
    state.mode = Mode::Train;
    let mut adam = AdamState::with_lr(&state.params, config.lr);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelState<f32>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut rng::stream(config.seed, "shuffle", &[1, epoch as u64]));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let frames: Vec<&IQFrame> = chunk.iter().map(|&i| &train.frames[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.mod_labels[i]).collect();
            let mut drop_rng = rng::stream(config.seed, "dropout", &[epoch as u64, b as u64]);
            let l = train_step(spec, &mut state, &mut adam, &frames, &labels, &mut drop_rng, epoch, b)?;
            loss_sum += l * chunk.len() as f64;
        }
        let (val_loss, val_acc) = evaluate_loss(spec, &state, val, config.batch_size)?;
        history.train_loss.push(loss_sum / train.len() as f64);
        history.val_loss.push(val_loss);
        history.val_acc.push(val_acc);
        history.epoch_seconds.push(started.elapsed().as_secs_f64());

        let improved = best.as_ref().is_none_or(|(l, _)| val_loss < *l);
        if improved {
            best = Some((val_loss, state.clone()));
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= config.patience {
            break;
        }
    }
    let (_, mut state) = best.expect("at least one epoch");
    state.mode = Mode::Infer;
    Ok((state, history))
}

/// Splits `bundle` per `config.splits` and runs [`train_on`] on the train
/// and validation parts.
pub fn train(
    spec: &ModelSpec,
    bundle: &DatasetBundle,
    config: &TrainConfig,
) -> Result<(ModelState<f32>, TrainHistory), TrainError> {
    config.validate()?;
    if bundle.is_empty() {
        return Err(TrainError::Config("dataset is empty".into()));
    }
    let s = split_dataset(bundle, config.splits, config.seed)?;
    train_on(spec, &s.train, &s.val, config)
}
