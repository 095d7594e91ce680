use rand::Rng;
use thiserror::Error;

use super::spec::{LayerKind, ModelSpec, Source, SpecError};
use super::state::{Mode, ModelState};
use crate::engine::{softmax, EngineError, Real, Tape, Tensor, Var};
use crate::rng;
use crate::synth::{IQFrame, FRAME_LEN};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("model state does not match the spec's parameter shapes")]
    StateMismatch,
    #[error("layer {index} ({name}): {source}")]
    Layer {
        index: usize,
        name: String,
        source: EngineError,
    },
    #[error("model input: {0}")]
    Input(EngineError),
}

/// Handles produced by recording a model on a tape.
pub struct ForwardPass {
    pub input: Var,
    pub params: Vec<Var>,
    /// One handle per recorded layer.
    pub outputs: Vec<Var>,
}

impl ForwardPass {
    /// Logits of the softmax head (the last layer).
    pub fn logits(&self) -> Var {
        *self.outputs.last().expect("at least one layer")
    }
}

/// Stacks frames into a `[B, 2, 128]` tensor.
pub fn frames_to_batch<T: Real>(frames: &[&IQFrame]) -> Tensor<T> {
    let mut data = Vec::with_capacity(frames.len() * 2 * FRAME_LEN);
    for f in frames {
        data.extend(f.i().iter().chain(f.q()).map(|&v| T::from_f64(v as f64)));
    }
    Tensor::new([frames.len(), 2, FRAME_LEN], data).expect("non-empty batch")
}

/// Records layers `0..=last` of `spec` on `tape`.
///
/// The softmax head records its logits; the softmax itself is applied by the
/// loss or by [`predict_proba`].
pub fn record_prefix<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    spec: &ModelSpec,
    params: &[Tensor<T>],
    batch: Tensor<T>,
    last: usize,
    mode: Mode,
    dropout_rng: &mut R,
) -> Result<ForwardPass, ModelError> {
    spec.check()?;
    let offsets = ModelState::<T>::layer_offsets(spec)?;
    let expected: usize = spec.param_shapes()?.iter().map(|s| s.len()).sum();
    if expected != params.len() {
        return Err(ModelError::StateMismatch);
    }
    let input = tape.leaf(batch).map_err(ModelError::Input)?;
    let shape = tape.value(input).shape().to_vec();
    if shape.len() != 3 || shape[1] != spec.input_channels || shape[2] != spec.input_len {
        return Err(ModelError::Input(EngineError::Shape {
            op: "model input",
            detail: format!(
                "expected [B, {}, {}], got {shape:?}",
                spec.input_channels, spec.input_len
            ),
        }));
    }
    let mut param_vars = Vec::with_capacity(params.len());
    for p in params {
        param_vars.push(tape.leaf(p.clone()).map_err(ModelError::Input)?);
    }

    let mut outputs: Vec<Var> = Vec::with_capacity(spec.layers.len());
    for (index, layer) in spec.layers.iter().enumerate().take(last + 1) {
        let src = |s: &Source| match *s {
            Source::Input => input,
            Source::Layer(j) => outputs[j],
        };
        let ins: Vec<Var> = layer.inputs.iter().map(src).collect();
        let p = &param_vars[offsets[index]..];
        let out = record_layer(tape, &layer.kind, &ins, p, mode, dropout_rng).map_err(|source| {
            ModelError::Layer {
                index,
                name: layer.name.clone(),
                source,
            }
        })?;
        outputs.push(out);
    }
    Ok(ForwardPass {
        input,
        params: param_vars,
        outputs,
    })
}

/// Records the whole model; see [`record_prefix`].
pub fn record_forward<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    spec: &ModelSpec,
    params: &[Tensor<T>],
    batch: Tensor<T>,
    mode: Mode,
    dropout_rng: &mut R,
) -> Result<ForwardPass, ModelError> {
    let last = spec.layers.len().saturating_sub(1);
    record_prefix(tape, spec, params, batch, last, mode, dropout_rng)
}

fn flat<T: Real>(tape: &mut Tape<T>, x: Var) -> crate::engine::Result<Var> {
    if tape.value(x).rank() == 2 {
        Ok(x)
    } else {
        tape.flatten(x)
    }
}

fn record_layer<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    kind: &LayerKind,
    ins: &[Var],
    p: &[Var],
    mode: Mode,
    rng: &mut R,
) -> crate::engine::Result<Var> {
    match *kind {
        LayerKind::Conv1d { .. } => tape.conv1d(ins[0], p[0], p[1]),
        LayerKind::Dense { .. } | LayerKind::SoftmaxHead { .. } => {
            let x = flat(tape, ins[0])?;
            tape.dense(x, p[0], p[1])
        }
        LayerKind::Relu => tape.relu(ins[0]),
        LayerKind::Dropout { rate } => match mode {
            Mode::Train => tape.dropout(ins[0], rate, rng),
            Mode::Infer => Ok(ins[0]),
        },
        LayerKind::Maxpool { width, stride } => tape.maxpool(ins[0], width, stride),
        LayerKind::Lstm { .. } => tape.lstm(ins[0], p[0], p[1], p[2], false),
        LayerKind::ResidualAdd => tape.add(ins[0], ins[1]),
        LayerKind::Concat => tape.concat(ins),
    }
}

/// Class probabilities for every frame, evaluated in chunks of `batch_size`.
pub fn predict_proba(
    spec: &ModelSpec,
    state: &ModelState<f32>,
    frames: &[&IQFrame],
    batch_size: usize,
) -> Result<Vec<Vec<f32>>, ModelError> {
    if !state.matches(spec) {
        return Err(ModelError::StateMismatch);
    }
    let mut out = Vec::with_capacity(frames.len());
    let mut unused = rng::stream(state.seed, "dropout", &[u64::MAX]);
    for chunk in frames.chunks(batch_size.max(1)) {
        let mut tape = Tape::<f32>::new();
        let pass = record_forward(
            &mut tape,
            spec,
            &state.params,
            frames_to_batch(chunk),
            Mode::Infer,
            &mut unused,
        )?;
        let logits = tape.value(pass.logits());
        let k = logits.shape()[1];
        for row in logits.data().chunks_exact(k) {
            let p = softmax(&Tensor::from_vec(row.to_vec())).map_err(ModelError::Input)?;
            out.push(p.into_data());
        }
    }
    Ok(out)
}

/// Class probabilities for one frame.
///
/// In [`Mode::Train`] dropout is active, drawing from the state's dropout
/// stream.
pub fn forward_model(
    spec: &ModelSpec,
    state: &ModelState<f32>,
    frame: &IQFrame,
    mode: Mode,
) -> Result<Tensor<f32>, ModelError> {
    if !state.matches(spec) {
        return Err(ModelError::StateMismatch);
    }
    let mut tape = Tape::<f32>::new();
    let mut r = rng::stream(state.seed, "dropout", &[]);
    let pass = record_forward(
        &mut tape,
        spec,
        &state.params,
        frames_to_batch(&[frame]),
        mode,
        &mut r,
    )?;
    let logits = tape.value(pass.logits()).clone();
    let k = logits.shape()[1];
    softmax(&logits.reshape([k]).map_err(ModelError::Input)?).map_err(ModelError::Input)
}
