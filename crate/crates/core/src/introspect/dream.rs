use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::IntrospectError;
use crate::engine::{Tape, Tensor};
use crate::nn::{record_prefix, LayerKind, Mode, ModelError, ModelSpec, ModelState};
use crate::rng;
use crate::synth::{IQFrame, FRAME_LEN};

pub const DEFAULT_DREAM_STEPS: usize = 200;
pub const DEFAULT_STEP_SIZE: f64 = 0.1;
/// Standard deviation of each I and Q sample of the starting frame.
pub const INITIAL_SIGMA: f64 = 0.5;
/// Backtracking gives up once the step shrinks below this.
const MIN_STEP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DreamOptions {
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for DreamOptions {
    fn default() -> Self {
        DreamOptions {
            steps: DEFAULT_DREAM_STEPS,
            step_size: DEFAULT_STEP_SIZE,
            seed: 0,
        }
    }
}

/// Input synthesized to excite one feature map.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DreamResult {
    pub frame: IQFrame,
    /// Objective before the first step and after each step; `steps + 1` long.
    pub trace: Vec<f64>,
    pub layer: usize,
    pub filter: usize,
    pub step_size: f64,
    pub steps: usize,
    pub seed: u64,
    /// The objective had zero gradient at the start (a dead filter).
    pub degenerate: bool,
}

impl DreamResult {
    pub fn initial(&self) -> f64 {
        self.trace[0]
    }

    pub fn last(&self) -> f64 {
        *self.trace.last().expect("non-empty trace")
    }
}

fn to_frame(x: &[f64]) -> IQFrame {
    let (i, q) = x.split_at(FRAME_LEN);
    IQFrame::new(
        i.iter().map(|&v| v as f32).collect(),
        q.iter().map(|&v| v as f32).collect(),
    )
    .expect("finite frame")
}

fn renormalize(x: &mut [f64]) {
    let p = x.iter().map(|v| v * v).sum::<f64>() / FRAME_LEN as f64;
    if p > 0.0 {
        let s = 1.0 / p.sqrt();
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// Objective and its input gradient for a `[I; Q]` frame.
fn objective(
    spec: &ModelSpec,
    params: &[Tensor<f64>],
    layer: usize,
    filter: usize,
    x: &[f64],
) -> Result<(f64, Vec<f64>), IntrospectError> {
    let mut tape = Tape::<f64>::new();
    let batch = Tensor::new([1, 2, FRAME_LEN], x.to_vec())?;
    // inference mode never draws from this
    let mut unused = rng::stream(0, "dropout", &[]);
    let pass = record_prefix(&mut tape, spec, params, batch, layer, Mode::Infer, &mut unused)?;
    let mut out = pass.outputs[layer];
    if matches!(spec.layers[layer].kind, LayerKind::Conv1d { .. }) {
        out = tape.relu(out)?;
    }
    let obj = tape.channel_mean(out, filter)?;
    let value = tape.value(obj).item();
    tape.backward(obj)?;
    let grad = tape
        .grad(pass.input)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);
    Ok((value, grad))
}

/// Gradient ascent on the input for the mean activation of one feature map.
///
/// Conv outputs pass through a ReLU first. Each step moves along the
/// L2-normalized gradient and renormalizes the frame to unit power; a step
/// that lowers the objective is undone and the step size halved, so the
/// final objective is never below the initial one.
pub fn activation_maximize(
    spec: &ModelSpec,
    state: &ModelState<f32>,
    layer: usize,
    filter: usize,
    opts: &DreamOptions,
) -> Result<DreamResult, IntrospectError> {
    if !state.matches(spec) {
        return Err(ModelError::StateMismatch.into());
    }
    let shape = spec.output_shape(layer).map_err(|e| IntrospectError::Target {
        layer,
        detail: e.to_string(),
    })?;
    match shape {
        crate::nn::ActShape::Seq { channels, .. } if filter < channels => {}
        crate::nn::ActShape::Seq { channels, .. } => {
            return Err(IntrospectError::Target {
                layer,
                detail: format!("filter {filter} out of range ({channels} channels)"),
            })
        }
        crate::nn::ActShape::Flat(_) => {
            return Err(IntrospectError::Target {
                layer,
                detail: "target must produce a [channels, time] feature map".into(),
            })
        }
    }
    if !(opts.step_size > 0.0 && opts.step_size.is_finite()) {
        return Err(IntrospectError::Target {
            layer,
            detail: format!("step size {} must be positive", opts.step_size),
        });
    }
    let params = state.cast::<f64>().params;
    let mut r = rng::stream(opts.seed, "dream", &[layer as u64, filter as u64]);
    let mut x: Vec<f64> = (0..2 * FRAME_LEN)
        .map(|_| INITIAL_SIGMA * r.sample::<f64, _>(StandardNormal))
        .collect();

    let (mut value, mut grad) = objective(spec, &params, layer, filter, &x)?;
    let mut trace = Vec::with_capacity(opts.steps + 1);
    trace.push(value);
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let degenerate = norm(&grad) == 0.0;
    let mut step = opts.step_size;
    for _ in 0..opts.steps {
        let gn = norm(&grad);
        if degenerate || gn == 0.0 || step < MIN_STEP {
            trace.push(value);
            continue;
        }
        let mut cand: Vec<f64> = x.iter().zip(&grad).map(|(v, g)| v + step * g / gn).collect();
        renormalize(&mut cand);
        let (cv, cg) = objective(spec, &params, layer, filter, &cand)?;
        if cv >= value {
            x = cand;
            value = cv;
            grad = cg;
        } else {
            step *= 0.5;
        }
        trace.push(value);
    }
    Ok(DreamResult {
        frame: to_frame(&x),
        trace,
        layer,
        filter,
        step_size: opts.step_size,
        steps: opts.steps,
        seed: opts.seed,
        degenerate,
    })
}
